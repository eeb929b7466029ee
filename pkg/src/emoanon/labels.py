from __future__ import annotations

from enum import IntEnum


class Emotion(IntEnum):
    """Four-class emotion label; the integer value is the confusion-matrix index."""

    HAPPY = 0
    NEUTRAL = 1
    SAD = 2
    ANGRY = 3

    @classmethod
    def parse(cls, name: str) -> "Emotion":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown emotion label {name!r}") from None

    @property
    def tag(self) -> str:
        return self.name.lower()


EMOTIONS = tuple(Emotion)
NON_NEUTRAL = (Emotion.HAPPY, Emotion.SAD, Emotion.ANGRY)

# nine-way recognizer vocabulary collapsed onto the four evaluation classes
_NINE_TO_FOUR = {
    "angry": Emotion.ANGRY,
    "disgusted": Emotion.SAD,
    "fearful": Emotion.SAD,
    "sad": Emotion.SAD,
    "happy": Emotion.HAPPY,
    "surprised": Emotion.HAPPY,
    "neutral": Emotion.NEUTRAL,
    "other": Emotion.NEUTRAL,
    "unknown": Emotion.NEUTRAL,
}
NINE_CLASS_LABELS = tuple(_NINE_TO_FOUR)


def map_nine_to_four(raw: str) -> Emotion:
    try:
        return _NINE_TO_FOUR[raw.strip().lower()]
    except KeyError:
        raise ValueError(f"not a nine-class emotion label: {raw!r}") from None
