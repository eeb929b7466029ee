import pytest

from emoanon.labels import EMOTIONS, NINE_CLASS_LABELS, NON_NEUTRAL, Emotion, map_nine_to_four


def test_index_order():
    assert [e.tag for e in EMOTIONS] == ["happy", "neutral", "sad", "angry"]
    assert [int(e) for e in EMOTIONS] == [0, 1, 2, 3]
    assert Emotion.NEUTRAL not in NON_NEUTRAL


@pytest.mark.parametrize(
    "raw, expected",
    [
        ("angry", Emotion.ANGRY),
        ("disgusted", Emotion.SAD),
        ("fearful", Emotion.SAD),
        ("sad", Emotion.SAD),
        ("happy", Emotion.HAPPY),
        ("surprised", Emotion.HAPPY),
        ("neutral", Emotion.NEUTRAL),
        ("other", Emotion.NEUTRAL),
        ("unknown", Emotion.NEUTRAL),
    ],
)
def test_nine_to_four(raw, expected):
    assert map_nine_to_four(raw) == expected


def test_nine_class_table_complete():
    assert len(NINE_CLASS_LABELS) == 9
    assert {map_nine_to_four(x) for x in NINE_CLASS_LABELS} == set(EMOTIONS)


def test_parse_rejects_unknown():
    assert Emotion.parse("Sad") == Emotion.SAD
    with pytest.raises(ValueError):
        Emotion.parse("bored")
    with pytest.raises(ValueError):
        map_nine_to_four("bored")
