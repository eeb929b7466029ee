"""Synthetic speaker-embedding world with known ground truth.

Each utterance is ``center[speaker] + offset[emotion] + noise``.  Emotion
offsets are global (shared by all speakers) and the neutral offset is zero,
so a single separating hyperplane per emotion exists by construction.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError
from .labels import EMOTIONS, NON_NEUTRAL, Emotion

# stream tags mixed into the seed so each random component has its own stream
_CENTERS, _OFFSETS, _UTTS, _JITTER = 1, 2, 3, 4


@dataclass(frozen=True)
class WorldSpec:
    dim: int = 192
    n_speakers: int = 20
    utts_per_speaker_per_emotion: int = 50
    speaker_spread: float = 1.0
    emotion_magnitude: float = 4.0
    noise: float = 0.5
    speaker_emotion_jitter: float = 0.0
    seed: int | None = 0

    def validate(self) -> None:
        if self.dim < 8:
            raise DataError(f"world dim must be >= 8, got {self.dim}")
        if self.n_speakers < 1 or self.utts_per_speaker_per_emotion < 1:
            raise DataError("n_speakers and utts_per_speaker_per_emotion must be positive")
        for name in ("speaker_spread", "emotion_magnitude", "noise", "speaker_emotion_jitter"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be non-negative")
        if self.seed is not None and self.seed < 0:
            raise DataError("seed must be a non-negative integer")


@dataclass(frozen=True)
class WorldTruth:
    speaker_centers: np.ndarray  # (S, d)
    emotion_offsets: np.ndarray  # (4, d), rows indexed by Emotion
    spec: WorldSpec

    def contrast_direction(self, emotion: Emotion) -> np.ndarray:
        """Unit vector along ``offset[e] - mean(other offsets)``; neutral's zero offset counts."""
        emotion = Emotion(emotion)
        others = [k for k in EMOTIONS if k != emotion]
        u = self.emotion_offsets[emotion] - self.emotion_offsets[others].mean(axis=0)
        norm = np.linalg.norm(u)
        if norm == 0:
            raise DataError("contrast direction is undefined when all offsets coincide")
        return u / norm


@dataclass
class World:
    X: np.ndarray
    utt_ids: list[str]
    speakers: list[str]
    emotions: np.ndarray  # int labels, Emotion values
    truth: WorldTruth


def _emotion_offsets(spec: WorldSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, _OFFSETS])
    raw = rng.standard_normal((len(NON_NEUTRAL), spec.dim))
    # Gram-Schmidt on the three non-neutral directions
    basis = []
    for r in raw:
        for b in basis:
            r = r - (r @ b) * b
        basis.append(r / np.linalg.norm(r))
    offsets = np.zeros((len(EMOTIONS), spec.dim))
    for emo, b in zip(NON_NEUTRAL, basis):
        offsets[emo] = spec.emotion_magnitude * b
    return offsets


def gen_world(spec: WorldSpec | None = None) -> World:
    spec = spec or WorldSpec()
    spec.validate()
    if spec.seed is None:
        raise DataError("world seed is unresolved")
    d, S, n = spec.dim, spec.n_speakers, spec.utts_per_speaker_per_emotion
    centers = np.random.default_rng([spec.seed, _CENTERS]).standard_normal((S, d)) * spec.speaker_spread
    offsets = _emotion_offsets(spec)

    blocks, utt_ids, speakers, labels = [], [], [], []
    for s in range(S):
        # per-speaker stream keeps the output independent of generation order
        rng = np.random.default_rng([spec.seed, _UTTS, s])
        jitter = np.zeros_like(offsets)
        if spec.speaker_emotion_jitter > 0:
            jrng = np.random.default_rng([spec.seed, _JITTER, s])
            jitter[list(NON_NEUTRAL)] = jrng.standard_normal((len(NON_NEUTRAL), d)) * spec.speaker_emotion_jitter
        for emo in EMOTIONS:
            eps = rng.standard_normal((n, d)) * spec.noise
            blocks.append(centers[s] + offsets[emo] + jitter[emo] + eps)
            spk = f"spk{s:03d}"
            utt_ids.extend(f"{spk}_{emo.tag}_{i:04d}" for i in range(n))
            speakers.extend([spk] * n)
            labels.extend([int(emo)] * n)

    truth = WorldTruth(speaker_centers=centers, emotion_offsets=offsets, spec=spec)
    return World(
        X=np.vstack(blocks),
        utt_ids=utt_ids,
        speakers=speakers,
        emotions=np.asarray(labels, dtype=np.int64),
        truth=truth,
    )


def oracle_direction_alignment(boundary, truth: WorldTruth) -> float:
    """Cosine between a boundary's unit normal and the true contrast direction of its emotion."""
    if Emotion(boundary.emotion) == Emotion.NEUTRAL:
        raise DataError("alignment is only defined for non-neutral boundaries")
    return float(boundary.n @ truth.contrast_direction(boundary.emotion))


def spec_dict(spec: WorldSpec) -> dict:
    return asdict(spec)
