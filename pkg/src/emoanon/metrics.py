"""Verification and emotion-recognition metrics.

EER conventions: at threshold t a genuine trial is missed when its score is
``< t`` and an impostor trial is a false alarm when its score is ``>= t``.
Operating points are evaluated at every distinct pooled score plus ``+inf``;
the EER is the linear interpolation of the first segment on which the miss
rate catches up with the false-alarm rate.  If the two rates are exactly
equal over a run of thresholds, the returned threshold is the midpoint of
that run.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DegenerateInputError, DimensionError
from .labels import EMOTIONS, Emotion

logger = logging.getLogger(__name__)

ATTACKER_MODEL = "embedding-cosine-lazy"
PROTOCOLS = ("cross-speaker-impostor", "same-session-genuine")


def cosine_score(e, t) -> float:
    e = np.asarray(e, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if e.shape != t.shape:
        raise DimensionError(f"dimension mismatch: {e.shape} vs {t.shape}")
    ne, nt = np.linalg.norm(e), np.linalg.norm(t)
    if ne == 0 or nt == 0:
        raise DegenerateInputError("cannot score a zero vector")
    return float(np.clip(np.dot(e, t) / (ne * nt), -1.0, 1.0))


def cosine_scores(E, T) -> np.ndarray:
    """Row-paired cosine scores for two equally shaped batches."""
    E = np.asarray(E, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    ne = np.linalg.norm(E, axis=1)
    nt = np.linalg.norm(T, axis=1)
    if np.any(ne == 0) or np.any(nt == 0):
        raise DegenerateInputError("cannot score a zero vector")
    return np.clip(np.einsum("ij,ij->i", E, T) / (ne * nt), -1.0, 1.0)


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    p_fa: float
    p_miss: float


def _check_scores(scores, name):
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise DataError(f"{name} score list is empty")
    if np.any(np.isnan(s)):
        raise DataError(f"{name} scores contain NaN")
    return s


def operating_points(genuine, impostor):
    """Candidate thresholds and the (p_miss, p_fa) step values at each."""
    g = np.sort(_check_scores(genuine, "genuine"))
    i = np.sort(_check_scores(impostor, "impostor"))
    thr = np.append(np.unique(np.concatenate([g, i])), np.inf)
    # integer counts first, so equal rates compare equal exactly
    p_miss = np.searchsorted(g, thr, side="left") / g.size
    p_fa = (i.size - np.searchsorted(i, thr, side="left")) / i.size
    return thr, p_miss, p_fa


def eer_from_curves(thr, p_miss, p_fa) -> EerResult:
    """Crossing point of monotone step curves sampled at increasing thresholds."""
    diff = p_miss - p_fa
    k = int(np.argmax(diff >= 0))  # the last threshold (+inf) always has diff >= 0
    if diff[k] == 0:
        j = k
        while j + 1 < len(diff) and diff[j + 1] == 0:
            j += 1
        lo = thr[k - 1] if k > 0 else thr[k]
        hi = thr[j]
        if not np.isfinite(hi):
            hi = lo
        return EerResult(float(p_miss[k]), float(0.5 * (lo + hi)), float(p_fa[k]), float(p_miss[k]))
    # diff[k-1] < 0 < diff[k]; interpolate along the segment
    lam = -diff[k - 1] / (diff[k] - diff[k - 1])
    eer = p_miss[k - 1] + lam * (p_miss[k] - p_miss[k - 1])
    hi = thr[k] if np.isfinite(thr[k]) else thr[k - 1]
    theta = thr[k - 1] + lam * (hi - thr[k - 1])
    return EerResult(float(eer), float(theta), float(p_fa[k - 1] + lam * (p_fa[k] - p_fa[k - 1])), float(eer))


def compute_eer(genuine, impostor) -> EerResult:
    return eer_from_curves(*operating_points(genuine, impostor))


# --------------------------------------------------------------------------
# emotion recognition


def confusion_from_predictions(pairs: Iterable[tuple]) -> np.ndarray:
    """4x4 counts; rows are true labels, columns predictions."""
    cm = np.zeros((len(EMOTIONS), len(EMOTIONS)), dtype=np.int64)
    for true, pred in pairs:
        cm[int(true), int(pred)] += 1
    return cm


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    cm = np.zeros((len(EMOTIONS), len(EMOTIONS)), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def compute_uar(cm) -> tuple[float, np.ndarray]:
    """Unweighted average recall; classes with no support are excluded (recall NaN)."""
    cm = np.asarray(cm)
    support = cm.sum(axis=1)
    if not np.any(support > 0):
        raise DataError("confusion matrix has no samples")
    recall = np.full(cm.shape[0], np.nan)
    ok = support > 0
    recall[ok] = np.diag(cm)[ok] / support[ok]
    if not ok.all():
        logger.warning("UAR excludes classes without samples: %s", [Emotion(k).name for k in np.flatnonzero(~ok)])
    return float(np.mean(recall[ok])), recall


# --------------------------------------------------------------------------
# trials


@dataclass
class TrialSet:
    enroll: np.ndarray  # row indices
    test: np.ndarray
    is_same: np.ndarray  # bool
    protocol: str

    def __len__(self):
        return len(self.enroll)

    @property
    def n_genuine(self) -> int:
        return int(self.is_same.sum())

    @property
    def n_impostor(self) -> int:
        return int((~self.is_same).sum())

    def score(self, E, T=None) -> np.ndarray:
        """Cosine scores, enrollment rows from ``E`` and test rows from ``T`` (default ``E``)."""
        T = E if T is None else T
        return cosine_scores(np.asarray(E)[self.enroll], np.asarray(T)[self.test])


def _subsample(pairs: np.ndarray, limit: int, rng) -> np.ndarray:
    if limit is None or len(pairs) <= limit:
        return pairs
    keep = np.sort(rng.choice(len(pairs), size=limit, replace=False))
    return pairs[keep]


def build_trials(
    speakers: Sequence[str],
    protocol: str = "cross-speaker-impostor",
    max_trials: int | None = 5000,
    seed: int = 0,
    emotions: Sequence | None = None,
) -> TrialSet:
    """Enumerate unordered utterance pairs (i < j) and subsample each class deterministically.

    Genuine pairs share a speaker; under ``same-session-genuine`` they must
    also share an emotion label (the session proxy).  Impostor pairs always
    cross speakers.
    """
    if protocol not in PROTOCOLS:
        raise DataError(f"unknown trial protocol {protocol!r}")
    if max_trials is not None and max_trials < 1:
        raise DataError("max_trials must be >= 1")
    codes, spk = np.unique(np.asarray(speakers), return_inverse=True)
    if len(codes) < 2:
        raise DataError("trials need at least two speakers")
    session = spk.copy()
    if protocol == "same-session-genuine":
        if emotions is None:
            raise DataError("same-session-genuine needs emotion labels")
        session = spk * (len(EMOTIONS) + 1) + np.asarray([_emotion_code(e) for e in emotions])
    rng = np.random.Generator(np.random.PCG64(seed))
    n = len(spk)

    genuine = []
    for key in np.unique(session):
        members = np.flatnonzero(session == key)
        if len(members) >= 2:
            a, b = np.triu_indices(len(members), k=1)
            genuine.append(np.stack([members[a], members[b]], axis=1))
    if not genuine:
        raise DataError("no speaker has two utterances; no genuine trials exist")
    genuine = _subsample(np.concatenate(genuine), max_trials, rng)

    n_cross = (n * n - np.sum(np.bincount(spk) ** 2)) // 2
    if max_trials is None or n_cross <= max(4 * max_trials, 200_000):
        a, b = np.triu_indices(n, k=1)
        cross = spk[a] != spk[b]
        impostor = _subsample(np.stack([a[cross], b[cross]], axis=1), max_trials, rng)
    else:
        # too many pairs to enumerate: rejection-sample distinct cross-speaker pairs
        found: set[tuple[int, int]] = set()
        while len(found) < max_trials:
            a = rng.integers(0, n, size=2 * max_trials)
            b = rng.integers(0, n, size=2 * max_trials)
            for i, j in zip(a.tolist(), b.tolist()):
                if spk[i] != spk[j]:
                    found.add((min(i, j), max(i, j)))
                    if len(found) == max_trials:
                        break
        impostor = np.array(sorted(found), dtype=np.int64)

    pairs = np.concatenate([genuine, impostor])
    is_same = np.concatenate([np.ones(len(genuine), bool), np.zeros(len(impostor), bool)])
    return TrialSet(pairs[:, 0], pairs[:, 1], is_same, protocol)


def _emotion_code(e) -> int:
    if e is None or e == "-":
        return len(EMOTIONS)
    return int(e)


def eer_for_trials(trials: TrialSet, E, T=None) -> tuple[EerResult, np.ndarray]:
    scores = trials.score(E, T)
    return compute_eer(scores[trials.is_same], scores[~trials.is_same]), scores
