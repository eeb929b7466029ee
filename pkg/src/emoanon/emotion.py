"""Emotion hyperplanes, the emotion indicator, and latent-space compensation.

Compensation moves an anonymized embedding along the unit normal of the
predicted emotion's SVM hyperplane: ``z + alpha * n``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, DimensionError, NumericalError
from .labels import EMOTIONS, NON_NEUTRAL, Emotion

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = {Emotion.HAPPY: 35.0, Emotion.NEUTRAL: 0.0, Emotion.SAD: -35.0, Emotion.ANGRY: 35.0}


def _check_features(X, name="features") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError(f"{name} contain non-finite values")
    return X


# --------------------------------------------------------------------------
# linear SVM boundaries


@dataclass(frozen=True)
class EmotionBoundary:
    emotion: Emotion
    w: np.ndarray
    b: float
    dev_accuracy: float = float("nan")
    n: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        norm = np.linalg.norm(w)
        if not np.isfinite(norm) or norm <= 1e-10:
            raise NumericalError(f"{Emotion(self.emotion).name} boundary has degenerate weights (|w|={norm:g})")
        object.__setattr__(self, "emotion", Emotion(self.emotion))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "n", w / norm)

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.w + self.b


def train_emotion_svm(
    X,
    labels,
    target: Emotion,
    reg_C: float = 0.5,
    epochs: int = 2000,
    seed: int = 0,
    eta0: float = 0.1,
    dev: tuple | None = None,
) -> EmotionBoundary:
    """One-vs-rest linear SVM by full-batch subgradient descent.

    Minimizes ``0.5*|w|^2 + C * sum_i c_i * max(0, 1 - y_i (w.x_i + b))`` where
    the class weights ``c_i`` give each side half of the total weight
    (``0.5/n_pos`` and ``0.5/n_neg``).  Steps are ``eta0 / (1 + t)``.  The
    solver starts from zero, so ``seed`` does not influence the result; it is
    accepted so every trainer has the same call shape.

    ``dev`` is an optional ``(X_dev, labels_dev)`` pair for the reported
    accuracy; without it the accuracy is measured on the training data.
    """
    X = _check_features(X)
    labels = np.asarray(labels)
    target = Emotion(target)
    y = np.where(labels == int(target), 1.0, -1.0)
    n_pos = int(np.sum(y > 0))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError(f"{target.name} SVM needs both positive and negative examples")
    if reg_C <= 0 or eta0 <= 0 or epochs < 1:
        raise DataError("reg_C, eta0 and epochs must be positive")

    cw = np.where(y > 0, 0.5 / n_pos, 0.5 / n_neg) * reg_C
    cy = cw * y
    w = np.zeros(X.shape[1])
    b = 0.0
    for t in range(epochs):
        active = y * (X @ w + b) < 1.0
        grad_w = w - cy[active] @ X[active]
        grad_b = -np.sum(cy[active])
        eta = eta0 / (1.0 + t)
        w = w - eta * grad_w
        b = b - eta * grad_b
    if not (np.all(np.isfinite(w)) and np.isfinite(b)):
        raise NumericalError(f"{target.name} SVM diverged")

    if dev is not None:
        Xd = _check_features(dev[0], "dev features")
        yd = np.where(np.asarray(dev[1]) == int(target), 1.0, -1.0)
    else:
        Xd, yd = X, y
    acc = float(np.mean(np.where(Xd @ w + b > 0, 1.0, -1.0) == yd))
    return EmotionBoundary(target, w, b, dev_accuracy=acc)


def train_all_svms(X, labels, dev=None, **kwargs) -> dict[Emotion, EmotionBoundary]:
    return {emo: train_emotion_svm(X, labels, emo, dev=dev, **kwargs) for emo in EMOTIONS}


def directional_distance(x, boundary: EmotionBoundary):
    """Signed Euclidean distance to the hyperplane; positive on the emotion's side."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != boundary.dim:
        raise DimensionError(f"dimension mismatch: boundary {boundary.dim}, input {x.shape[-1]}")
    return x @ boundary.n + boundary.b / np.linalg.norm(boundary.w)


def compensate(z, boundary: EmotionBoundary, alpha: float) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != boundary.dim:
        raise DimensionError(f"dimension mismatch: boundary {boundary.dim}, input {z.shape[-1]}")
    if not np.isfinite(alpha):
        raise DataError("alpha must be finite")
    if alpha == 0:
        return z.copy()
    return z + alpha * boundary.n


# --------------------------------------------------------------------------
# emotion indicator: affine -> ramp -> affine -> softmax


@dataclass
class EmotionIndicator:
    W1: np.ndarray  # (hidden, d)
    b1: np.ndarray
    W2: np.ndarray  # (4, hidden)
    b2: np.ndarray
    history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise DimensionError(f"dimension mismatch: indicator {self.dim}, input {X.shape[1]}")
        P = _forward(self.params(), X)[-1]
        return P[0] if single else P

    def predict(self, X) -> np.ndarray:
        # argmax keeps the first maximum, i.e. ties go to the lower label index
        return np.argmax(np.atleast_2d(self.predict_proba(X)), axis=1)


def predict_emotion(x, ind: EmotionIndicator) -> tuple[Emotion, np.ndarray]:
    probs = ind.predict_proba(np.asarray(x, dtype=np.float64).reshape(-1))
    return Emotion(int(np.argmax(probs))), probs


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _forward(p, X):
    h_pre = X @ p["W1"].T + p["b1"]
    h = np.maximum(h_pre, 0.0)
    P = _softmax(h @ p["W2"].T + p["b2"])
    return h_pre, h, P


def indicator_loss_and_grad(params: Mapping[str, np.ndarray], X, y) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy and its gradient with respect to every parameter."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    N = X.shape[0]
    h_pre, h, P = _forward(params, X)
    loss = -np.mean(np.log(np.maximum(P[np.arange(N), y], 1e-300)))
    d_logits = P.copy()
    d_logits[np.arange(N), y] -= 1.0
    d_logits /= N
    grads = {"W2": d_logits.T @ h, "b2": d_logits.sum(axis=0)}
    d_h = (d_logits @ params["W2"]) * (h_pre > 0)
    grads["W1"] = d_h.T @ X
    grads["b1"] = d_h.sum(axis=0)
    return float(loss), grads


def init_indicator(dim: int, hidden: int, seed: int, n_classes: int = len(EMOTIONS)) -> EmotionIndicator:
    rng = np.random.Generator(np.random.PCG64(seed))
    return EmotionIndicator(
        W1=rng.standard_normal((hidden, dim)) * np.sqrt(2.0 / dim),
        b1=np.zeros(hidden),
        W2=rng.standard_normal((n_classes, hidden)) * np.sqrt(1.0 / hidden),
        b2=np.zeros(n_classes),
    )


def train_indicator(
    X_train,
    y_train,
    X_dev,
    y_dev,
    seed: int = 0,
    hidden: int = 128,
    lr: float = 0.1,
    max_epochs: int = 500,
    patience: int = 10,
    min_delta: float = 1e-5,
) -> EmotionIndicator:
    """Full-batch gradient descent on cross-entropy with early stopping on dev loss.

    Training stops once the dev loss has not improved by ``min_delta`` for
    ``patience`` consecutive epochs; the parameters with the best dev loss
    are returned.
    """
    X_train = _check_features(X_train, "train features")
    X_dev = _check_features(X_dev, "dev features")
    y_train = np.asarray(y_train, dtype=np.int64)
    y_dev = np.asarray(y_dev, dtype=np.int64)
    for name, yy in (("train", y_train), ("dev", y_dev)):
        missing = sorted(set(int(e) for e in EMOTIONS) - set(np.unique(yy).tolist()))
        if missing:
            raise DataError(f"{name} split lacks emotion classes {[Emotion(m).name for m in missing]}")

    model = init_indicator(X_train.shape[1], hidden, seed)
    params = {k: v.copy() for k, v in model.params().items()}
    best = {k: v.copy() for k, v in params.items()}
    best_loss = np.inf
    stale = 0
    history = []
    for epoch in range(max_epochs):
        loss, grads = indicator_loss_and_grad(params, X_train, y_train)
        if not np.isfinite(loss) or loss > 1e6:
            raise NumericalError(f"indicator training diverged at epoch {epoch} (loss={loss:g})")
        for k in params:
            params[k] -= lr * grads[k]
        dev_loss, _ = indicator_loss_and_grad(params, X_dev, y_dev)
        history.append((loss, dev_loss))
        if dev_loss < best_loss - min_delta:
            best_loss = dev_loss
            best = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    logger.debug("indicator stopped after %d epochs, best dev loss %.5f", len(history), best_loss)
    return EmotionIndicator(**best, history=history)


# --------------------------------------------------------------------------
# compensation


@dataclass(frozen=True)
class CompensationConfig:
    alpha: Mapping[Emotion, float] = field(default_factory=lambda: dict(DEFAULT_ALPHA))
    skip_neutral: bool = True

    def __post_init__(self):
        alpha = {Emotion(k) if not isinstance(k, str) else Emotion.parse(k): float(v) for k, v in self.alpha.items()}
        for emo in EMOTIONS:
            alpha.setdefault(emo, 0.0)
            if not np.isfinite(alpha[emo]):
                raise DataError(f"alpha for {emo.name} must be finite")
        if self.skip_neutral and alpha[Emotion.NEUTRAL] != 0:
            raise DataError("alpha for neutral must be 0 when skip_neutral is set")
        object.__setattr__(self, "alpha", alpha)

    def as_dict(self) -> dict:
        return {"alpha": {e.tag: self.alpha[e] for e in EMOTIONS}, "skip_neutral": self.skip_neutral}


def compensate_pipeline(
    x_orig,
    z_anon,
    boundaries: Mapping[Emotion, EmotionBoundary],
    ind: EmotionIndicator | None,
    cfg: CompensationConfig,
    labels=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Compensate anonymized embeddings using emotions predicted from the originals.

    Works on single vectors or row batches.  Passing ``labels`` bypasses the
    indicator (oracle-label variant).  Returns the compensated embeddings and
    the emotion chosen for each row.
    """
    x_orig = np.asarray(x_orig, dtype=np.float64)
    z_anon = np.asarray(z_anon, dtype=np.float64)
    single = z_anon.ndim == 1
    X = np.atleast_2d(x_orig)
    Z = np.atleast_2d(z_anon)
    if X.shape != Z.shape:
        raise DimensionError(f"original {X.shape} and anonymized {Z.shape} shapes differ")
    if labels is None:
        if ind is None:
            raise DataError("either an indicator or oracle labels are required")
        chosen = ind.predict(X)
    else:
        chosen = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    out = Z.copy()
    for emo in EMOTIONS:
        rows = chosen == int(emo)
        if not rows.any():
            continue
        if emo == Emotion.NEUTRAL and cfg.skip_neutral:
            continue
        if emo not in boundaries:
            raise DataError(f"no boundary for predicted emotion {emo.name}")
        out[rows] = compensate(Z[rows], boundaries[emo], cfg.alpha[emo])
    if single:
        return out[0], chosen[:1]
    return out, chosen


def per_class_recall(y_true, y_pred) -> np.ndarray:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    out = np.full(len(EMOTIONS), np.nan)
    for emo in EMOTIONS:
        m = y_true == int(emo)
        if m.any():
            out[emo] = np.mean(y_pred[m] == int(emo))
    return out


@dataclass
class CalibrationResult:
    config: CompensationConfig
    grid: list[float]
    recall: dict[Emotion, list[float]]  # per non-neutral emotion, aligned with grid
    neutral_recall: float
    baseline_uar: float

    def uar_at(self, alphas: Mapping[Emotion, int]) -> float:
        """UAR when each non-neutral emotion uses the grid entry at the given index."""
        vals = [self.recall[e][alphas[e]] for e in NON_NEUTRAL] + [self.neutral_recall]
        return float(np.mean(vals))

    def report(self) -> dict:
        table = []
        for i, a in enumerate(self.grid):
            row = {"alpha": a}
            for e in NON_NEUTRAL:
                row[f"recall_{e.tag}"] = self.recall[e][i]
            row["recall_neutral"] = self.neutral_recall
            row["uar"] = self.uar_at({e: i for e in NON_NEUTRAL})
            table.append(row)
        chosen_idx = {e: self.grid.index(self.config.alpha[e]) for e in NON_NEUTRAL}
        return {
            "grid": list(self.grid),
            "chosen_alpha": {e.tag: self.config.alpha[e] for e in EMOTIONS},
            "baseline_uar": self.baseline_uar,
            "calibrated_uar": self.uar_at(chosen_idx),
            "table": table,
        }


def _pick_alpha(grid: Sequence[float], recalls: Sequence[float]) -> float:
    # highest recall; ties go to smaller |alpha|, then to the positive sign
    order = sorted(range(len(grid)), key=lambda i: (-recalls[i], abs(grid[i]), -grid[i]))
    return float(grid[order[0]])


def calibrate_alpha(
    Z_dev,
    labels_dev,
    boundaries: Mapping[Emotion, EmotionBoundary],
    reference: EmotionIndicator,
    grid: Sequence[float],
    skip_neutral: bool = True,
) -> CalibrationResult:
    """Choose a signed alpha per non-neutral emotion maximizing that emotion's recall.

    True labels select the boundary (no indicator in the loop); the reference
    classifier scores the compensated anonymized embeddings.
    """
    grid = [float(a) for a in grid]
    if not grid:
        raise DataError("alpha grid is empty")
    if len(set(grid)) != len(grid):
        raise DataError("alpha grid has duplicate entries")
    Z_dev = _check_features(Z_dev, "dev embeddings")
    labels_dev = np.asarray(labels_dev, dtype=np.int64)
    for emo in NON_NEUTRAL:
        if not np.any(labels_dev == int(emo)):
            raise DataError(f"calibration set has no {emo.name} utterances")

    baseline = per_class_recall(labels_dev, reference.predict(Z_dev))
    present = ~np.isnan(baseline)
    recall: dict[Emotion, list[float]] = {}
    alpha = {Emotion.NEUTRAL: 0.0}
    for emo in NON_NEUTRAL:
        Ze = Z_dev[labels_dev == int(emo)]
        r = [float(np.mean(reference.predict(compensate(Ze, boundaries[emo], a)) == int(emo))) for a in grid]
        recall[emo] = r
        alpha[emo] = _pick_alpha(grid, r)
    neutral = float(baseline[Emotion.NEUTRAL]) if present[Emotion.NEUTRAL] else float("nan")
    return CalibrationResult(
        config=CompensationConfig(alpha=alpha, skip_neutral=skip_neutral),
        grid=grid,
        recall=recall,
        neutral_recall=neutral,
        baseline_uar=float(np.mean(baseline[present])),
    )


def alpha_sweep(
    Z_dev,
    labels_dev,
    boundaries: Mapping[Emotion, EmotionBoundary],
    reference: EmotionIndicator,
    magnitudes: Sequence[float],
    signs: Mapping[Emotion, float],
) -> list[float]:
    """UAR over the dev set for each shared |alpha|, applied with a fixed sign per emotion."""
    Z_dev = _check_features(Z_dev, "dev embeddings")
    labels_dev = np.asarray(labels_dev, dtype=np.int64)
    out = []
    for m in magnitudes:
        cfg = CompensationConfig(alpha={e: float(np.sign(signs[e]) or 1.0) * m for e in NON_NEUTRAL})
        Zc, _ = compensate_pipeline(Z_dev, Z_dev, boundaries, None, cfg, labels=labels_dev)
        rec = per_class_recall(labels_dev, reference.predict(Zc))
        out.append(float(np.nanmean(rec)))
    return out
