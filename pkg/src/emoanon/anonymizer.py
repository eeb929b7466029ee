"""Speaker anonymizers that act directly on speaker embeddings.

Modes:

* ``trained-chain`` - one reflection chain trained so that rotated embeddings
  stay speaker-discriminable (additive angular margin softmax) while being
  pushed away from their source (cosine hinge).
* ``random-chain-speaker-level`` - one random chain for every utterance.
* ``random-chain-utterance-level`` - a pool of random chains; each utterance
  picks one by hashing its own seed.
* ``selection-average`` - the mean of randomly selected external-pool
  embeddings, rescaled to their mean norm.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateInputError, DimensionError, NumericalError
from .linalg import OrthogonalChain, chain_apply, random_chain

logger = logging.getLogger(__name__)

MODES = (
    "trained-chain",
    "random-chain-speaker-level",
    "random-chain-utterance-level",
    "selection-average",
)
TRAINED_K = 24


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    step_size: float = 0.05
    margin_cos: float = 0.2
    lambda_cls: float = 1.0
    lambda_push: float = 1.0
    aam_margin: float = 0.2
    aam_scale: float = 16.0

    def validate(self) -> None:
        if self.epochs < 1:
            raise DataError("training epochs must be >= 1")
        if self.step_size <= 0:
            raise DataError("step_size must be positive")
        if not 0 <= self.margin_cos < 1:
            raise DataError("margin_cos must lie in [0, 1)")


@dataclass(frozen=True)
class AnonymizerConfig:
    mode: str = "random-chain-utterance-level"
    # None resolves per mode: TRAINED_K for trained chains, 2*dim for random chains
    K: int | None = None
    pool_size: int = 64
    select_N: int = 10
    seed: int | None = 0
    training: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise DataError(f"unknown anonymizer mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.K is not None and self.K < 1:
            raise DataError("K must be >= 1")
        if self.pool_size < 1 or self.select_N < 1:
            raise DataError("pool_size and select_N must be >= 1")
        self.training.validate()

    def resolved_K(self, dim: int) -> int:
        if self.K is not None:
            return self.K
        return TRAINED_K if self.mode == "trained-chain" else 2 * dim


def instance_normalize(x) -> np.ndarray:
    """Standardize each vector over its own coordinates (population std)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise DimensionError("instance normalization needs dim >= 2")
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    if np.any(sd <= 1e-12):
        raise DegenerateInputError("cannot instance-normalize a constant vector")
    return (x - mu) / sd


def anonymize_ohnn(x, chain: OrthogonalChain) -> np.ndarray:
    return chain_apply(chain, x)


def utterance_seed(seed: int, utt_id: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{utt_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _splitmix64(x: int) -> int:
    mask = (1 << 64) - 1
    x = (x + 0x9E3779B97F4A7C15) & mask
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & mask
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & mask
    return x ^ (x >> 31)


def pool_index(utt_seed: int, pool_size: int) -> int:
    return _splitmix64(utt_seed) % pool_size


def chain_pool(dim: int, K: int, pool_size: int, seed: int) -> list[OrthogonalChain]:
    return [random_chain(dim, K, _splitmix64(seed + r)) for r in range(pool_size)]


def anonymize_utterance_level(x, pool: list[OrthogonalChain], utt_seed: int) -> tuple[np.ndarray, int]:
    if not pool:
        raise DataError("chain pool is empty")
    idx = pool_index(utt_seed, len(pool))
    return chain_apply(pool[idx], x), idx


def anonymize_selection(x, pool, select_N: int, seed: int) -> np.ndarray:
    pool = np.asarray(pool, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if pool.ndim != 2 or pool.shape[1] != x.shape[-1]:
        raise DimensionError(f"pool shape {pool.shape} does not match input dim {x.shape[-1]}")
    if select_N < 1 or pool.shape[0] < select_N:
        raise DataError(f"pool of {pool.shape[0]} cannot supply {select_N} distinct embeddings")
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = pool[rng.choice(pool.shape[0], size=select_N, replace=False)]
    mean = chosen.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-8:
        raise DegenerateInputError("selected pool embeddings average to (near) zero")
    return mean * (np.linalg.norm(chosen, axis=1).mean() / norm)


# --------------------------------------------------------------------------
# trained chain


def _unit_rows(A):
    n = np.linalg.norm(A, axis=1, keepdims=True)
    return A / n, n


def ohnn_loss_and_grad(V, W, X, spk, cfg: TrainConfig):
    """Loss and gradients with respect to raw reflector rows ``V`` and class rows ``W``.

    ``V`` rows are normalized inside the loss, so the gradient is exact for
    unnormalized parameters as well.  Returns ``(loss, grad_V, grad_W, parts)``.
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    U, vnorm = _unit_rows(V)
    Y = X.copy()
    for u in U:
        Y -= 2.0 * np.outer(Y @ u, u)

    Yh, ynorm = _unit_rows(Y)
    Xh, _ = _unit_rows(X)
    Wh, wnorm = _unit_rows(W)

    # additive angular margin softmax over speakers
    s, m = cfg.aam_scale, cfg.aam_margin
    C = np.clip(Yh @ Wh.T, -1.0 + 1e-7, 1.0 - 1e-7)
    rows = np.arange(N)
    ct = C[rows, spk]
    st = np.sqrt(1.0 - ct**2)
    logits = s * C
    logits[rows, spk] = s * (ct * np.cos(m) - st * np.sin(m))
    z = logits - logits.max(axis=1, keepdims=True)
    P = np.exp(z)
    P /= P.sum(axis=1, keepdims=True)
    l_aam = -np.mean(np.log(np.maximum(P[rows, spk], 1e-300)))
    dlog = P.copy()
    dlog[rows, spk] -= 1.0
    dlog /= N
    dC = s * dlog
    dC[rows, spk] = dlog[rows, spk] * s * (np.cos(m) + ct * np.sin(m) / st)

    # push rotated embeddings away from their source
    pc = np.sum(Xh * Yh, axis=1)
    active = pc > cfg.margin_cos
    l_push = np.mean(np.maximum(pc - cfg.margin_cos, 0.0))

    loss = cfg.lambda_cls * l_aam + cfg.lambda_push * l_push
    gYh = cfg.lambda_cls * (dC @ Wh) + cfg.lambda_push * (active[:, None] * Xh) / N
    gWh = cfg.lambda_cls * (dC.T @ Yh)
    gW = (gWh - np.sum(gWh * Wh, axis=1, keepdims=True) * Wh) / wnorm
    G = (gYh - np.sum(gYh * Yh, axis=1, keepdims=True) * Yh) / ynorm

    # reverse pass; each reflection is its own inverse, so inputs are recomputed
    gU = np.zeros_like(U)
    for k in range(len(U) - 1, -1, -1):
        u = U[k]
        Y -= 2.0 * np.outer(Y @ u, u)  # Y is now this reflection's input
        Gu = G @ u
        gU[k] = -2.0 * (Y.T @ Gu + G.T @ (Y @ u))
        G -= 2.0 * np.outer(Gu, u)
    gV = (gU - np.sum(gU * U, axis=1, keepdims=True) * U) / vnorm
    return float(loss), gV, gW, {"aam": float(l_aam), "push": float(l_push)}


@dataclass
class OhnnTraining:
    chain: OrthogonalChain
    class_directions: np.ndarray
    history: list[dict]
    dev_loss: float | None


def _speaker_index(speakers, known=None):
    speakers = list(speakers)
    names = sorted(set(speakers)) if known is None else known
    lookup = {n: i for i, n in enumerate(names)}
    try:
        return np.array([lookup[s] for s in speakers], dtype=np.int64), names
    except KeyError as exc:
        raise DataError(f"speaker {exc.args[0]!r} not seen in training") from None


def train_ohnn(X, speakers, config: TrainConfig | None = None, K: int = TRAINED_K, seed: int = 0, dev=None) -> OhnnTraining:
    """Full-batch gradient descent on reflector and class-direction parameters.

    Reflectors are re-normalized to unit length after every update, so the
    chain is exactly orthogonal at every epoch.  ``dev`` is an optional
    ``(X_dev, speakers_dev)`` pair scored with the final parameters.
    """
    cfg = config or TrainConfig()
    cfg.validate()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise DataError("training embeddings must be a finite 2-D array")
    spk, names = _speaker_index(speakers)
    counts = np.bincount(spk)
    if len(names) < 2 or counts.min() < 2:
        raise DataError("OHNN training needs >= 2 speakers with >= 2 utterances each")

    V = np.array(random_chain(X.shape[1], K, seed).reflectors)
    # class directions start at the speakers' mean rotated embedding
    Y0 = chain_apply(OrthogonalChain(V), X)
    W = np.stack([Y0[spk == i].mean(axis=0) for i in range(len(names))])
    W, _ = _unit_rows(W)

    history = []
    for epoch in range(cfg.epochs):
        loss, gV, gW, parts = ohnn_loss_and_grad(V, W, X, spk, cfg)
        if not np.isfinite(loss):
            raise NumericalError(f"OHNN loss became non-finite at epoch {epoch}")
        history.append({"epoch": epoch, "loss": loss, **parts})
        V, _ = _unit_rows(V - cfg.step_size * gV)
        W, _ = _unit_rows(W - cfg.step_size * gW)

    dev_loss = None
    if dev is not None:
        dspk, _ = _speaker_index(dev[1], names)
        dev_loss, *_ = ohnn_loss_and_grad(V, W, dev[0], dspk, cfg)
        logger.info("OHNN final dev loss %.5f", dev_loss)
    return OhnnTraining(OrthogonalChain(V, seed=0), W, history, dev_loss)


# --------------------------------------------------------------------------
# batch front end


@dataclass
class Anonymizer:
    """A configured anonymizer holding its chains (or external pool)."""

    config: AnonymizerConfig
    dim: int
    chains: list[OrthogonalChain] = field(default_factory=list)
    pool: np.ndarray | None = None

    @classmethod
    def build(cls, config: AnonymizerConfig, dim: int, X_train=None, speakers_train=None, pool=None, dev=None):
        config.validate()
        K = config.resolved_K(dim)
        if config.mode == "trained-chain":
            if X_train is None:
                raise DataError("trained-chain mode needs training embeddings")
            chains = [train_ohnn(X_train, speakers_train, config.training, K, config.seed, dev=dev).chain]
            return cls(config, dim, chains)
        if config.mode == "random-chain-speaker-level":
            return cls(config, dim, [random_chain(dim, K, config.seed)])
        if config.mode == "random-chain-utterance-level":
            return cls(config, dim, chain_pool(dim, K, config.pool_size, config.seed))
        if pool is None or len(pool) == 0:
            raise DataError("selection-average mode requires a nonempty external pool")
        pool = np.asarray(pool, dtype=np.float64)
        if pool.shape[1] != dim:
            raise DimensionError(f"external pool dim {pool.shape[1]} != embedding dim {dim}")
        return cls(config, dim, [], pool)

    def anonymize(self, X, utt_ids) -> tuple[np.ndarray, list[int]]:
        """Anonymize rows of ``X``; returns embeddings and a per-row audit index.

        The audit index is the chain used (chain modes) or -1 (selection).
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionError(f"expected (N, {self.dim}) embeddings, got {X.shape}")
        utt_ids = list(utt_ids)
        if len(utt_ids) != X.shape[0]:
            raise DataError("one utterance id per row is required")
        mode = self.config.mode
        if mode in ("trained-chain", "random-chain-speaker-level"):
            return chain_apply(self.chains[0], X), [0] * len(utt_ids)
        seeds = [utterance_seed(self.config.seed, u) for u in utt_ids]
        if mode == "selection-average":
            Z = np.stack([anonymize_selection(x, self.pool, self.config.select_N, s) for x, s in zip(X, seeds)])
            return Z, [-1] * len(utt_ids)
        idx = np.array([pool_index(s, len(self.chains)) for s in seeds], dtype=np.int64)
        Z = np.empty_like(X)
        # group rows by chain; no cross-utterance state, so order is irrelevant
        for r in np.unique(idx):
            rows = idx == r
            Z[rows] = chain_apply(self.chains[r], X[rows])
        return Z, idx.tolist()
