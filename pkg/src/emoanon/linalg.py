"""Householder reflections and orthogonal reflection chains.

Everything here works in float64.  Random reflectors come from numpy's
``PCG64`` bit generator (``numpy.random.Generator``) drawing standard normals,
normalized to the unit sphere, so a ``(dim, K, seed)`` triple always yields
the same chain.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateInputError, DimensionError

MIN_REFLECTOR_NORM = 1e-8


def _as_vectors(x, dim: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise DimensionError(f"expected a vector or a batch of vectors, got shape {x.shape}")
    if dim is not None and x.shape[-1] != dim:
        raise DimensionError(f"dimension mismatch: expected {dim}, got {x.shape[-1]}")
    return x


def householder_reflect(v, x) -> np.ndarray:
    """Reflect ``x`` (one vector or rows of a batch) across the hyperplane orthogonal to unit ``v``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError("reflector must be a 1-D vector")
    if not np.all(np.isfinite(v)) or np.linalg.norm(v) < MIN_REFLECTOR_NORM:
        raise DataError("reflector must be finite and nonzero")
    x = _as_vectors(x, v.shape[0])
    return x - 2.0 * np.multiply.outer(x @ v, v)


@dataclass(frozen=True)
class OrthogonalChain:
    """Ordered product of Householder reflections ``H_K ... H_2 H_1``.

    Reflectors are stored unit-normalized, one per row.
    """

    reflectors: np.ndarray
    dim: int = field(default=0)
    seed: int = 0

    def __post_init__(self):
        r = np.asarray(self.reflectors, dtype=np.float64)
        dim = self.dim
        if r.size == 0:
            if dim < 2:
                raise DataError("an empty chain needs an explicit dim >= 2")
            r = np.zeros((0, dim))
        else:
            r = np.atleast_2d(r)
            if dim and r.shape[1] != dim:
                raise DimensionError(f"reflectors have dim {r.shape[1]}, chain declares {dim}")
            dim = r.shape[1]
            if dim < 2:
                raise DataError("chain dimension must be >= 2")
            if not np.all(np.isfinite(r)):
                raise DataError("reflectors must be finite")
            norms = np.linalg.norm(r, axis=1)
            if np.any(norms < MIN_REFLECTOR_NORM):
                raise DataError(f"reflector norm below {MIN_REFLECTOR_NORM}")
            r = r / norms[:, None]
        r = np.ascontiguousarray(r)
        r.setflags(write=False)
        object.__setattr__(self, "reflectors", r)
        object.__setattr__(self, "dim", int(dim))

    @property
    def K(self) -> int:
        return self.reflectors.shape[0]

    def apply(self, x) -> np.ndarray:
        return chain_apply(self, x)

    def inverse(self, y) -> np.ndarray:
        return chain_inverse(self, y)

    def matrix(self) -> np.ndarray:
        """Dense ``dim x dim`` matrix Q with ``chain_apply(c, x) == Q @ x``."""
        return chain_apply(self, np.eye(self.dim)).T


def _reflect_inplace(y, v):
    # row-local reduction: a row's result does not depend on the rest of the batch
    y -= 2.0 * np.multiply.outer(np.sum(y * v, axis=-1), v)


def chain_apply(chain: OrthogonalChain, x) -> np.ndarray:
    x = _as_vectors(x, chain.dim)
    y = x.copy()
    for v in chain.reflectors:
        _reflect_inplace(y, v)
    return y


def chain_inverse(chain: OrthogonalChain, y) -> np.ndarray:
    # each reflection is an involution, so the inverse runs them backwards
    y = _as_vectors(y, chain.dim)
    x = y.copy()
    for v in chain.reflectors[::-1]:
        _reflect_inplace(x, v)
    return x


def random_chain(dim: int, K: int, seed: int) -> OrthogonalChain:
    if K < 1:
        raise DataError("K must be >= 1")
    if dim < 2:
        raise DataError("dim must be >= 2")
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.standard_normal((K, dim))
    # a draw this small is astronomically unlikely; guard anyway
    bad = np.linalg.norm(v, axis=1) < MIN_REFLECTOR_NORM
    while np.any(bad):
        v[bad] = rng.standard_normal((int(bad.sum()), dim))
        bad = np.linalg.norm(v, axis=1) < MIN_REFLECTOR_NORM
    return OrthogonalChain(v, dim=dim, seed=seed)


def orthogonality_check(chain: OrthogonalChain) -> float:
    """Max entrywise ``|Q^T Q - I|`` where Q is the chain's image of the standard basis."""
    if chain.K == 0:
        return 0.0
    Q = chain.matrix()
    return float(np.max(np.abs(Q.T @ Q - np.eye(chain.dim))))


def cosine(a, b) -> np.ndarray:
    """Row-wise cosine similarity; broadcasts a single vector against a batch."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInputError("cosine of a zero vector is undefined")
    return np.clip(np.sum(a * b, axis=-1) / (na * nb), -1.0, 1.0)

