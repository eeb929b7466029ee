import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emoanon.errors import DataError, DegenerateInputError, DimensionError
from emoanon.linalg import (
    OrthogonalChain,
    chain_apply,
    chain_inverse,
    cosine,
    householder_reflect,
    orthogonality_check,
    random_chain,
)


def dense_reflection(v):
    v = np.asarray(v, float)
    return np.eye(len(v)) - 2.0 * np.outer(v, v) / (v @ v)


def test_swap_reflector_by_hand():
    # reflecting across the hyperplane orthogonal to (1,1,0) maps e1 -> -e2
    v = np.array([1.0, 1.0, 0.0])
    assert np.allclose(householder_reflect(v / np.sqrt(2), [1.0, 0.0, 0.0]), [0.0, -1.0, 0.0], atol=1e-15)
    ch = OrthogonalChain(np.array([v]))
    expected = np.array([[0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(ch.matrix(), expected, atol=1e-15)


def test_reflectors_stored_unit_norm_and_readonly():
    ch = OrthogonalChain(np.array([[3.0, 4.0, 0.0]]))
    assert np.allclose(ch.reflectors, [[0.6, 0.8, 0.0]])
    with pytest.raises(ValueError):
        ch.reflectors[0, 0] = 1.0


def test_chain_matches_dense_product():
    rng = np.random.default_rng(5)
    V = rng.standard_normal((6, 9))
    ch = OrthogonalChain(V)
    Q = np.eye(9)
    for v in V:
        Q = dense_reflection(v) @ Q  # first reflector is applied first
    assert np.allclose(ch.matrix(), Q, atol=1e-12)
    x = rng.standard_normal(9)
    assert np.allclose(chain_apply(ch, x), Q @ x, atol=1e-12)


def test_random_chain_uses_named_generator():
    ch = random_chain(5, 3, seed=11)
    raw = np.random.Generator(np.random.PCG64(11)).standard_normal((3, 5))
    assert np.allclose(ch.reflectors, raw / np.linalg.norm(raw, axis=1, keepdims=True), atol=0)
    assert np.array_equal(random_chain(5, 3, 11).reflectors, ch.reflectors)
    assert not np.array_equal(random_chain(5, 3, 12).reflectors, ch.reflectors)


def test_empty_chain_is_identity():
    ch = OrthogonalChain(np.zeros((0, 4)), dim=4)
    x = np.arange(4.0)
    assert np.array_equal(chain_apply(ch, x), x)
    assert orthogonality_check(ch) == 0.0


def test_fixed_complement():
    # K reflections leave the orthogonal complement of their span untouched
    rng = np.random.default_rng(0)
    ch = random_chain(12, 3, seed=1)
    V = ch.reflectors
    x = rng.standard_normal(12)
    x -= V.T @ np.linalg.lstsq(V.T, x, rcond=None)[0]
    assert np.allclose(chain_apply(ch, x), x, atol=1e-12)


@pytest.mark.parametrize("bad", [np.zeros(3), np.array([np.nan, 1.0, 0.0])])
def test_bad_reflector(bad):
    with pytest.raises(DataError):
        householder_reflect(bad, np.ones(3))
    with pytest.raises(DataError):
        OrthogonalChain(bad[None, :])


def test_dimension_mismatch():
    ch = random_chain(4, 2, 0)
    with pytest.raises(DimensionError):
        chain_apply(ch, np.ones(5))


def test_cosine():
    assert cosine([1.0, 0.0], [0.0, 2.0]) == 0.0
    assert cosine([1.0, 1.0], [-2.0, -2.0]) == pytest.approx(-1.0)
    with pytest.raises(DegenerateInputError):
        cosine([0.0, 0.0], [1.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(
    dim=st.integers(2, 40),
    K=st.integers(1, 30),
    seed=st.integers(0, 2**32),
    xseed=st.integers(0, 2**32),
)
def test_isometry_and_round_trip(dim, K, seed, xseed):
    ch = random_chain(dim, K, seed)
    x = np.random.default_rng(xseed).standard_normal((3, dim))
    y = chain_apply(ch, x)
    assert np.allclose(np.linalg.norm(y, axis=1), np.linalg.norm(x, axis=1), rtol=1e-12)
    assert np.allclose(chain_inverse(ch, y), x, atol=1e-10)
    assert orthogonality_check(ch) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_single_reflection_is_involution(seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(7)
    v /= np.linalg.norm(v)
    x = rng.standard_normal(7)
    assert np.allclose(householder_reflect(v, householder_reflect(v, x)), x, atol=1e-12)
    assert np.allclose(householder_reflect(v, x), dense_reflection(v) @ x, atol=1e-12)


def test_expected_cosine_decay():
    # for random reflectors E[cos(x, Qx)] is close to exp(-2K/d)
    d = 64
    x = np.random.default_rng(3).standard_normal((400, d))
    for K in (4, 16, 64):
        cs = [np.mean(cosine(x, chain_apply(random_chain(d, K, s), x))) for s in range(20)]
        assert abs(np.mean(cs) - np.exp(-2 * K / d)) < 0.06
