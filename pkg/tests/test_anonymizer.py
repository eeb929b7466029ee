import hashlib

import numpy as np
import pytest

from emoanon.anonymizer import (
    Anonymizer,
    AnonymizerConfig,
    TrainConfig,
    _splitmix64,
    anonymize_selection,
    chain_pool,
    instance_normalize,
    ohnn_loss_and_grad,
    pool_index,
    train_ohnn,
    utterance_seed,
)
from emoanon.errors import DataError, DegenerateInputError, DimensionError
from emoanon.linalg import chain_apply, cosine, orthogonality_check, random_chain
from emoanon.synth import WorldSpec, gen_world
from oracles import numerical_grad


def test_splitmix64_reference_value():
    # first output of the reference generator seeded with 0
    assert _splitmix64(0) == 0xE220A8397B1DCDAF


def test_utterance_seed_frozen():
    ref = int.from_bytes(hashlib.blake2b(b"0:spk000_happy_0000", digest_size=8).digest(), "little")
    assert utterance_seed(0, "spk000_happy_0000") == ref == 8602190780412046918
    assert pool_index(ref, 64) == 10


def test_pool_chains_follow_seed_rule():
    pool = chain_pool(6, 3, 4, seed=5)
    for r, ch in enumerate(pool):
        assert np.array_equal(ch.reflectors, random_chain(6, 3, _splitmix64(5 + r)).reflectors)


def test_resolved_K():
    assert AnonymizerConfig(mode="trained-chain").resolved_K(192) == 24
    assert AnonymizerConfig().resolved_K(192) == 384
    assert AnonymizerConfig(K=7).resolved_K(192) == 7
    with pytest.raises(DataError):
        AnonymizerConfig(mode="bogus").validate()


def test_utterance_level_is_per_utterance_and_order_free():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 16))
    ids = [f"u{i}" for i in range(40)]
    anon = Anonymizer.build(AnonymizerConfig(pool_size=8, seed=3), 16)
    Z, audit = anon.anonymize(X, ids)
    perm = rng.permutation(40)
    Zp, audit_p = anon.anonymize(X[perm], [ids[i] for i in perm])
    assert np.array_equal(Zp, Z[perm])
    assert len(set(audit)) > 1
    for i in range(40):
        assert np.allclose(Z[i], chain_apply(anon.chains[audit[i]], X[i]))
    assert np.allclose(np.linalg.norm(Z, axis=1), np.linalg.norm(X, axis=1))


def test_speaker_level_uses_one_chain():
    X = np.random.default_rng(0).standard_normal((5, 8))
    anon = Anonymizer.build(AnonymizerConfig(mode="random-chain-speaker-level", K=4), 8)
    Z, audit = anon.anonymize(X, list("abcde"))
    assert audit == [0] * 5
    assert np.allclose(Z, chain_apply(random_chain(8, 4, 0), X))


def test_random_chain_scrambles_at_default_K():
    X = np.random.default_rng(1).standard_normal((300, 192))
    Z, _ = Anonymizer.build(AnonymizerConfig(), 192).anonymize(X, [str(i) for i in range(300)])
    assert abs(np.mean(cosine(X, Z))) < 0.1


def test_selection_average():
    rng = np.random.default_rng(0)
    pool = rng.standard_normal((20, 6)) + 3.0
    x = rng.standard_normal(6)
    z = anonymize_selection(x, pool, 5, seed=9)
    pick = np.random.Generator(np.random.PCG64(9)).choice(20, 5, replace=False)
    mean = pool[pick].mean(axis=0)
    assert np.allclose(z, mean / np.linalg.norm(mean) * np.linalg.norm(pool[pick], axis=1).mean())
    assert np.array_equal(z, anonymize_selection(x * 2, pool, 5, seed=9))  # independent of the input
    with pytest.raises(DataError):
        anonymize_selection(x, pool, 21, 0)
    with pytest.raises(DegenerateInputError):
        anonymize_selection(x[:2], np.array([[1.0, 0.0], [-1.0, 0.0]]), 2, 0)
    with pytest.raises(DimensionError):
        anonymize_selection(np.ones(3), pool, 2, 0)


def test_selection_requires_pool():
    with pytest.raises(DataError):
        Anonymizer.build(AnonymizerConfig(mode="selection-average"), 6)


def test_instance_normalize():
    z = instance_normalize(np.array([1.0, 2.0, 3.0, 4.0]))
    assert z.mean() == pytest.approx(0.0) and z.std() == pytest.approx(1.0)
    with pytest.raises(DegenerateInputError):
        instance_normalize(np.ones(4))


def test_ohnn_gradient():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 8))
    spk = np.array([0, 0, 1, 1, 2, 2, 0, 1, 2, 2])
    V = rng.standard_normal((3, 8))
    W = rng.standard_normal((3, 8))
    cfg = TrainConfig(margin_cos=-0.5)  # keep the push hinge active
    _, gV, gW, _ = ohnn_loss_and_grad(V, W, X, spk, cfg)
    nV = numerical_grad(lambda v: ohnn_loss_and_grad(v, W, X, spk, cfg)[0], V)
    nW = numerical_grad(lambda w: ohnn_loss_and_grad(V, w, X, spk, cfg)[0], W)
    assert np.linalg.norm(nV - gV) / np.linalg.norm(nV) < 1e-4
    assert np.linalg.norm(nW - gW) / np.linalg.norm(nW) < 1e-4


def test_ohnn_training_pushes_away_and_stays_orthogonal():
    w = gen_world(WorldSpec(dim=16, n_speakers=6, utts_per_speaker_per_emotion=6, seed=2))
    cfg = TrainConfig(epochs=150, step_size=0.1)
    res = train_ohnn(w.X, w.speakers, cfg, K=8, seed=0)
    assert orthogonality_check(res.chain) < 1e-12
    before = np.mean(cosine(w.X, chain_apply(random_chain(16, 8, 0), w.X)))
    after = np.mean(cosine(w.X, chain_apply(res.chain, w.X)))
    assert after < before
    assert after <= cfg.margin_cos + 0.05
    assert res.history[-1]["loss"] < res.history[0]["loss"]


def test_ohnn_rejects_tiny_speaker_sets():
    with pytest.raises(DataError):
        train_ohnn(np.ones((3, 4)), ["a", "a", "b"], K=2)
