"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are repeated in the
pytest terminal summary.  Run directly with ``python3 tests/test_acceptance.py``
for the lines alone.
"""
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES  # noqa: E402
from oracles import brute_force_eer, numerical_grad  # noqa: E402

from emoanon.anonymizer import TrainConfig, ohnn_loss_and_grad  # noqa: E402
from emoanon.config import RunConfig  # noqa: E402
from emoanon.emotion import compensate, directional_distance, indicator_loss_and_grad, init_indicator  # noqa: E402
from emoanon.formats import decode_archive, encode_archive, read_archive  # noqa: E402
from emoanon.labels import EMOTIONS, NON_NEUTRAL  # noqa: E402
from emoanon.linalg import chain_apply, chain_inverse, householder_reflect, orthogonality_check, random_chain  # noqa: E402
from emoanon.metrics import compute_eer  # noqa: E402
from emoanon.pipeline import run_pipeline  # noqa: E402
from emoanon.synth import oracle_direction_alignment  # noqa: E402

GOLDEN = Path(__file__).parent / "data" / "golden_1x2.semb"


def verdict(n, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title} | {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_c01_orthogonality_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_orth = worst_inv = worst_rt = 0.0
    for s in range(100):
        ch = random_chain(192, 24, seed=s)
        x = rng.standard_normal((8, 192))
        worst_orth = max(worst_orth, orthogonality_check(ch))
        for v in ch.reflectors:
            worst_inv = max(worst_inv, np.max(np.abs(householder_reflect(v, householder_reflect(v, x)) - x)))
        worst_rt = max(worst_rt, np.max(np.abs(chain_inverse(ch, chain_apply(ch, x)) - x)))
    dt = time.perf_counter() - t0
    ok = worst_orth < 1e-9 and worst_inv < 1e-9 and worst_rt < 1e-9 and dt < 10
    verdict(1, "orthogonality suite", ok,
            f"orth {worst_orth:.1e}, involution {worst_inv:.1e}, round-trip {worst_rt:.1e}, {dt:.2f}s")


def test_c02_eer_oracle_equivalence():
    rng = np.random.default_rng(2)
    worst = 0.0
    for k in range(1000):
        ng, ni = np.exp(rng.uniform(np.log(2), np.log(1e4), 2)).astype(int)
        g = rng.normal(rng.uniform(0, 2), 1, ng)
        i = rng.normal(0, 1, ni)
        if k % 3 == 0:  # coarse quantization gives many ties
            g, i = np.round(g, 1), np.round(i, 1)
        fast = compute_eer(g, i)
        eer, thr = brute_force_eer(g, i)
        worst = max(worst, abs(fast.eer - eer), abs(fast.threshold - thr))
    same = compute_eer(rng.normal(size=20000), rng.normal(size=20000)).eer
    separated = compute_eer(rng.uniform(0.6, 1, 500), rng.uniform(-1, 0.5, 500)).eer
    ok = worst <= 1e-9 and abs(same - 0.5) <= 0.02 and separated == 0.0
    verdict(2, "EER oracle equivalence", ok,
            f"max |fast - brute| {worst:.1e} over 1000 sets, identical {same:.4f}, separated {separated}")


def test_c03_compensation_exactness(default_run):
    res, _, _ = default_run
    rng = np.random.default_rng(3)
    worst = 0.0
    increases = True
    for e in EMOTIONS:
        b = res.boundaries[e]
        Z = rng.standard_normal((1000, b.dim)) * 3
        alpha = rng.uniform(-60, 60, 1000)
        Zc = np.stack([compensate(z, b, a) for z, a in zip(Z, alpha)])
        worst = max(worst, np.max(np.abs(directional_distance(Zc, b) - directional_distance(Z, b) - alpha)))
        pos = alpha > 0
        increases &= bool(np.all(Zc[pos] @ b.n > Z[pos] @ b.n))
    ok = worst <= 1e-9 and increases
    verdict(3, "compensation shifts the distance by exactly alpha", ok,
            f"max error {worst:.1e} over 4x1000 pairs, strict increase for alpha>0: {increases}")


def test_c04_hyperplane_recovery(default_run):
    res, _, _ = default_run
    truth = res.data.truth
    align = {e.tag: oracle_direction_alignment(res.boundaries[e], truth) for e in NON_NEUTRAL}
    acc = {e.tag: res.boundaries[e].dev_accuracy for e in NON_NEUTRAL}
    ok = all(a >= 0.9 for a in align.values()) and all(0.84 <= a <= 1.0 for a in acc.values())
    detail = ", ".join(f"{k} align {align[k]:.3f} acc {acc[k]:.3f}" for k in align)
    verdict(4, "hyperplane recovery", ok, detail)


def test_c05_uar_ordering(default_run):
    res, _, elapsed = default_run
    u = {k: v["uar"] for k, v in res.report["utility"].items()}
    ok = (u["original"] >= 0.90 and u["anonymized"] <= 0.40 and u["compensated"] >= 0.70
          and u["compensated"] > u["anonymized"] and elapsed < 120)
    verdict(5, "UAR ordering", ok,
            f"original {u['original']:.3f}, anonymized {u['anonymized']:.3f}, "
            f"compensated {u['compensated']:.3f}, pipeline {elapsed:.1f}s")


def test_c06_privacy_ordering(default_run):
    res, _, _ = default_run
    p = {k: v["eer"] for k, v in res.report["privacy"].items()}
    change = abs(p["compensated_lazy"] - p["anonymized_lazy"])
    ok = p["original"] <= 0.05 and p["anonymized_lazy"] >= 0.40 and change <= 0.05
    verdict(6, "privacy ordering (lazy attacker)", ok,
            f"original {p['original']:.4f}, anonymized {p['anonymized_lazy']:.4f}, "
            f"compensated {p['compensated_lazy']:.4f}, change {change:.4f}")


def test_c07_alpha_plateau(default_run):
    res, _, _ = default_run
    plat = res.report["alpha_plateau"]
    assert plat["magnitudes"] == [20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0]
    spread = plat["spread"]
    verdict(7, "alpha plateau", spread <= 0.05,
            f"UAR over |alpha| 20..50 in [{min(plat['uar']):.4f}, {max(plat['uar']):.4f}], spread {spread:.4f}")


def test_c08_gradient_checks():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((16, 8))
    y = rng.integers(0, 4, 16)
    p = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in init_indicator(8, 8, seed=0).params().items()}
    _, grads = indicator_loss_and_grad(p, X, y)
    ind_err = 0.0
    for k in p:
        def f(v, k=k):
            return indicator_loss_and_grad({**p, k: v}, X, y)[0]
        num = numerical_grad(f, p[k])
        ind_err = max(ind_err, np.linalg.norm(num - grads[k]) / np.linalg.norm(num))

    spk = np.repeat(np.arange(4), 4)
    V = rng.standard_normal((4, 8))
    W = rng.standard_normal((4, 8))
    cfg = TrainConfig(margin_cos=-1.0)  # every push term active
    _, gV, gW, _ = ohnn_loss_and_grad(V, W, X, spk, cfg)
    nV = numerical_grad(lambda v: ohnn_loss_and_grad(v, W, X, spk, cfg)[0], V)
    nW = numerical_grad(lambda w: ohnn_loss_and_grad(V, w, X, spk, cfg)[0], W)
    oh_err = max(np.linalg.norm(nV - gV) / np.linalg.norm(nV), np.linalg.norm(nW - gW) / np.linalg.norm(nW))
    verdict(8, "gradient checks", ind_err < 1e-4 and oh_err < 1e-4,
            f"indicator rel err {ind_err:.1e}, OHNN rel err {oh_err:.1e}")


def test_c09_determinism_and_formats(default_run, tmp_path):
    _, out, _ = default_run
    run_pipeline(RunConfig(), out_dir=tmp_path)
    names = sorted(f.name for f in out.iterdir())
    same = names == sorted(f.name for f in tmp_path.iterdir()) and all(
        (out / n).read_bytes() == (tmp_path / n).read_bytes() for n in names
    )
    buf = (out / "anonymized.semb").read_bytes()
    round_trip = encode_archive(decode_archive(buf)) == buf
    raw = GOLDEN.read_bytes()
    golden = (len(raw) == 25 and raw[:5] == b"SEMB\x01" and read_archive(GOLDEN).tolist() == [[1.0, -1.0]]
              and encode_archive([[1.0, -1.0]]) == raw)
    verdict(9, "determinism and formats", same and round_trip and golden,
            f"{len(names)} artifacts byte-identical: {same}, archive round-trip: {round_trip}, golden: {golden}")


def test_c10_probe_ordering(default_run):
    res, _, _ = default_run
    pr = res.report["probe_dev_uar"]
    verdict(10, "emotion probe ordering", pr["compensated"] > pr["anonymized"],
            f"anonymized {pr['anonymized']:.3f} < compensated {pr['compensated']:.3f}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
