"""End-to-end run: embeddings -> anonymize -> emotion models -> calibrate -> compensate -> evaluate."""
from __future__ import annotations

import hashlib
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .anonymizer import Anonymizer
from .config import RunConfig, config_to_dict
from .emotion import (
    CompensationConfig,
    EmotionBoundary,
    EmotionIndicator,
    alpha_sweep,
    calibrate_alpha,
    compensate_pipeline,
    train_all_svms,
    train_indicator,
)
from .errors import DataError
from .formats import (
    Manifest,
    atomic_write,
    read_archive,
    write_archive,
    write_boundaries,
    write_chains,
    write_indicator,
    write_json,
    write_manifest,
    write_scores_csv,
    write_truth,
)
from .labels import EMOTIONS, NON_NEUTRAL, Emotion
from .linalg import cosine
from .metrics import ATTACKER_MODEL, build_trials, compute_uar, confusion_matrix, eer_for_trials
from .synth import WorldSpec, WorldTruth, gen_world, oracle_direction_alignment

logger = logging.getLogger(__name__)

ATTACKER_NOTE = (
    "lazy attacker: enrollment and test embeddings are scored directly with cosine similarity; "
    "no verification model is retrained on anonymized data"
)


def hash_unit(seed: int, key: str) -> float:
    """Deterministic uniform value in [0, 1) from a seed and a string key."""
    digest = hashlib.blake2b(f"{seed}:{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def assign_splits(utt_ids, train: float, dev: float, seed: int) -> np.ndarray:
    """0 = train, 1 = dev, 2 = eval; assignment depends only on (seed, utt_id)."""
    u = np.array([hash_unit(seed, x) for x in utt_ids])
    return np.where(u < train, 0, np.where(u < train + dev, 1, 2))


def check_split_hygiene(utt_ids, split) -> None:
    groups = [set(np.asarray(utt_ids, dtype=object)[split == k]) for k in range(3)]
    for a in range(3):
        for b in range(a + 1, 3):
            leak = groups[a] & groups[b]
            if leak:
                raise DataError(f"utterance {sorted(leak)[0]!r} appears in more than one split")


def pca_2d(X) -> np.ndarray:
    """Projection onto the top two principal axes; each axis is signed so its largest loading is positive."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    comps = Vt[:2].copy()
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1
    return Xc @ comps.T


def projection_csv(manifest: Manifest, P) -> str:
    out = io.StringIO()
    out.write("utt_id,speaker_id,emotion,p1,p2\n")
    for u, s, e, (p1, p2) in zip(manifest.utt_ids, manifest.speakers, manifest.emotions, np.asarray(P).tolist()):
        out.write(f"{u},{s},{'-' if e is None else e.tag},{p1!r},{p2!r}\n")
    return out.getvalue()


def metric_record(protocol, seed, eer=None, n_genuine=None, n_impostor=None, uar=None, recall=None) -> dict:
    return {
        "eer": None if eer is None else eer.eer,
        "threshold": None if eer is None else eer.threshold,
        "n_genuine": n_genuine,
        "n_impostor": n_impostor,
        "uar": uar,
        "per_class_recall": None if recall is None else {e.tag: recall[e] for e in EMOTIONS},
        "protocol": protocol,
        "seed": seed,
        "attacker_model": ATTACKER_MODEL,
    }


@dataclass
class Dataset:
    X: np.ndarray
    manifest: Manifest
    truth: WorldTruth | None = None
    source: str = "synthetic"

    @property
    def labels(self) -> np.ndarray:
        return self.manifest.labels()


def synthetic_dataset(spec: WorldSpec) -> Dataset:
    world = gen_world(spec)
    return Dataset(world.X, Manifest.from_world(world), world.truth, "synthetic")


def load_dataset(archive, manifest_path) -> Dataset:
    from .formats import read_manifest

    X = read_archive(archive)
    man = read_manifest(manifest_path)
    man.check_archive(X, str(manifest_path))
    return Dataset(man.take(X), replace_rows(man), None, "archive")


def replace_rows(man: Manifest) -> Manifest:
    return Manifest(man.utt_ids, man.speakers, man.emotions, list(range(len(man))))


@dataclass
class PipelineResult:
    config: RunConfig
    data: Dataset
    split: np.ndarray
    anonymizer: Anonymizer
    Z: np.ndarray
    audit: list[int]
    boundaries: dict[Emotion, EmotionBoundary]
    indicator: EmotionIndicator
    compensation: CompensationConfig
    Zc: np.ndarray
    chosen: np.ndarray
    report: dict
    calibration: dict | None = None
    scores: dict = field(default_factory=dict)


def train_probe(X, y, utt_ids, cfg: RunConfig, seed: int) -> float:
    """Dev UAR of a freshly trained two-layer classifier on an 85/15 style split of ``X``."""
    dev = np.array([hash_unit(seed, u) < cfg.eval.probe_dev_fraction for u in utt_ids])
    ic = cfg.indicator
    probe = train_indicator(
        X[~dev], y[~dev], X[dev], y[dev], seed=seed,
        hidden=ic.hidden, lr=ic.lr, max_epochs=ic.max_epochs, patience=ic.patience, min_delta=ic.min_delta,
    )
    return compute_uar(confusion_matrix(y[dev], probe.predict(X[dev])))[0]


def external_pool(cfg: RunConfig, dim: int) -> np.ndarray:
    if cfg.external_pool:
        return read_archive(cfg.external_pool)
    spec = WorldSpec(dim=dim, n_speakers=50, utts_per_speaker_per_emotion=1, seed=cfg.anonymizer.seed + 1_000_003)
    return gen_world(spec).X


def run_pipeline(cfg: RunConfig, data: Dataset | None = None, out_dir=None) -> PipelineResult:
    cfg = cfg.resolved()
    cfg.validate()
    if data is None:
        data = synthetic_dataset(cfg.world)
    X, man = data.X, data.manifest
    y = man.labels(data.source)
    ids = man.utt_ids
    dim = X.shape[1]

    split = assign_splits(ids, cfg.splits.train, cfg.splits.dev, cfg.splits.seed)
    check_split_hygiene(ids, split)
    tr, dv, ev = (split == 0), (split == 1), (split == 2)
    for name, m in (("train", tr), ("dev", dv), ("eval", ev)):
        if not m.any():
            raise DataError(f"{name} split is empty; adjust the split fractions")

    # anonymize
    anon_cfg = cfg.anonymizer
    spk = np.asarray(man.speakers)
    anon = Anonymizer.build(
        anon_cfg, dim,
        X_train=X[tr], speakers_train=spk[tr],
        pool=external_pool(cfg, dim) if anon_cfg.mode == "selection-average" else None,
    )
    Z, audit = anon.anonymize(X, ids)

    # emotion models, trained on original training embeddings only
    sc = cfg.svm
    boundaries = train_all_svms(X[tr], y[tr], dev=(X[dv], y[dv]), reg_C=sc.reg_C, epochs=sc.epochs, eta0=sc.eta0)
    ic = cfg.indicator
    indicator = train_indicator(
        X[tr], y[tr], X[dv], y[dv], seed=ic.seed,
        hidden=ic.hidden, lr=ic.lr, max_epochs=ic.max_epochs, patience=ic.patience, min_delta=ic.min_delta,
    )

    # alpha: calibrated on dev with true labels, or taken from the config
    calib = None
    if cfg.compensation.calibrate:
        calib = calibrate_alpha(Z[dv], y[dv], boundaries, indicator, cfg.compensation.alpha_grid,
                                skip_neutral=cfg.compensation.skip_neutral)
        comp_cfg = calib.config
    else:
        comp_cfg = CompensationConfig(cfg.alpha_map(), skip_neutral=cfg.compensation.skip_neutral)
    Zc, chosen = compensate_pipeline(X, Z, boundaries, indicator, comp_cfg)

    signs = {e: (np.sign(comp_cfg.alpha[e]) or 1.0) for e in NON_NEUTRAL}
    mags = list(cfg.compensation.plateau_magnitudes)
    plateau = alpha_sweep(Z[dv], y[dv], boundaries, indicator, mags, signs) if mags else []

    # privacy
    ev_idx = np.flatnonzero(ev)
    trials = build_trials(
        spk[ev_idx].tolist(), cfg.eval.protocol, cfg.eval.max_trials, cfg.eval.seed,
        emotions=[man.emotions[i] for i in ev_idx],
    )
    conditions = {
        "original": (X, X),
        "anonymized_ignorant": (X, Z),
        "anonymized_lazy": (Z, Z),
        "compensated_lazy": (Zc, Zc),
    }
    privacy, scores = {}, {}
    for name, (E, T) in conditions.items():
        res, s = eer_for_trials(trials, E[ev_idx], T[ev_idx])
        scores[name] = s
        privacy[name] = metric_record(cfg.eval.protocol, cfg.eval.seed, eer=res,
                                      n_genuine=trials.n_genuine, n_impostor=trials.n_impostor)

    # utility: the indicator doubles as the emotion evaluator
    utility = {}
    for name, E in (("original", X), ("anonymized", Z), ("compensated", Zc)):
        uar, rec = compute_uar(confusion_matrix(y[ev], indicator.predict(E[ev])))
        utility[name] = metric_record(cfg.eval.protocol, cfg.eval.seed, uar=uar, recall=rec)

    ev_ids = [ids[i] for i in ev_idx]
    probe = {
        name: train_probe(E[ev], y[ev], ev_ids, cfg, cfg.eval.seed)
        for name, E in (("original", X), ("anonymized", Z), ("compensated", Zc))
    }

    svm_report = {}
    for e in EMOTIONS:
        b = boundaries[e]
        entry = {"dev_accuracy": b.dev_accuracy}
        if data.truth is not None and e != Emotion.NEUTRAL:
            entry["oracle_alignment"] = oracle_direction_alignment(b, data.truth)
        svm_report[e.tag] = entry

    ind_dev_uar = compute_uar(confusion_matrix(y[dv], indicator.predict(X[dv])))[0]
    report = {
        "tool": "emoanon",
        "version": __version__,
        "attacker_model": ATTACKER_MODEL,
        "attacker_note": ATTACKER_NOTE,
        "config": config_to_dict(cfg),
        "data": {
            "source": data.source,
            "n_utterances": int(len(X)),
            "dim": int(dim),
            "n_train": int(tr.sum()),
            "n_dev": int(dv.sum()),
            "n_eval": int(ev.sum()),
        },
        "anonymizer": {
            "mode": anon_cfg.mode,
            "K": anon_cfg.resolved_K(dim),
            "n_chains": len(anon.chains),
            "mean_cos_original_anonymized": float(np.mean(cosine(X, Z))),
        },
        "svm": svm_report,
        "indicator": {"epochs": len(indicator.history), "dev_uar": ind_dev_uar},
        "compensation": {
            "calibrated": calib is not None,
            **comp_cfg.as_dict(),
            "chosen_counts": {e.tag: int(np.sum(chosen[ev] == int(e))) for e in EMOTIONS},
        },
        "alpha_plateau": {
            "magnitudes": mags,
            "signs": {e.tag: signs[e] for e in NON_NEUTRAL},
            "uar": plateau,
            "spread": (max(plateau) - min(plateau)) if plateau else None,
        },
        "privacy": privacy,
        "utility": utility,
        "probe_dev_uar": probe,
    }
    calibration = calib.report() if calib is not None else None

    result = PipelineResult(cfg, data, split, anon, Z, audit, boundaries, indicator, comp_cfg, Zc, chosen,
                            report, calibration, scores)
    if out_dir is not None:
        write_outputs(result, Path(out_dir), trials)
    return result


def write_outputs(res: PipelineResult, out: Path, trials) -> None:
    out.mkdir(parents=True, exist_ok=True)
    man = res.data.manifest
    if res.data.source == "synthetic":
        write_archive(out / "embeddings.semb", res.data.X)
        write_manifest(out / "manifest.tsv", man)
        write_truth(out / "truth.tru", res.data.truth)
    write_archive(out / "anonymized.semb", res.Z)
    write_archive(out / "compensated.semb", res.Zc)
    atomic_write(out / "audit.tsv", "utt_id\tsplit\tchain_index\tchosen_emotion\n" + "".join(
        f"{u}\t{('train', 'dev', 'eval')[s]}\t{a}\t{Emotion(int(c)).tag}\n"
        for u, s, a, c in zip(man.utt_ids, res.split.tolist(), res.audit, res.chosen.tolist())
    ))
    if res.anonymizer.chains:
        write_chains(out / "chains.ohc", res.anonymizer.chains)
    write_boundaries(out / "boundaries.svm", res.boundaries)
    write_indicator(out / "indicator.ind", res.indicator)
    if res.calibration is not None:
        write_json(out / "calibration.json", res.calibration)
    for name, s in res.scores.items():
        write_scores_csv(out / f"scores_{name}.csv", s, trials.is_same)
    write_json(out / "report.json", res.report)
