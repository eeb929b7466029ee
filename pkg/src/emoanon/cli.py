"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .anonymizer import MODES, Anonymizer, instance_normalize
from .config import RunConfig, config_to_dict, load_config
from .emotion import CompensationConfig, calibrate_alpha, compensate_pipeline, train_all_svms, train_indicator
from .errors import DataError, DimensionError, EmoAnonError, NumericalError
from .formats import (
    atomic_write,
    read_archive,
    read_boundaries,
    read_chains,
    read_indicator,
    write_archive,
    write_boundaries,
    write_chains,
    write_indicator,
    write_json,
    write_manifest,
    write_scores_csv,
    write_truth,
)
from .labels import Emotion
from .metrics import ATTACKER_MODEL, build_trials, compute_uar, confusion_matrix, eer_for_trials
from .pipeline import (
    ATTACKER_NOTE,
    Dataset,
    assign_splits,
    check_split_hygiene,
    external_pool,
    load_dataset,
    metric_record,
    pca_2d,
    projection_csv,
    run_pipeline,
    synthetic_dataset,
)

logger = logging.getLogger("emoanon")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _alpha_grid(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--alpha-grid: not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("--alpha-grid is empty")
    return vals


def _u64(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"must lie in [0, 2^64): {text!r}")
    return v


def _positive(text: str) -> int:
    v = _u64(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="emoanon", description="Embedding-space speaker anonymization with emotion compensation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help, *flags):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", metavar="PATH", help="JSON run configuration")
        sp.add_argument("--seed", type=_u64, metavar="U64", help="master seed (overrides the config)")
        for f in flags:
            f(sp)
        return sp

    inp = lambda sp, req=True: sp.add_argument("--in", dest="inp", metavar="PATH", required=req, help="embedding archive")  # noqa: E731
    man = lambda sp, req=True: sp.add_argument("--manifest", metavar="PATH", required=req, help="TSV manifest")  # noqa: E731
    out = lambda sp: sp.add_argument("--out", metavar="PATH", required=True)  # noqa: E731
    mode = lambda sp: sp.add_argument("--mode", choices=MODES, help="anonymizer mode")  # noqa: E731
    svm = lambda sp: sp.add_argument("--svm", metavar="PATH", required=True, help="boundary file")  # noqa: E731
    ind = lambda sp: sp.add_argument("--indicator", metavar="PATH", required=True, help="indicator file")  # noqa: E731
    anon = lambda sp: sp.add_argument("--anon", metavar="PATH", required=True, help="anonymized archive")  # noqa: E731
    grid = lambda sp: sp.add_argument("--alpha-grid", type=_alpha_grid, metavar="LIST")  # noqa: E731
    trials = lambda sp: sp.add_argument("--max-trials", type=_positive, metavar="N")  # noqa: E731

    add("synth", "generate a synthetic world", out)
    add("train-anon", "train or draw anonymizer chains", inp, man, out, mode)
    sp = add("anonymize", "anonymize an archive", inp, man, out, mode)
    sp.add_argument("--model", metavar="PATH", help="chain file from train-anon")
    sp.add_argument("--pool", metavar="PATH", help="external pool archive (selection-average)")
    sp.add_argument("--instance-norm", action="store_true", help="instance-normalize the output vectors")
    add("train-svm", "train per-emotion boundaries", inp, man, out)
    add("train-indicator", "train the emotion indicator", inp, man, out)
    add("calibrate-alpha", "choose alpha per emotion on the dev split", anon, man, svm, ind, out, grid)
    sp = add("compensate", "compensate anonymized embeddings", inp, anon, man, svm, ind, out)
    sp.add_argument("--calibration", metavar="PATH", help="calibration JSON (chosen_alpha)")
    sp = add("eval-eer", "speaker verification EER (lazy attacker)", inp, man, out, trials)
    sp.add_argument("--enroll", metavar="PATH", help="enrollment archive (default: --in)")
    sp.add_argument("--scores", metavar="PATH", help="also write per-trial scores as CSV")
    sp = add("eval-uar", "emotion recognition UAR", inp, man, out)
    sp.add_argument("--indicator", metavar="PATH", help="indicator file (default: train one on the train/dev splits)")
    sp = add("pipeline", "run the full flow", lambda s: inp(s, False), lambda s: man(s, False), out, mode, grid, trials)
    add("export-proj", "2-D PCA projection as CSV", inp, man, out)
    return p


# --------------------------------------------------------------------------


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "mode", None):
        cfg = replace(cfg, anonymizer=replace(cfg.anonymizer, mode=args.mode))
    if getattr(args, "alpha_grid", None):
        cfg = replace(cfg, compensation=replace(cfg.compensation, alpha_grid=args.alpha_grid))
    if getattr(args, "max_trials", None):
        cfg = replace(cfg, eval=replace(cfg.eval, max_trials=args.max_trials))
    cfg = cfg.resolved()
    cfg.validate()
    return cfg


def _data(args) -> Dataset:
    return load_dataset(args.inp, args.manifest)


def _aligned(path, data: Dataset, what: str) -> np.ndarray:
    """A second archive whose rows follow the same manifest."""
    A = data.manifest.take(read_archive(path))
    if A.shape[1] != data.X.shape[1]:
        raise DimensionError(f"{path}: {what} dim {A.shape[1]} != embedding dim {data.X.shape[1]}")
    return A


def _splits(cfg: RunConfig, data: Dataset):
    ids = data.manifest.utt_ids
    split = assign_splits(ids, cfg.splits.train, cfg.splits.dev, cfg.splits.seed)
    check_split_hygiene(ids, split)
    return split == 0, split == 1, split == 2


def _need(mask, name, source):
    if not mask.any():
        raise DataError(f"{source}: the {name} split is empty")


def _fit_indicator(cfg, X, y, tr, dv):
    ic = cfg.indicator
    return train_indicator(X[tr], y[tr], X[dv], y[dv], seed=ic.seed, hidden=ic.hidden, lr=ic.lr,
                           max_epochs=ic.max_epochs, patience=ic.patience, min_delta=ic.min_delta)


def _report(cfg, body: dict) -> dict:
    return {"attacker_model": ATTACKER_MODEL, "attacker_note": ATTACKER_NOTE, "config": config_to_dict(cfg), **body}


def cmd_synth(args, cfg):
    data = synthetic_dataset(cfg.world)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_archive(out / "embeddings.semb", data.X)
    write_manifest(out / "manifest.tsv", data.manifest)
    write_truth(out / "truth.tru", data.truth)


def cmd_train_anon(args, cfg):
    data = _data(args)
    if cfg.anonymizer.mode == "selection-average":
        raise UsageError("selection-average has no chains to train; pass --pool to anonymize instead")
    tr, dv, _ = _splits(cfg, data)
    spk = np.asarray(data.manifest.speakers)
    anon = Anonymizer.build(cfg.anonymizer, data.X.shape[1], X_train=data.X[tr], speakers_train=spk[tr])
    write_chains(args.out, anon.chains)


def cmd_anonymize(args, cfg):
    data = _data(args)
    dim = data.X.shape[1]
    acfg = cfg.anonymizer
    if args.model:
        chains = read_chains(args.model)
        if chains[0].dim != dim:
            raise DimensionError(f"{args.model}: chain dim {chains[0].dim} != embedding dim {dim}")
        if not args.mode:
            acfg = replace(acfg, mode="random-chain-utterance-level" if len(chains) > 1 else "trained-chain")
        if acfg.mode == "selection-average":
            raise UsageError("--model cannot be combined with selection-average")
        if acfg.mode != "random-chain-utterance-level" and len(chains) != 1:
            raise DataError(f"{args.model}: mode {acfg.mode} needs exactly one chain, found {len(chains)}")
        anon = Anonymizer(acfg, dim, chains)
    elif acfg.mode == "trained-chain":
        raise UsageError("trained-chain mode needs --model from train-anon")
    elif acfg.mode == "selection-average":
        pool = read_archive(args.pool) if args.pool else external_pool(cfg, dim)
        anon = Anonymizer.build(acfg, dim, pool=pool)
    else:
        anon = Anonymizer.build(acfg, dim)
    Z, audit = anon.anonymize(data.X, data.manifest.utt_ids)
    if args.instance_norm:
        Z = instance_normalize(Z)
    write_archive(args.out, Z)
    atomic_write(str(args.out) + ".audit.tsv", "utt_id\tchain_index\n" + "".join(
        f"{u}\t{a}\n" for u, a in zip(data.manifest.utt_ids, audit)))


def cmd_train_svm(args, cfg):
    data = _data(args)
    y = data.manifest.labels(args.manifest)
    tr, dv, _ = _splits(cfg, data)
    _need(tr, "train", args.manifest)
    dev = (data.X[dv], y[dv]) if dv.any() else None
    sc = cfg.svm
    b = train_all_svms(data.X[tr], y[tr], dev=dev, reg_C=sc.reg_C, epochs=sc.epochs, eta0=sc.eta0)
    write_boundaries(args.out, b)


def cmd_train_indicator(args, cfg):
    data = _data(args)
    y = data.manifest.labels(args.manifest)
    tr, dv, _ = _splits(cfg, data)
    _need(tr, "train", args.manifest)
    _need(dv, "dev", args.manifest)
    write_indicator(args.out, _fit_indicator(cfg, data.X, y, tr, dv))


def _load_models(args, dim):
    boundaries = read_boundaries(args.svm)
    ind = read_indicator(args.indicator)
    for e, b in boundaries.items():
        if b.dim != dim:
            raise DimensionError(f"{args.svm}: boundary dim {b.dim} != embedding dim {dim}")
    if ind.W1.shape[1] != dim:
        raise DimensionError(f"{args.indicator}: indicator input dim {ind.W1.shape[1]} != embedding dim {dim}")
    return boundaries, ind


def cmd_calibrate_alpha(args, cfg):
    data = load_dataset(args.anon, args.manifest)
    y = data.manifest.labels(args.manifest)
    _, dv, _ = _splits(cfg, data)
    _need(dv, "dev", args.manifest)
    boundaries, ind = _load_models(args, data.X.shape[1])
    res = calibrate_alpha(data.X[dv], y[dv], boundaries, ind, cfg.compensation.alpha_grid,
                          skip_neutral=cfg.compensation.skip_neutral)
    write_json(args.out, res.report())


def _alpha_from_calibration(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        chosen = doc["chosen_alpha"]
        return {Emotion.parse(k): float(v) for k, v in chosen.items()}
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: not a calibration file ({exc})") from None


def cmd_compensate(args, cfg):
    data = _data(args)
    Z = _aligned(args.anon, data, "anonymized")
    boundaries, ind = _load_models(args, data.X.shape[1])
    alpha = _alpha_from_calibration(args.calibration) if args.calibration else cfg.alpha_map()
    comp = CompensationConfig(alpha, skip_neutral=cfg.compensation.skip_neutral)
    Zc, chosen = compensate_pipeline(data.X, Z, boundaries, ind, comp)
    write_archive(args.out, Zc)
    atomic_write(str(args.out) + ".choices.tsv", "utt_id\temotion\n" + "".join(
        f"{u}\t{Emotion(int(c)).tag}\n" for u, c in zip(data.manifest.utt_ids, chosen.tolist())))


def cmd_eval_eer(args, cfg):
    data = _data(args)
    E = _aligned(args.enroll, data, "enrollment") if args.enroll else data.X
    trials = build_trials(data.manifest.speakers, cfg.eval.protocol, cfg.eval.max_trials, cfg.eval.seed,
                          emotions=data.manifest.emotions)
    res, scores = eer_for_trials(trials, E, data.X)
    rec = metric_record(cfg.eval.protocol, cfg.eval.seed, eer=res,
                        n_genuine=trials.n_genuine, n_impostor=trials.n_impostor)
    write_json(args.out, _report(cfg, {"metrics": rec}))
    if args.scores:
        write_scores_csv(args.scores, scores, trials.is_same)
    print(f"EER {res.eer:.4f} at threshold {res.threshold:.4f}")


def cmd_eval_uar(args, cfg):
    data = _data(args)
    y = data.manifest.labels(args.manifest)
    if args.indicator:
        ind = read_indicator(args.indicator)
        if ind.W1.shape[1] != data.X.shape[1]:
            raise DimensionError(f"{args.indicator}: indicator input dim {ind.W1.shape[1]} != {data.X.shape[1]}")
        rows = np.ones(len(y), bool)
    else:
        tr, dv, rows = _splits(cfg, data)
        for name, m in (("train", tr), ("dev", dv), ("eval", rows)):
            _need(m, name, args.manifest)
        ind = _fit_indicator(cfg, data.X, y, tr, dv)
    uar, rec = compute_uar(confusion_matrix(y[rows], ind.predict(data.X[rows])))
    write_json(args.out, _report(cfg, {"metrics": metric_record(cfg.eval.protocol, cfg.eval.seed, uar=uar, recall=rec)}))
    print(f"UAR {uar:.4f}")


def cmd_pipeline(args, cfg):
    if (args.inp is None) != (args.manifest is None):
        raise UsageError("--in and --manifest must be given together")
    data = _data(args) if args.inp else None
    res = run_pipeline(cfg, data=data, out_dir=args.out)
    rep = res.report
    for name, r in rep["privacy"].items():
        print(f"EER {name:<22} {r['eer']:.4f}")
    for name, r in rep["utility"].items():
        print(f"UAR {name:<22} {r['uar']:.4f}")


def cmd_export_proj(args, cfg):
    data = _data(args)
    if len(data.X) < 2:
        raise DataError(f"{args.inp}: need at least two rows to project")
    atomic_write(args.out, projection_csv(data.manifest, pca_2d(data.X)))


COMMANDS = {
    "synth": cmd_synth,
    "train-anon": cmd_train_anon,
    "anonymize": cmd_anonymize,
    "train-svm": cmd_train_svm,
    "train-indicator": cmd_train_indicator,
    "calibrate-alpha": cmd_calibrate_alpha,
    "compensate": cmd_compensate,
    "eval-eer": cmd_eval_eer,
    "eval-uar": cmd_eval_uar,
    "pipeline": cmd_pipeline,
    "export-proj": cmd_export_proj,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"emoanon {args.command}: usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"emoanon {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (EmoAnonError, ValueError) as exc:
        print(f"emoanon {args.command}: data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"emoanon {args.command}: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
