"""Command-line front end.

Every subcommand reads and writes only the documented CSV/JSON/NIfTI
formats, so each can be used on its own. Failures print one line,
``error <module>.<Code>: <message>``, and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .base_learner import (
    TrainConfig,
    load_model,
    load_predictions,
    predict_proba,
    save_model,
    train,
    write_predictions,
)
from .config import WORK_DIR_ENV, load_config
from .dataset import (
    DEFAULT_EXTENTS,
    DESK_COUNTS,
    ScanRecord,
    SplitConfig,
    generate_dataset,
    read_manifest,
    stratified_split,
    write_manifest,
)
from .ensemble import (
    aggregate_by_scan,
    load_stacking_model,
    majority_vote,
    mean_scores,
    save_stacking_model,
    select_top_k_models,
    stack_predict,
    stack_train,
    tie_fraction,
    write_votes,
)
from .errors import EntrovoteError, UsageError
from .metrics import metrics_report
from .pipeline import (
    evaluate,
    read_features,
    read_sample_manifest,
    run_pipeline,
    sample_id,
    sample_volume,
    truth_for,
    write_features,
    write_json,
    write_sample_manifest,
)
from .preprocess import PreprocessConfig, flatten_features, preprocess_slice
from .sampling import SampleSpec
from .volume_io import extract_slices, load_volume, parse_header


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def _named(spec: str) -> tuple:
    """``name=path`` or plain ``path`` (name = file stem)."""
    if "=" in spec:
        name, path = spec.split("=", 1)
        return name, path
    return Path(spec).stem, spec


def _seed(args, cfg=None) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return cfg.seed if cfg else 0


def _cfg(args):
    return load_config(args.config) if getattr(args, "config", None) else None


def _records(args) -> list:
    return read_manifest(args.manifest)


# --- subcommands ---------------------------------------------------------


def cmd_synth(args):
    counts = args.counts or DESK_COUNTS
    records = generate_dataset(args.out, counts, _seed(args), args.extents or DEFAULT_EXTENTS, args.datatype)
    print(f"wrote {len(records)} volumes and {Path(args.out) / 'manifest.csv'}")


def cmd_inspect(args):
    raw = Path(args.path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        import gzip

        raw = gzip.decompress(raw)
    header = parse_header(raw)
    vol = load_volume(args.path)
    info = header.as_dict()
    info["extents"] = list(vol.extents)
    info["intensity"] = {"min": float(vol.data.min()), "max": float(vol.data.max()), "mean": float(vol.data.mean())}
    print(json.dumps(info, indent=1))


def _sample_spec(args, cfg) -> SampleSpec:
    base = cfg.sampling if cfg else SampleSpec.parse("top50")
    strategy = args.strategy or base.label
    return SampleSpec.parse(
        strategy,
        trim_head=base.trim_head if args.trim_head is None else args.trim_head,
        trim_tail=base.trim_tail if args.trim_tail is None else args.trim_tail,
        bin_count=base.bin_count if args.bins is None else args.bins,
    )


def _inputs(args) -> list:
    if args.manifest:
        return read_manifest(args.manifest)
    records = []
    for p in args.volumes:
        name = Path(p).name.replace(".nii.gz", "").replace(".nii", "")
        records.append(ScanRecord(name, 0, p))
    return records


def cmd_sample(args):
    cfg = _cfg(args)
    spec = _sample_spec(args, cfg)
    axis = args.axis or (cfg.axis if cfg else "z")
    rows = []
    for rec in _inputs(args):
        vol = load_volume(rec.path)
        vol = type(vol)(vol.data, vol.voxel_size_mm, rec.scan_id)
        scan_rows, _ = sample_volume(vol, spec, axis)
        rows.extend(scan_rows)
    write_sample_manifest(rows, args.out)
    if args.figure:
        from .report import plot_entropy_profile

        plot_entropy_profile(rows, args.figure, title=f"Slice entropy ({spec.label})")
    print(f"{sum(r[3] for r in rows)} of {len(rows)} slices selected ({spec.label})")


def cmd_preprocess(args):
    cfg = _cfg(args)
    base = cfg.preprocess if cfg else PreprocessConfig()
    pre = PreprocessConfig(
        (args.height or base.target[0], args.width or base.target[1]),
        args.normalization or base.normalization,
    )
    axis = args.axis or (cfg.axis if cfg else "z")
    wanted = {}
    for scan, idx, _, sel in read_sample_manifest(args.samples):
        if sel:
            wanted.setdefault(scan, set()).add(idx)
    records = {r.scan_id: r for r in read_manifest(args.manifest)}
    ids, feats, scans = [], [], []
    for scan in sorted(wanted):
        if scan not in records:
            raise UsageError(f"scan {scan!r} from the sample manifest is not in {args.manifest}")
        vol = load_volume(records[scan].path)
        for slc in extract_slices(vol, axis):
            if slc.index in wanted[scan]:
                ids.append(sample_id(scan, slc.index))
                feats.append(flatten_features(preprocess_slice(slc, pre)))
                scans.append(scan)
    from .pipeline import FeatureTable

    table = FeatureTable(ids, np.array(feats).reshape(len(ids), -1), pre.target, scans)
    write_features(table, args.out, pre, axis)
    print(f"wrote {len(ids)} feature rows of {pre.target[0]}x{pre.target[1]}")


def cmd_split(args):
    cfg = _cfg(args)
    fraction = args.fraction if args.fraction is not None else (cfg.split.train_fraction if cfg else 0.75)
    train_recs, test_recs = stratified_split(_records(args), SplitConfig(fraction, _seed(args, cfg)))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(train_recs, out / "train.csv", relative_to=out)
    write_manifest(test_recs, out / "test.csv", relative_to=out)
    print(f"{len(train_recs)} train / {len(test_recs)} test scans")


def _train_config(args, cfg) -> TrainConfig:
    base = cfg.training if cfg else TrainConfig()
    return TrainConfig(
        epochs=base.epochs if args.epochs is None else args.epochs,
        learning_rate=base.learning_rate if args.lr is None else args.lr,
        batch_size=base.batch_size if args.batch_size is None else args.batch_size,
        seed=_seed(args, cfg),
    )


def cmd_train_base(args):
    cfg = _cfg(args)
    table = read_features(args.features)
    records = _records(args)
    rows = table.rows_for(r.scan_id for r in records)
    if rows.size == 0:
        raise UsageError("no feature rows belong to scans in the manifest")
    y = truth_for([table.ids[i] for i in rows], records)
    model = train(table.features[rows], y, _train_config(args, cfg))
    save_model(model, args.out)
    print(f"trained on {rows.size} samples; final loss {model.loss_history[-1] if model.loss_history else float('nan'):.6g}")


def cmd_predict(args):
    table = read_features(args.features)
    rows = np.arange(len(table.ids))
    if args.manifest:
        rows = table.rows_for(r.scan_id for r in _records(args))
    model = load_model(args.model)
    model_id = args.model_id or Path(args.model).stem
    pred = predict_proba(model, table.features[rows], [table.ids[i] for i in rows], model_id)
    write_predictions(pred, args.out)
    print(f"wrote {len(pred)} predictions")


def cmd_ingest(args):
    pred = load_predictions(args.input)
    if args.manifest:
        truth_for(pred.ids, _records(args))
    write_predictions(pred, args.out)
    print(f"ingested {len(pred)} rows from {args.input}")


def _load_named(specs) -> list:
    return [load_predictions(path, name) for name, path in map(_named, specs)]


def cmd_select_top(args):
    records = _records(args)
    recalls = {}
    for pred in _load_named(args.predictions):
        recalls[pred.model_id] = metrics_report(truth_for(pred.ids, records), pred.predicted()).macro["recall"]
    selected = select_top_k_models(recalls, args.k)
    result = {"recalls": {m: float(f"{v:.6g}") for m, v in recalls.items()}, "selected": selected, "k": args.k}
    if args.out:
        write_json(result, args.out)
    print(" ".join(selected))


def _aligned_to_first(bases) -> list:
    ids = bases[0].ids
    return [b.reindex(ids) for b in bases]


def cmd_stack(args):
    cfg = _cfg(args)
    if args.model:
        model = load_stacking_model(args.model)
    else:
        if not args.train or not args.manifest:
            raise UsageError("stack needs --train and --manifest unless --model is given")
        train_bases = _aligned_to_first(_load_named(args.train))
        labels = truth_for(train_bases[0].ids, _records(args))
        model = stack_train(train_bases, labels, _train_config(args, cfg))
        if args.model_out:
            save_stacking_model(model, args.model_out)
    apply = _aligned_to_first(_load_named(args.apply))
    pred = stack_predict(model, apply, "stacking")
    write_predictions(pred, args.out)
    print(f"stacked {len(pred)} samples over {', '.join(model.base_order)}")


def cmd_vote(args):
    if len(args.predictions) != 3:
        raise UsageError("vote takes exactly three prediction files")
    bases = _aligned_to_first(_load_named(args.predictions))
    if args.granularity == "scan":
        bases = [aggregate_by_scan(b) for b in bases]
    results = majority_vote(bases)
    write_votes(results, args.out)
    if args.scores_out:
        write_predictions(mean_scores(bases), args.scores_out)
    print(f"{len(results)} decisions, tie fraction {tie_fraction(results):.4f}")


def cmd_eval(args):
    pred = load_predictions(args.predictions, args.name)
    if args.granularity == "scan":
        pred = aggregate_by_scan(pred)
    decisions = None
    if args.votes:
        from .ensemble import VOTE_HEADER
        import csv

        with open(args.votes, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != VOTE_HEADER:
                raise UsageError(f"{args.votes}: expected header {','.join(VOTE_HEADER)}")
            by_id = {r["id"]: r["decision"] for r in reader}
        from .labels import label_index

        decisions = [label_index(by_id[i]) for i in pred.ids]
    summary = evaluate(pred, _records(args), args.out_dir, args.name, not args.no_figures, decisions)
    print(json.dumps({"accuracy": round(summary["accuracy"], 6), "macro": {k: round(v, 6) for k, v in summary["macro"].items()}}))


def cmd_roc(args):
    from .metrics import roc_one_vs_all, write_roc_csv

    pred = load_predictions(args.predictions)
    if args.granularity == "scan":
        pred = aggregate_by_scan(pred)
    truth = truth_for(pred.ids, _records(args))
    curves = [roc_one_vs_all(pred, truth, c) for c in sorted(set(truth.tolist()))]
    write_roc_csv(curves, args.out)
    if not args.no_figures:
        from .report import plot_roc

        plot_roc(curves, Path(args.out).with_suffix(".png"))
    print(" ".join(f"{c.label}:{c.auc:.4f}" for c in curves))


def cmd_pipeline(args):
    overrides = list(args.set or [])
    if args.strategy:
        overrides.append(f"sampling.strategy={args.strategy}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)
    if args.work_dir:
        cfg.work_dir = args.work_dir
    log = (lambda *_: None) if args.quiet else print
    summary = run_pipeline(cfg, log=log)
    for name, entry in summary["models"].items():
        log(f"{name:>14}: macro recall {entry['macro']['recall']:.3f}  accuracy {entry['accuracy']:.3f}")


def cmd_regimes(args):
    import csv

    from .pipeline import SEED_BASE, SEED_SPLIT, batch_size_for, regime_experiment
    from .report import plot_regime_comparison

    cfg = load_config(args.config, list(args.set or []))
    specs = [SampleSpec.parse(s, trim_head=cfg.sampling.trim_head, trim_tail=cfg.sampling.trim_tail)
             for s in args.strategies.split(",")]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = _seed(args, cfg)
    results = {s.label: [] for s in specs}
    rows = []
    for seed in range(root, root + args.seeds):
        records = generate_dataset(out / "data" / f"seed_{seed}", cfg.synth_counts, seed,
                                   cfg.synth_extents, cfg.synth_datatype)
        for spec in specs:
            t = cfg.training
            tcfg = TrainConfig(t.epochs, t.learning_rate, batch_size_for(spec, t.batch_size), seed + SEED_BASE)
            res = regime_experiment(records, spec, cfg.preprocess, tcfg,
                                    SplitConfig(cfg.split.train_fraction, seed + SEED_SPLIT), cfg.axis)
            rep = res["report"]
            results[spec.label].append(rep.macro["recall"])
            rows.append([seed, spec.label, res["n_train"], res["n_test"],
                         f"{rep.macro['recall']:.6g}", f"{rep.macro['precision']:.6g}", f"{rep.accuracy:.6g}"])
    with open(out / "regimes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "strategy", "n_train", "n_test", "macro_recall", "macro_precision", "accuracy"])
        w.writerows(rows)
    if not args.no_figures:
        plot_regime_comparison(results, out / "regimes.png")
    for label, values in results.items():
        print(f"{label:>6}: mean macro recall {np.mean(values):.3f} over {len(values)} seeds")


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="entrovote", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--seed", type=int, default=None, help="root seed")
    p.add_argument("--config", default=None, help="TOML pipeline config")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=func)
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--counts", type=_ints, help="per-class scan counts AD,MCI,CN")
    sp.add_argument("--extents", type=_ints, help="nx,ny,nz")
    sp.add_argument("--datatype", default="float32")

    sp = add("inspect", cmd_inspect, "print a NIfTI header as JSON")
    sp.add_argument("path")

    sp = add("sample", cmd_sample, "score slices by entropy and mark the selection")
    sp.add_argument("volumes", nargs="*")
    sp.add_argument("--manifest")
    sp.add_argument("--strategy", help="max1, topK (e.g. top50) or all")
    sp.add_argument("--trim-head", type=int)
    sp.add_argument("--trim-tail", type=int)
    sp.add_argument("--bins", type=int)
    sp.add_argument("--axis", choices=["x", "y", "z"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--figure", help="also plot the entropy profile to this PNG")

    sp = add("preprocess", cmd_preprocess, "resize/normalize selected slices into a features CSV")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--samples", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--height", type=int)
    sp.add_argument("--width", type=int)
    sp.add_argument("--normalization", choices=["minmax", "zscore"])
    sp.add_argument("--axis", choices=["x", "y", "z"])

    sp = add("split", cmd_split, "stratified scan-level train/test split")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--fraction", type=float)
    sp.add_argument("--out-dir", required=True)

    def training_flags(sp):
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", type=int)

    sp = add("train-base", cmd_train_base, "train the built-in linear softmax learner")
    sp.add_argument("--features", required=True)
    sp.add_argument("--manifest", required=True, help="labels; only these scans are used")
    sp.add_argument("--out", required=True)
    training_flags(sp)

    sp = add("predict", cmd_predict, "write a prediction CSV from a saved model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--manifest", help="restrict to these scans")
    sp.add_argument("--model-id")
    sp.add_argument("--out", required=True)

    sp = add("ingest", cmd_ingest, "validate an external prediction CSV")
    sp.add_argument("input")
    sp.add_argument("--manifest", help="check every id has a label")
    sp.add_argument("--out", required=True)

    sp = add("select-top", cmd_select_top, "pick the top-k models by macro recall")
    sp.add_argument("predictions", nargs="+", help="[name=]path.csv")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--out")

    sp = add("stack", cmd_stack, "train/apply the perceptron stacking ensemble")
    sp.add_argument("--train", nargs="+", help="[name=]path.csv base predictions for training")
    sp.add_argument("--apply", nargs="+", required=True, help="[name=]path.csv base predictions to combine")
    sp.add_argument("--manifest", help="labels for the training predictions")
    sp.add_argument("--model", help="use a saved stacking model instead of training")
    sp.add_argument("--model-out")
    sp.add_argument("--out", required=True)
    training_flags(sp)

    sp = add("vote", cmd_vote, "majority vote over three prediction CSVs")
    sp.add_argument("predictions", nargs="+")
    sp.add_argument("--out", required=True)
    sp.add_argument("--scores-out", help="mean softmax rows, for ROC")
    sp.add_argument("--granularity", choices=["slice", "scan"], default="slice")

    sp = add("eval", cmd_eval, "metrics JSON + confusion CSV")
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--votes", help="vote CSV whose decisions replace the argmax")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--name", default="model")
    sp.add_argument("--granularity", choices=["slice", "scan"], default="slice")
    sp.add_argument("--no-figures", action="store_true")

    sp = add("roc", cmd_roc, "one-vs-all ROC curves as CSV")
    sp.add_argument("--predictions", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--granularity", choices=["slice", "scan"], default="slice")
    sp.add_argument("--no-figures", action="store_true")

    sp = add("regimes", cmd_regimes, "compare sampling regimes on synthetic data over several seeds")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--strategies", default="max1,top50,all")
    sp.add_argument("--seeds", type=int, default=10)
    sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    sp.add_argument("--no-figures", action="store_true")

    sp = add("pipeline", cmd_pipeline, "run the whole chain from a config file")
    sp.add_argument("--work-dir", help=f"overrides ${WORK_DIR_ENV} and paths.work_dir")
    sp.add_argument("--strategy")
    sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    sp.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("no subcommand given")
        args.func(args)
    except EntrovoteError as exc:
        print(f"error {exc.code}: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    except (OSError, ValueError) as exc:
        print(f"error cli.{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
