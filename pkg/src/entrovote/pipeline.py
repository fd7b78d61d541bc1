"""Stage functions shared by the CLI and the experiment drivers."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .base_learner import (
    TrainConfig,
    fmt,
    load_predictions,
    predict_proba,
    save_model,
    train,
    write_predictions,
)
from .dataset import (
    ScanRecord,
    SplitConfig,
    generate_dataset,
    read_manifest,
    stratified_split,
    write_manifest,
)
from .ensemble import (
    aggregate_by_scan,
    majority_vote,
    mean_scores,
    save_stacking_model,
    scan_of,
    select_top_k_models,
    stack_predict,
    stack_train,
    tie_fraction,
    write_votes,
)
from .errors import IdMismatch, KTooLarge
from .labels import CLASSES, as_label_array
from .metrics import metrics_report, roc_one_vs_all, write_confusion_csv, write_roc_csv
from .preprocess import PreprocessConfig, flatten_features, preprocess_slice
from .sampling import MAX_ONE, SampleSpec, rank_slices, select_samples
from .volume_io import extract_slices, load_volume

SAMPLE_HEADER = ["scan_id", "slice_index", "entropy_bits", "selected"]

# seed offsets per stage, fanned out from one root seed
SEED_SYNTH = 0
SEED_SPLIT = 1
SEED_BASE = 100
SEED_STACK = 200


def sample_id(scan_id: str, index: int) -> str:
    return f"{scan_id}:{index}"


@dataclass
class FeatureTable:
    ids: list
    features: np.ndarray
    shape: tuple
    scan_ids: list = field(default_factory=list)

    def rows_for(self, scan_ids) -> np.ndarray:
        wanted = set(scan_ids)
        return np.array([n for n, s in enumerate(self.scan_ids) if s in wanted], dtype=np.int64)


def sample_volume(volume, spec: SampleSpec, axis="z") -> tuple:
    """Manifest rows and the selected slices for one scan."""
    slices = extract_slices(volume, axis)
    scores = rank_slices(slices, spec.bin_count)
    chosen = select_samples(slices, spec, scores=scores)
    picked = {s.index for s in chosen}
    rows = [
        (volume.source_id, sc.index, sc.entropy_bits, int(sc.index in picked))
        for sc in sorted(scores, key=lambda sc: sc.index)
    ]
    return rows, chosen


def build_features(records: Sequence[ScanRecord], spec: SampleSpec, pre: PreprocessConfig, axis="z") -> tuple:
    """Sample and preprocess every scan; returns (sample rows, FeatureTable)."""
    all_rows, ids, feats, scans = [], [], [], []
    for rec in records:
        vol = load_volume(rec.path)
        vol = type(vol)(vol.data, vol.voxel_size_mm, rec.scan_id)
        rows, chosen = sample_volume(vol, spec, axis)
        all_rows.extend(rows)
        for slc in sorted(chosen, key=lambda s: s.index):
            ids.append(sample_id(rec.scan_id, slc.index))
            feats.append(flatten_features(preprocess_slice(slc, pre)))
            scans.append(rec.scan_id)
    dim = pre.target[0] * pre.target[1]
    table = FeatureTable(ids, np.array(feats).reshape(-1, dim), pre.target, scans)
    return all_rows, table


def write_sample_manifest(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_HEADER)
        for scan_id, idx, h, sel in rows:
            w.writerow([scan_id, idx, fmt(h), sel])


def read_sample_manifest(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SAMPLE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SAMPLE_HEADER)}")
        return [
            (r["scan_id"], int(r["slice_index"]), float(r["entropy_bits"]), int(r["selected"]))
            for r in reader
        ]


def write_features(table: FeatureTable, path, pre: PreprocessConfig, axis="z") -> None:
    path = Path(path)
    n_pix = table.features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scan_id", "slice_index", *(f"px_{i}" for i in range(n_pix))])
        for sid, row in zip(table.ids, table.features):
            scan, idx = sid.rsplit(":", 1)
            w.writerow([scan, idx, *(fmt(v) for v in row)])
    sidecar = {
        "height": pre.target[0],
        "width": pre.target[1],
        "normalization": pre.normalization,
        "interpolation": "bilinear-half-pixel",
        "axis": axis,
        "layout": "row-major",
        "n_rows": len(table.ids),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")


def read_features(path) -> FeatureTable:
    path = Path(path)
    sidecar = path.with_suffix(".json")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["scan_id", "slice_index"]:
            raise ValueError(f"{path}: not a features CSV")
        ids, scans, feats = [], [], []
        for row in reader:
            ids.append(sample_id(row[0], int(row[1])))
            scans.append(row[0])
            feats.append([float(v) for v in row[2:]])
    n_pix = len(header) - 2
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        shape = (meta["height"], meta["width"])
    else:
        shape = (1, n_pix)
    return FeatureTable(ids, np.array(feats, dtype=np.float64).reshape(-1, n_pix), shape, scans)


def batch_size_for(spec: SampleSpec, configured: int = 16) -> int:
    """Batch 2 for the single-slice regime, otherwise the configured size."""
    return 2 if spec.strategy == MAX_ONE else configured


def regime_experiment(
    records: Sequence[ScanRecord],
    spec: SampleSpec,
    pre: PreprocessConfig,
    train_cfg: TrainConfig,
    split_cfg: SplitConfig,
    axis="z",
) -> dict:
    """Train the built-in learner under one sampling regime; per-slice test metrics."""
    train_recs, test_recs = stratified_split(records, split_cfg)
    labels = {r.scan_id: r.label for r in records}
    _, table = build_features(records, spec, pre, axis)
    tr = table.rows_for(r.scan_id for r in train_recs)
    te = table.rows_for(r.scan_id for r in test_recs)
    y = as_label_array([labels[table.scan_ids[i]] for i in range(len(table.ids))])
    model = train(table.features[tr], y[tr], train_cfg)
    pred = predict_proba(model, table.features[te], [table.ids[i] for i in te])
    report = metrics_report(y[te], pred.predicted())
    return {"strategy": spec.label, "report": report, "n_train": len(tr), "n_test": len(te)}


def truth_for(ids, records) -> np.ndarray:
    """Labels for sample ids, matched exactly or by the scan part of ``scan:slice``."""
    labels = {r.scan_id: r.label for r in records}
    out = []
    for sid in ids:
        key = sid if sid in labels else scan_of(sid)
        if key not in labels:
            raise IdMismatch(f"no label for sample {sid!r}")
        out.append(labels[key])
    return np.array(out, dtype=np.int64)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def evaluate(pred, records, out_dir, name: str, figures: bool = True, decisions=None) -> dict:
    """Metrics JSON, confusion CSV and ROC CSV (plus PNGs) for one model."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth = truth_for(pred.ids, records)
    predicted = pred.predicted() if decisions is None else np.asarray(decisions)
    report = metrics_report(truth, predicted)
    write_json(report.to_dict(), out_dir / f"{name}_metrics.json")
    write_confusion_csv(report.confusion, out_dir / f"{name}_confusion.csv")
    present = sorted(set(truth.tolist()))
    curves = [roc_one_vs_all(pred, truth, c) for c in present]
    write_roc_csv(curves, out_dir / f"{name}_roc.csv")
    if figures:
        from .report import plot_confusion, plot_roc

        plot_confusion(report.confusion, out_dir / f"{name}_confusion.png", title=name)
        plot_roc(curves, out_dir / f"{name}_roc.png", title=f"{name}: one-vs-all ROC")
    return {
        "accuracy": report.accuracy,
        "macro": report.macro,
        "auc": {CLASSES[c.label]: c.auc for c in curves},
    }


def run_pipeline(cfg, log=print) -> dict:
    """synth -> sample -> preprocess -> split -> base learners -> select-top
    -> stack / vote -> eval -> roc, all under ``cfg.work_dir``."""
    work = Path(cfg.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    write_json(cfg.echo(), work / "config.json")
    seed = cfg.seed

    if cfg.manifest:
        records = read_manifest(cfg.manifest)
    else:
        log(f"synth: {sum(cfg.synth_counts)} scans -> {work / 'data'}")
        records = generate_dataset(
            work / "data", cfg.synth_counts, seed + SEED_SYNTH, cfg.synth_extents, cfg.synth_datatype
        )

    split_dir = work / "split"
    split_dir.mkdir(exist_ok=True)
    train_recs, test_recs = stratified_split(records, SplitConfig(cfg.split.train_fraction, seed + SEED_SPLIT))
    write_manifest(train_recs, split_dir / "train.csv", relative_to=split_dir)
    write_manifest(test_recs, split_dir / "test.csv", relative_to=split_dir)
    train_ids = {r.scan_id for r in train_recs}
    log(f"split: {len(train_recs)} train / {len(test_recs)} test scans")

    base_dir = work / "base"
    base_dir.mkdir(exist_ok=True)
    bases_train, bases_test = {}, {}
    if cfg.base_train:
        for n, (tr_path, te_path) in enumerate(zip(cfg.base_train, cfg.base_test)):
            name = Path(tr_path).stem
            bases_train[name] = load_predictions(tr_path, name)
            bases_test[name] = load_predictions(te_path, name)
        log(f"ingest: {len(bases_train)} external base models")
    else:
        rows, table = build_features(records, cfg.sampling, cfg.preprocess, cfg.axis)
        write_sample_manifest(rows, work / "samples.csv")
        write_features(table, work / "features.csv", cfg.preprocess, cfg.axis)
        if cfg.figures:
            from .report import plot_entropy_profile

            plot_entropy_profile(rows, work / "samples.png", title=f"Slice entropy ({cfg.sampling.label})")
        log(f"sample: {cfg.sampling.label}, {len(table.ids)} slices selected")
        tr = table.rows_for(train_ids)
        te = table.rows_for({r.scan_id for r in test_recs})
        y = truth_for(table.ids, records)
        bs = batch_size_for(cfg.sampling, cfg.training.batch_size)
        for i in range(cfg.n_base):
            name = f"base_{i}"
            tcfg = TrainConfig(cfg.training.epochs, cfg.training.learning_rate, bs, seed + SEED_BASE + i)
            model = train(table.features[tr], y[tr], tcfg)
            save_model(model, base_dir / f"{name}.json")
            bases_train[name] = predict_proba(model, table.features[tr], [table.ids[k] for k in tr], name)
            bases_test[name] = predict_proba(model, table.features[te], [table.ids[k] for k in te], name)
            write_predictions(bases_train[name], base_dir / f"{name}_train.csv")
            write_predictions(bases_test[name], base_dir / f"{name}_test.csv")
        log(f"train-base: {cfg.n_base} linear softmax models")

    # model selection on the training split keeps the test split untouched
    recalls = {}
    for name, pred in bases_train.items():
        report = metrics_report(truth_for(pred.ids, records), pred.predicted())
        recalls[name] = report.macro["recall"]
    k = min(cfg.top_k, len(recalls))
    selected = select_top_k_models(recalls, k)
    write_json(
        {"recalls": {m: float(fmt(v)) for m, v in recalls.items()}, "selected": selected, "k": k},
        work / "selection.json",
    )
    log(f"select-top: {', '.join(selected)}")

    eval_dir = work / "eval"
    scan_level = cfg.granularity == "scan"

    def at_level(pred):
        return aggregate_by_scan(pred) if scan_level else pred

    summary = {"granularity": cfg.granularity, "averaging": "macro", "selected": selected, "models": {}}
    for name in sorted(bases_test):
        summary["models"][name] = evaluate(at_level(bases_test[name]), records, eval_dir, name, cfg.figures)

    chosen_train = [bases_train[m] for m in selected]
    chosen_test = [bases_test[m] for m in selected]
    if cfg.ensemble in ("stack", "both"):
        stack_dir = work / "stack"
        stack_dir.mkdir(exist_ok=True)
        ids_tr = chosen_train[0].ids
        tcfg = TrainConfig(cfg.training.epochs, cfg.training.learning_rate, cfg.training.batch_size, seed + SEED_STACK)
        stacker = stack_train([b.reindex(ids_tr) for b in chosen_train], truth_for(ids_tr, records), tcfg)
        save_stacking_model(stacker, stack_dir / "model.json")
        ids_te = chosen_test[0].ids
        stacked = stack_predict(stacker, [b.reindex(ids_te) for b in chosen_test], "stacking")
        write_predictions(stacked, stack_dir / "predictions.csv")
        summary["models"]["stacking"] = evaluate(at_level(stacked), records, eval_dir, "stacking", cfg.figures)
        log("stack: single-layer perceptron trained")
    if cfg.ensemble in ("vote", "both"):
        if len(chosen_test) != 3:
            raise KTooLarge(f"majority voting needs exactly 3 base models, have {len(chosen_test)}")
        vote_dir = work / "vote"
        vote_dir.mkdir(exist_ok=True)
        ids_te = chosen_test[0].ids
        level = [at_level(b.reindex(ids_te)) for b in chosen_test]
        results = majority_vote(level)
        scores = mean_scores(level)
        write_votes(results, vote_dir / "votes.csv")
        write_predictions(scores, vote_dir / "scores.csv")
        entry = evaluate(scores, records, eval_dir, "majority_vote", cfg.figures, [r.decision for r in results])
        entry["tie_fraction"] = tie_fraction(results)
        summary["models"]["majority_vote"] = entry
        log(f"vote: tie fraction {entry['tie_fraction']:.4f}")

    write_json(_rounded(summary), work / "summary.json")
    return summary


def _rounded(obj):
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v) for v in obj]
    return obj
