"""Scan manifests, stratified scan-level splitting and synthetic data."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .base_learner import PredictionMatrix
from .errors import BadExtents, ClassTooSmall, IoFailure
from .labels import CLASSES, N_CLASSES, label_index, label_name
from .volume_io import Volume, save_volume

MANIFEST_HEADER = ["scan_id", "label", "path"]
# ADNI cohort sizes (AD 77, MCI 145, CN 129) scaled down by ~10
DESK_COUNTS = (8, 14, 13)
DEFAULT_EXTENTS = (32, 32, 150)

# grating cycles across the field of view, indexed by class
_GRATING_CYCLES = (3.0, 5.0, 7.0)
_GRATING_ANGLES = (0.0, np.pi / 3, 2 * np.pi / 3)


@dataclass(frozen=True)
class ScanRecord:
    scan_id: str
    label: int
    path: str = ""

    def __post_init__(self):
        object.__setattr__(self, "label", label_index(self.label))


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie strictly between 0 and 1")


def train_count(n: int, fraction: float) -> int:
    """floor(n * fraction), plus one when the fractional part is >= 0.5."""
    exact = n * fraction
    base = math.floor(exact)
    return base + (1 if exact - base >= 0.5 - 1e-12 else 0)


def stratified_split(records: Sequence[ScanRecord], config: SplitConfig = SplitConfig()) -> tuple:
    """Per-class seeded shuffle, then a round-half-up train share per class.

    Whole scans go to one side, so slices of a scan can never leak across.
    """
    ids = [r.scan_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("scan ids in a manifest must be unique")
    rng = np.random.default_rng(config.seed)
    train, test = [], []
    for c in range(N_CLASSES):
        members = sorted((r for r in records if r.label == c), key=lambda r: r.scan_id)
        if not members:
            continue
        if len(members) < 2:
            raise ClassTooSmall(f"class {CLASSES[c]} has {len(members)} record(s); need >= 2")
        order = rng.permutation(len(members))
        k = train_count(len(members), config.train_fraction)
        train.extend(members[i] for i in order[:k])
        test.extend(members[i] for i in order[k:])
    return train, test


def read_manifest(path) -> list:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != MANIFEST_HEADER:
            raise IoFailure(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        records = []
        for row in reader:
            p = row["path"].strip()
            if p and not Path(p).is_absolute():
                p = str(path.parent / p)
            records.append(ScanRecord(row["scan_id"].strip(), row["label"], p))
    return records


def write_manifest(records: Sequence[ScanRecord], path, relative_to=None) -> None:
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in records:
            p = r.path
            if p:
                p = os.path.relpath(Path(p).resolve(), base.resolve())
            w.writerow([r.scan_id, label_name(r.label), p])


def generate_volume(label, seed: int, extents=DEFAULT_EXTENTS, source_id: str = "") -> Volume:
    """Synthetic head-like volume with a class-dependent texture.

    An ellipsoidal "brain" occupies the central 60% of slices along z; its
    cross-sections carry a sinusoidal grating whose spatial frequency and
    orientation depend on the class, buried in seeded noise. The leading and
    trailing 20% of slices are blank background with sparse speckle, so
    their entropy is near zero while central slices score highest.
    """
    c = label_index(label)
    nx, ny, nz = (int(e) for e in extents)
    if min(nx, ny, nz) < 8:
        raise BadExtents(f"extents must be at least 8 per axis, got {extents}")
    rng = np.random.default_rng([int(seed), c])

    x = (np.arange(nx) - (nx - 1) / 2) / nx
    y = (np.arange(ny) - (ny - 1) / 2) / ny
    gx, gy = np.meshgrid(x, y, indexing="ij")
    theta = _GRATING_ANGLES[c]
    phase = rng.normal(0.0, 0.3)
    grating = np.sin(2 * np.pi * _GRATING_CYCLES[c] * (gx * np.cos(theta) + gy * np.sin(theta)) + phase)
    radius2 = gx**2 + gy**2

    amplitude = 0.25 * rng.uniform(0.8, 1.2)
    zc, hz = (nz - 1) / 2, 0.3 * nz
    data = np.zeros((nx, ny, nz))
    for k in range(nz):
        u = (k - zc) / hz
        if abs(u) < 1:
            disk = radius2 <= (0.45**2) * (1 - u * u)
            tissue = 1.0 + amplitude * grating + rng.normal(0.0, 1.0, size=(nx, ny))
            data[:, :, k] = np.where(disk, tissue + 2.0, 0.0)
        else:
            speckle = rng.random((nx, ny)) < 0.002
            data[:, :, k] = speckle * 1.0
    return Volume(data, voxel_size_mm=(1.25, 1.25, 1.2), source_id=source_id)


def generate_dataset(
    out_dir,
    counts: Sequence[int] = DESK_COUNTS,
    seed: int = 0,
    extents=DEFAULT_EXTENTS,
    datatype="float32",
) -> list:
    """Write one NIfTI file per synthetic scan plus ``manifest.csv``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        records = []
        for c, n in enumerate(counts):
            for i in range(int(n)):
                scan_id = f"{CLASSES[c]}_{i:03d}"
                vol = generate_volume(c, seed * 10007 + i, extents, source_id=scan_id)
                path = out_dir / f"{scan_id}.nii"
                save_volume(vol, path, datatype=datatype)
                records.append(ScanRecord(scan_id, c, str(path)))
        write_manifest(records, out_dir / "manifest.csv")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return records


def simulate_predictions(truth, accuracy: float, rng, model_id: str = "sim", ids=None) -> PredictionMatrix:
    """Synthetic classifier output: correct with probability ``accuracy``.

    Wrong answers are spread uniformly over the other classes; each row is a
    random probability vector whose maximum sits on the chosen class.
    """
    y = np.array([label_index(v) for v in truth])
    n = y.size
    wrong = rng.integers(1, N_CLASSES, size=n)
    chosen = np.where(rng.random(n) < accuracy, y, (y + wrong) % N_CLASSES)
    rows = rng.dirichlet(np.ones(N_CLASSES), size=n)
    top = rows.argmax(axis=1)
    r = np.arange(n)
    rows[r, top], rows[r, chosen] = rows[r, chosen], rows[r, top].copy()
    if ids is None:
        ids = [str(i) for i in range(n)]
    return PredictionMatrix(model_id, ids, rows)
