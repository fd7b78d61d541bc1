"""Pipeline configuration: a sectioned TOML file with command-line overrides."""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .base_learner import TrainConfig
from .dataset import DEFAULT_EXTENTS, DESK_COUNTS, SplitConfig
from .errors import ConfigError
from .preprocess import PreprocessConfig
from .sampling import SampleSpec

WORK_DIR_ENV = "ENTROVOTE_WORK_DIR"

DEFAULTS = {
    "seed": 0,
    "paths": {"manifest": "", "work_dir": "work", "base_train": [], "base_test": []},
    "synth": {"counts": list(DESK_COUNTS), "extents": list(DEFAULT_EXTENTS), "datatype": "float32"},
    "sampling": {"strategy": "top50", "trim_head": 0, "trim_tail": 0, "bin_count": 256, "axis": "z"},
    "preprocess": {"height": 224, "width": 224, "normalization": "minmax"},
    "training": {"epochs": 50, "learning_rate": 0.001, "batch_size": 16, "n_base": 3},
    "split": {"train_fraction": 0.75},
    "ensemble": {"mode": "both", "top_k": 3},
    "evaluation": {"granularity": "slice", "figures": True},
}


@dataclass
class PipelineConfig:
    seed: int
    manifest: str
    work_dir: str
    base_train: list
    base_test: list
    synth_counts: tuple
    synth_extents: tuple
    synth_datatype: str
    axis: str
    sampling: SampleSpec
    preprocess: PreprocessConfig
    training: TrainConfig
    n_base: int
    split: SplitConfig
    ensemble: str
    top_k: int
    granularity: str
    figures: bool
    raw: dict = field(default_factory=dict, repr=False)

    def echo(self) -> dict:
        """Resolved settings, without machine-specific paths."""
        out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in self.raw.items()}
        out["paths"] = {k: v for k, v in out["paths"].items() if k != "work_dir"}
        return out


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if "," in text:
        return [_coerce(t.strip()) for t in text.split(",") if t.strip()]
    return text


def apply_override(raw: dict, assignment: str) -> dict:
    """Apply ``section.key=value`` (or ``seed=3``) to a raw config mapping."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section {p!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key.strip()!r}")
    node[parts[-1]] = _coerce(value.strip())
    return raw


def load_raw(path=None) -> dict:
    raw = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section, values in user.items():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section {section!r}")
            if isinstance(values, dict):
                unknown = set(values) - set(DEFAULTS[section])
                if unknown:
                    raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
        raw = _merge(raw, user)
        base = Path(path).resolve().parent
        if raw["paths"]["manifest"] and not Path(raw["paths"]["manifest"]).is_absolute():
            raw["paths"]["manifest"] = str(base / raw["paths"]["manifest"])
    return raw


def build_config(raw: dict) -> PipelineConfig:
    try:
        s, p, t = raw["sampling"], raw["preprocess"], raw["training"]
        work_dir = os.environ.get(WORK_DIR_ENV) or raw["paths"]["work_dir"]
        cfg = PipelineConfig(
            seed=int(raw["seed"]),
            manifest=str(raw["paths"]["manifest"]),
            work_dir=str(work_dir),
            base_train=list(raw["paths"]["base_train"]),
            base_test=list(raw["paths"]["base_test"]),
            synth_counts=tuple(int(v) for v in raw["synth"]["counts"]),
            synth_extents=tuple(int(v) for v in raw["synth"]["extents"]),
            synth_datatype=str(raw["synth"]["datatype"]),
            axis=str(s["axis"]),
            sampling=SampleSpec.parse(
                str(s["strategy"]),
                trim_head=int(s["trim_head"]),
                trim_tail=int(s["trim_tail"]),
                bin_count=int(s["bin_count"]),
            ),
            preprocess=PreprocessConfig((int(p["height"]), int(p["width"])), str(p["normalization"])),
            training=TrainConfig(
                epochs=int(t["epochs"]),
                learning_rate=float(t["learning_rate"]),
                batch_size=int(t["batch_size"]),
                seed=int(raw["seed"]),
            ),
            n_base=int(t["n_base"]),
            split=SplitConfig(float(raw["split"]["train_fraction"]), int(raw["seed"])),
            ensemble=str(raw["ensemble"]["mode"]),
            top_k=int(raw["ensemble"]["top_k"]),
            granularity=str(raw["evaluation"]["granularity"]),
            figures=bool(raw["evaluation"]["figures"]),
            raw=raw,
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.ensemble not in ("vote", "stack", "both"):
        raise ConfigError(f"ensemble.mode must be vote, stack or both, got {cfg.ensemble!r}")
    if cfg.granularity not in ("slice", "scan"):
        raise ConfigError(f"evaluation.granularity must be slice or scan, got {cfg.granularity!r}")
    if bool(cfg.base_train) != bool(cfg.base_test) or len(cfg.base_train) != len(cfg.base_test):
        raise ConfigError("paths.base_train and paths.base_test must list the same number of files")
    return cfg


def load_config(path=None, overrides=()) -> PipelineConfig:
    raw = load_raw(path)
    for assignment in overrides:
        apply_override(raw, assignment)
    return build_config(raw)
