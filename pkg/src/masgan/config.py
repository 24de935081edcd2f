"""Run configuration: a sectioned YAML (or JSON) document validated up front."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .calibration import DEFAULT_SEED_COUNT, Grid
from .errors import ConfigError, MasganError
from .gan import GanConfig
from .simulator import MarketMakerConfig, OUParams, SimParams

SECTIONS = ("simulator", "data", "gan", "calibration", "evaluation", "output_dir", "seed")
OUT_ENV = "MASGAN_OUT"


@dataclass(frozen=True)
class DataConfig:
    bar_seconds: int = 60
    window_len: int = 60
    sessions: int = 64
    input_dir: str | None = None  # CSVs for build-dataset; default <output_dir>/sessions


@dataclass(frozen=True)
class CalibrationConfig:
    n_values: tuple = ()
    lambda_values: tuple = ()
    seeds: tuple = ()
    windowed: bool = False


@dataclass(frozen=True)
class EvaluationConfig:
    n_samples: int = 512
    heldout_sessions: int = 0  # extra simulated real sessions; 0 reuses the dataset


@dataclass(frozen=True)
class RunConfig:
    simulator: SimParams
    data: DataConfig
    gan: GanConfig
    calibration: CalibrationConfig
    evaluation: EvaluationConfig
    output_dir: Path
    seed: int = 0
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def grid(self) -> Grid:
        return Grid(self.calibration.n_values, self.calibration.lambda_values)

    @property
    def calibration_seeds(self) -> list[int]:
        return list(self.calibration.seeds) or list(range(DEFAULT_SEED_COUNT))

    def session_seeds(self, base: int | None = None) -> list[int]:
        b = self.seed if base is None else base
        return [b + i for i in range(self.data.sessions)]

    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _float(v):
    # YAML 1.1 reads "1e-13" (no dot) as a string
    return float(v) if isinstance(v, str) else v


def _build(cls, section: dict, name: str, errors: list[str], floats=(), nested=None):
    section = dict(section or {})
    known = {f.name for f in dataclasses.fields(cls)}
    for k in sorted(set(section) - known):
        errors.append(f"{name}.{k}: unknown field")
        section.pop(k)
    for k in floats:
        if k in section:
            try:
                section[k] = _float(section[k])
            except ValueError:
                errors.append(f"{name}.{k}: not a number: {section[k]!r}")
                section.pop(k)
    for k, sub_cls in (nested or {}).items():
        if k in section:
            sub = _build(sub_cls, section[k], f"{name}.{k}", errors, floats=[f.name for f in dataclasses.fields(sub_cls)])
            if sub is None:
                section.pop(k)
            else:
                section[k] = sub
    try:
        return cls(**section)
    except (MasganError, TypeError, ValueError) as e:
        errors.extend(f"{name}: {msg}" for msg in str(e).split("; "))
        return None


def _check_fields(obj, name: str, errors: list[str], checks: dict):
    for k, (ok, msg) in checks.items():
        if not ok(getattr(obj, k)):
            errors.append(f"{name}.{k}: {msg}")


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Validate every section; raise one ConfigError listing all violations."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    errors: list[str] = []
    for k in sorted(set(raw) - set(SECTIONS)):
        errors.append(f"{k}: unknown section")

    sim_floats = ["value_rate", "tick_size", "initial_price", "obs_noise_ticks"]
    sim = _build(SimParams, raw.get("simulator"), "simulator", errors, sim_floats, {"mm": MarketMakerConfig, "ou": OUParams})
    data = _build(DataConfig, raw.get("data"), "data", errors)
    if data is not None:
        _check_fields(data, "data", errors, {
            "bar_seconds": (lambda v: isinstance(v, int) and v > 0, "must be a positive integer"),
            "window_len": (lambda v: isinstance(v, int) and v > 0, "must be a positive integer"),
            "sessions": (lambda v: isinstance(v, int) and v > 0, "must be a positive integer"),
        })
        if sim is not None and isinstance(data.bar_seconds, int) and data.bar_seconds > 0:
            if sim.session_seconds % data.bar_seconds:
                errors.append("data.bar_seconds: must divide simulator.session_seconds")
            elif isinstance(data.window_len, int) and sim.session_seconds // data.bar_seconds < data.window_len:
                errors.append("data.window_len: longer than the bars in one session")
        if data.input_dir is not None:
            p = Path(data.input_dir)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            if not p.is_dir():
                errors.append(f"data.input_dir: directory not found: {p}")
            else:
                data = dataclasses.replace(data, input_dir=str(p))

    gan = _build(GanConfig, raw.get("gan"), "gan", errors, ["gp_lambda", "learning_rate", "critic_learning_rate", "dropout_rate", "drift"])
    cal_raw = dict(raw.get("calibration") or {})
    if "lambda_values" in cal_raw:
        try:
            cal_raw["lambda_values"] = [_float(x) for x in cal_raw["lambda_values"]]
        except (TypeError, ValueError):
            errors.append("calibration.lambda_values: must be a list of numbers")
            cal_raw.pop("lambda_values")
    for k in ("n_values", "lambda_values", "seeds"):
        if k in cal_raw:
            cal_raw[k] = tuple(cal_raw[k])
    cal = _build(CalibrationConfig, cal_raw, "calibration", errors)
    if cal is not None and (cal.n_values or cal.lambda_values):
        try:
            grid = Grid(cal.n_values, cal.lambda_values)
            if sim is not None:
                for (i, j), _, _ in grid.cells():
                    try:
                        grid.params_at(sim, i, j)
                    except ConfigError as e:
                        errors.append(f"calibration grid cell ({i}, {j}): {e}")
        except MasganError as e:
            errors.append(f"calibration: {e}")
    if cal is not None and not all(isinstance(s, int) and s >= 0 for s in cal.seeds):
        errors.append("calibration.seeds: must be non-negative integers")
    ev = _build(EvaluationConfig, raw.get("evaluation"), "evaluation", errors)
    if ev is not None:
        _check_fields(ev, "evaluation", errors, {
            "n_samples": (lambda v: isinstance(v, int) and v > 1, "must be an integer > 1"),
            "heldout_sessions": (lambda v: isinstance(v, int) and v >= 0, "must be a non-negative integer"),
        })

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        errors.append("seed: must be a non-negative integer")
    out = os.environ.get(OUT_ENV) or raw.get("output_dir")
    if not out:
        errors.append(f"output_dir: required (or set {OUT_ENV})")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    out = Path(out)
    if base_dir is not None and not out.is_absolute() and not os.environ.get(OUT_ENV):
        out = base_dir / out
    return RunConfig(sim, data, gan, cal, ev, out, seed, raw)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    return parse_config(raw, path.parent)
