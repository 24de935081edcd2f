"""Bar series, feature vectors and dataset persistence.

A feature vector is the concatenation of the last ``L`` normalized log
returns and the last ``L`` normalized ``log1p`` volumes of a session.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, ParseError

CSV_HEADER = ("bar_index", "mid_price", "volume")
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Bar:
    index: int
    mid_price: float
    volume: float

    def __post_init__(self):
        if not (self.mid_price > 0) or not math.isfinite(self.mid_price):
            raise InvalidInputError(f"bar {self.index}: mid_price must be positive, got {self.mid_price}")
        if not (self.volume >= 0) or not math.isfinite(self.volume):
            raise InvalidInputError(f"bar {self.index}: volume must be non-negative, got {self.volume}")


@dataclass(frozen=True)
class BarSeries:
    bars: tuple[Bar, ...]
    bar_seconds: int
    session_id: str = ""
    seed: int | None = None
    params_ref: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "bars", tuple(self.bars))
        if len(self.bars) < 2:
            raise InvalidInputError(f"a bar series needs at least 2 bars, got {len(self.bars)}")
        if self.bar_seconds <= 0:
            raise InvalidInputError("bar_seconds must be positive")
        for i, bar in enumerate(self.bars):
            if bar.index != i:
                raise InvalidInputError(f"bar ordinals must be consecutive from 0; position {i} has {bar.index}")

    @classmethod
    def from_arrays(cls, mids: Sequence[float], volumes: Sequence[float], bar_seconds: int, **kw) -> "BarSeries":
        bars = tuple(Bar(i, float(m), float(v)) for i, (m, v) in enumerate(zip(mids, volumes, strict=True)))
        return cls(bars, bar_seconds, **kw)

    def __len__(self):
        return len(self.bars)

    @property
    def mids(self) -> np.ndarray:
        return np.array([b.mid_price for b in self.bars], dtype=np.float64)

    @property
    def volumes(self) -> np.ndarray:
        return np.array([b.volume for b in self.bars], dtype=np.float64)


@dataclass(frozen=True)
class NormStats:
    return_mean: float
    return_std: float
    volume_mean: float
    volume_std: float

    def __post_init__(self):
        if not (self.return_std > 0 and self.volume_std > 0):
            raise InvalidInputError("normalization stds must be positive")

    def to_dict(self) -> dict:
        return {
            "return_mean": self.return_mean,
            "return_std": self.return_std,
            "volume_mean": self.volume_mean,
            "volume_std": self.volume_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(float(d["return_mean"]), float(d["return_std"]), float(d["volume_mean"]), float(d["volume_std"]))

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(0.0, 1.0, 0.0, 1.0)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    window_len: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.shape != (2 * self.window_len,):
            raise InvalidInputError(f"feature vector must have length {2 * self.window_len}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("feature vector has non-finite entries")

    @property
    def returns(self) -> np.ndarray:
        return self.values[: self.window_len]

    @property
    def volumes(self) -> np.ndarray:
        return self.values[self.window_len :]

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class Dataset:
    vectors: tuple[FeatureVector, ...]
    norm: NormStats
    bar_seconds: int
    window_len: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "vectors", tuple(self.vectors))
        if any(v.window_len != self.window_len for v in self.vectors):
            raise InvalidInputError("all feature vectors must share window_len")

    def __len__(self):
        return len(self.vectors)

    def as_array(self) -> np.ndarray:
        if not self.vectors:
            return np.empty((0, 2 * self.window_len))
        return np.stack([v.values for v in self.vectors])


def returns_from_bars(series: BarSeries) -> np.ndarray:
    """Log returns between consecutive bars, length ``len(series) - 1``."""
    if len(series.bars) < 2:
        raise InvalidInputError("need at least 2 bars to compute returns")
    mids = series.mids
    if np.any(mids <= 0):
        raise InvalidInputError("mid prices must be positive")
    return np.log(mids[1:] / mids[:-1])


def raw_window(series: BarSeries, window_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Last ``window_len`` raw log returns and raw volumes of ``series``."""
    rets = returns_from_bars(series)
    vols = series.volumes
    if len(rets) < window_len or len(vols) < window_len:
        raise InvalidInputError(
            f"series with {len(series)} bars yields {len(rets)} returns; window needs {window_len}"
        )
    return rets[-window_len:], vols[-window_len:]


def fit_normalization(raw_windows: Iterable[tuple[Sequence[float], Sequence[float]]]) -> NormStats:
    """Population mean/std of returns and of ``log1p(volume)`` over all windows."""
    windows = list(raw_windows)
    if not windows:
        raise InvalidInputError("cannot fit normalization on empty input")
    rets = np.concatenate([np.asarray(r, dtype=np.float64) for r, _ in windows])
    vols = np.log1p(np.concatenate([np.asarray(v, dtype=np.float64) for _, v in windows]))
    if rets.size == 0 or vols.size == 0:
        raise InvalidInputError("cannot fit normalization on empty windows")
    return NormStats(
        return_mean=float(rets.mean()),
        return_std=max(float(rets.std()), STD_FLOOR),
        volume_mean=float(vols.mean()),
        volume_std=max(float(vols.std()), STD_FLOOR),
    )


def normalize_window(returns, volumes, norm: NormStats) -> np.ndarray:
    r = (np.asarray(returns, dtype=np.float64) - norm.return_mean) / norm.return_std
    v = (np.log1p(np.asarray(volumes, dtype=np.float64)) - norm.volume_mean) / norm.volume_std
    return np.concatenate([r, v])


def denormalize(fv: FeatureVector, norm: NormStats) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of the feature transform: raw returns and ``log1p`` volumes."""
    r = fv.returns * norm.return_std + norm.return_mean
    lv = fv.volumes * norm.volume_std + norm.volume_mean
    return r, lv


def build_feature_vector(series: BarSeries, norm: NormStats, window_len: int) -> FeatureVector:
    rets, vols = raw_window(series, window_len)
    return FeatureVector(normalize_window(rets, vols, norm), window_len)


def build_dataset(series_list: Sequence[BarSeries], window_len: int, provenance: dict | None = None) -> Dataset:
    if not series_list:
        raise InvalidInputError("no input series")
    bar_seconds = {s.bar_seconds for s in series_list}
    if len(bar_seconds) != 1:
        raise InvalidInputError(f"mixed bar_seconds across inputs: {sorted(bar_seconds)}")
    windows = [raw_window(s, window_len) for s in series_list]
    norm = fit_normalization(windows)
    vectors = tuple(FeatureVector(normalize_window(r, v, norm), window_len) for r, v in windows)
    return Dataset(vectors, norm, bar_seconds.pop(), window_len, dict(provenance or {}))


# -- CSV ---------------------------------------------------------------------


def export_csv(series: BarSeries, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for bar in series.bars:
            fh.write(f"{bar.index},{bar.mid_price!r},{bar.volume!r}\n")
    return path


def ingest_csv(path, bar_seconds: int = 60, session_id: str | None = None) -> BarSeries:
    """Read a ``bar_index,mid_price,volume`` CSV into a :class:`BarSeries`."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}", line=1)
        bars = []
        prev = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line=lineno)
            try:
                idx = int(row[0])
                mid = float(row[1])
                vol = float(row[2])
            except ValueError as exc:
                raise ParseError(f"malformed row: {exc}", line=lineno) from None
            if not (math.isfinite(mid) and mid > 0):
                raise ParseError(f"mid_price must be positive and finite, got {row[1]}", line=lineno)
            if not (math.isfinite(vol) and vol >= 0):
                raise ParseError(f"volume must be non-negative and finite, got {row[2]}", line=lineno)
            if prev is not None and idx <= prev:
                raise InvalidInputError(f"line {lineno}: bar_index {idx} not sorted after {prev}")
            prev = idx
            bars.append((idx, mid, vol))
    if bars and bars[0][0] != 0:
        raise InvalidInputError("bar_index must start at 0")
    for pos, (idx, _, _) in enumerate(bars):
        if idx != pos:
            raise InvalidInputError(f"bar_index {idx} is not consecutive (expected {pos})")
    return BarSeries(
        tuple(Bar(i, m, v) for i, m, v in bars),
        bar_seconds,
        session_id=session_id if session_id is not None else path.stem,
    )


# -- dataset archive ---------------------------------------------------------


def save_dataset(ds: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "bar_seconds": ds.bar_seconds,
        "window_len": ds.window_len,
        "norm": ds.norm.to_dict(),
        "n_vectors": len(ds.vectors),
        "provenance": ds.provenance,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(directory / "features.csv", "w", encoding="utf-8", newline="") as fh:
        for v in ds.vectors:
            fh.write(",".join(repr(float(x)) for x in v.values) + "\n")
    return directory


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    L = int(meta["window_len"])
    vectors = []
    with open(directory / "features.csv", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values = [float(x) for x in line.split(",")]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            vectors.append(FeatureVector(np.array(values), L))
    return Dataset(tuple(vectors), NormStats.from_dict(meta["norm"]), int(meta["bar_seconds"]), L, meta.get("provenance", {}))
