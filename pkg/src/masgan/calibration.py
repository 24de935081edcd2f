"""Grid search over (N, lambda) against a frozen critic."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, InvalidInputError, MasganError
from .gan import realism_score
from .marketdata import BarSeries, NormStats, build_feature_vector, normalize_window, raw_window
from .simulator import SimParams, run_simulation

DEFAULT_SEED_COUNT = 20


@dataclass(frozen=True)
class Grid:
    n_values: tuple[int, ...]
    lambda_values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "lambda_values", tuple(float(x) for x in self.lambda_values))
        for name, vals in (("n_values", self.n_values), ("lambda_values", self.lambda_values)):
            if not vals:
                raise InvalidInputError(f"grid {name} is empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise InvalidInputError(f"grid {name} must be strictly ascending: {list(vals)}")
        if self.n_values[0] < 0:
            raise InvalidInputError("grid n_values must be >= 0")
        if self.lambda_values[0] < 0 or not all(math.isfinite(x) for x in self.lambda_values):
            raise InvalidInputError("grid lambda_values must be finite and >= 0")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.n_values), len(self.lambda_values)

    def cells(self):
        for i, n in enumerate(self.n_values):
            for j, lam in enumerate(self.lambda_values):
                yield (i, j), n, lam

    def params_at(self, base: SimParams, i: int, j: int) -> SimParams:
        return base.replace(n_noise=self.n_values[i], value_rate=self.lambda_values[j])

    @classmethod
    def around(cls, n_star: int, lam_star: float, n_factors=(0.6, 1.0, 1.4), lam_factors=(1 / 3, 1.0, 3.0)) -> "Grid":
        return cls(tuple(int(round(n_star * f)) for f in n_factors), tuple(lam_star * f for f in lam_factors))

    def to_dict(self) -> dict:
        return {"n_values": list(self.n_values), "lambda_values": list(self.lambda_values)}


@dataclass
class ScoreMatrix:
    mean_score: np.ndarray
    score_std: np.ndarray
    seed_count: int

    def __post_init__(self):
        self.mean_score = np.asarray(self.mean_score, dtype=np.float64)
        self.score_std = np.asarray(self.score_std, dtype=np.float64)
        if self.mean_score.ndim != 2 or self.mean_score.shape != self.score_std.shape:
            raise InvalidInputError("mean_score and score_std must be 2-D with equal shapes")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean_score.shape

    def argmax(self) -> tuple[int, int]:
        # np.argmax returns the first maximum in row-major order: the lexicographic tie-break
        return tuple(int(k) for k in np.unravel_index(int(np.argmax(self.mean_score)), self.shape))


@dataclass
class CalibrationResult:
    grid: Grid
    best_point: tuple[int, float]
    best_index: tuple[int, int]
    score_matrix: ScoreMatrix
    seeds_used: list[int]
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NeighborhoodReport:
    best_index: tuple[int, int]
    neighbor_mean: float
    corner_mean: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "best_index": list(self.best_index),
            "neighbor_mean": self.neighbor_mean,
            "corner_mean": self.corner_mean,
            "passed": self.passed,
        }


# -- scoring ----------------------------------------------------------------------


def session_vectors(series: BarSeries, norm: NormStats, window_len: int, windowed: bool = False) -> np.ndarray:
    """Feature vectors for one session: the final window, or every sliding window."""
    if not windowed:
        return build_feature_vector(series, norm, window_len).values[None, :]
    n_ret = len(series) - 1
    if n_ret < window_len:
        raise InvalidInputError(f"session has {n_ret} returns, window needs {window_len}")
    full_r, full_v = raw_window(series, n_ret)
    out = [
        normalize_window(full_r[s : s + window_len], full_v[s : s + window_len], norm)
        for s in range(n_ret - window_len + 1)
    ]
    return np.stack(out)


def _simulate_vectors(job):
    params, seed, bar_seconds, norm, window_len, windowed = job
    return session_vectors(run_simulation(params, seed, bar_seconds), norm, window_len, windowed)


def _mean_std(scores: Sequence[float]) -> tuple[float, float]:
    s = np.asarray(scores, dtype=np.float64)
    std = float(s.std(ddof=1)) if len(s) > 1 else 0.0
    return float(s.mean()), std


def score_config(
    v: SimParams,
    seeds: Sequence[int],
    critic,
    norm: NormStats,
    bar_seconds: int = 60,
    window_len: int | None = None,
    windowed: bool = False,
) -> tuple[float, float]:
    """Mean and sample std over seeds of the realism score of simulated sessions."""
    if not seeds:
        raise InvalidInputError("seed list is empty")
    L = _window_len(critic, window_len)
    scores = []
    for r in seeds:
        try:
            X = _simulate_vectors((v, int(r), bar_seconds, norm, L, windowed))
        except InvalidInputError as e:
            raise ConfigError(f"seed {r}: {e}") from e
        scores.append(float(np.mean(realism_score(critic, X))))
    return _mean_std(scores)


def _window_len(critic, window_len):
    if window_len is not None:
        return int(window_len)
    shape = getattr(critic, "input_shape", None)
    if not shape:
        raise InvalidInputError("window_len not given and critic has no input_shape")
    return int(shape[0]) // 2


def calibrate(
    grid: Grid,
    base: SimParams,
    seeds: Sequence[int],
    critic,
    norm: NormStats,
    bar_seconds: int = 60,
    window_len: int | None = None,
    windowed: bool = False,
    jobs: int = 1,
    score_fn: Callable[[SimParams, Sequence[int]], tuple[float, float]] | None = None,
    provenance: dict | None = None,
) -> CalibrationResult:
    """Score every grid cell and return the argmax.

    Simulations for all ``(cell, seed)`` pairs may run in ``jobs`` worker
    processes; scoring happens in this process in grid order, so the matrix
    does not depend on ``jobs``. ``score_fn`` replaces the simulate-and-score
    step entirely (used for planted scorers).
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise InvalidInputError("seed list is empty")
    for (i, j), _, _ in grid.cells():
        errs = grid.params_at(base, i, j).validation_errors()
        if errs:
            raise ConfigError(f"grid cell ({i}, {j}) invalid: " + "; ".join(errs))

    rows, cols = grid.shape
    mean = np.zeros((rows, cols))
    std = np.zeros((rows, cols))

    if score_fn is not None:
        for (i, j), n, lam in grid.cells():
            try:
                mean[i, j], std[i, j] = score_fn(grid.params_at(base, i, j), seeds)
            except MasganError as e:
                raise ConfigError(f"cell ({i}, {j}) N={n} lambda={lam!r}: {e}") from e
    else:
        L = _window_len(critic, window_len)
        cells = list(grid.cells())
        jobs_list = [(grid.params_at(base, i, j), r, bar_seconds, norm, L, windowed) for (i, j), _, _ in cells for r in seeds]
        vectors = _run_jobs(jobs_list, jobs, cells, len(seeds))
        k = 0
        for (i, j), _, _ in cells:
            scores = [float(np.mean(realism_score(critic, vectors[k + s]))) for s in range(len(seeds))]
            k += len(seeds)
            mean[i, j], std[i, j] = _mean_std(scores)

    matrix = ScoreMatrix(mean, std, len(seeds))
    bi, bj = matrix.argmax()
    return CalibrationResult(
        grid=grid,
        best_point=(grid.n_values[bi], grid.lambda_values[bj]),
        best_index=(bi, bj),
        score_matrix=matrix,
        seeds_used=seeds,
        provenance=dict(provenance or {}),
    )


def _run_jobs(jobs_list, jobs, cells, n_seeds):
    def annotate(k, e):
        (i, j), n, lam = cells[k // n_seeds]
        seed = jobs_list[k][1]
        return ConfigError(f"cell ({i}, {j}) N={n} lambda={lam!r} seed {seed}: {e}")

    if jobs <= 1:
        out = []
        for k, job in enumerate(jobs_list):
            try:
                out.append(_simulate_vectors(job))
            except MasganError as e:
                raise annotate(k, e) from e
        return out
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_simulate_vectors, job) for job in jobs_list]
        out = []
        for k, f in enumerate(futures):
            try:
                out.append(f.result())
            except MasganError as e:
                raise annotate(k, e) from e
        return out


def neighborhood_report(result: CalibrationResult | ScoreMatrix | np.ndarray) -> NeighborhoodReport:
    """Do the best cell's 4-neighbours outscore the grid corners on average?"""
    if isinstance(result, CalibrationResult):
        m = result.score_matrix.mean_score
    elif isinstance(result, ScoreMatrix):
        m = result.mean_score
    else:
        m = np.asarray(result, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 3 or m.shape[1] < 3:
        raise InvalidInputError(f"neighborhood report needs at least a 3x3 matrix, got {m.shape}")
    bi, bj = ScoreMatrix(m, np.zeros_like(m), 1).argmax()
    rows, cols = m.shape
    nbrs = [m[bi + di, bj + dj] for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)) if 0 <= bi + di < rows and 0 <= bj + dj < cols]
    corners = [m[0, 0], m[0, cols - 1], m[rows - 1, 0], m[rows - 1, cols - 1]]
    nm, cm = float(np.mean(nbrs)), float(np.mean(corners))
    return NeighborhoodReport((bi, bj), nm, cm, nm > cm)


# -- artifacts --------------------------------------------------------------------


def write_matrix_csv(matrix: np.ndarray, grid: Grid, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_noise\\value_rate", *(repr(x) for x in grid.lambda_values)])
        for n, row in zip(grid.n_values, matrix):
            w.writerow([n, *(repr(float(x)) for x in row)])
    return path


def read_matrix_csv(path) -> tuple[Grid, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    lams = [float(x) for x in rows[0][1:]]
    ns = [int(r[0]) for r in rows[1:]]
    return Grid(ns, lams), np.array([[float(x) for x in r[1:]] for r in rows[1:]])


def result_to_dict(result: CalibrationResult) -> dict:
    bi, bj = result.best_index
    return {
        "best_point": {"n_noise": result.best_point[0], "value_rate": result.best_point[1], "row": bi, "col": bj},
        "best_score": float(result.score_matrix.mean_score[bi, bj]),
        "grid": result.grid.to_dict(),
        "seeds": list(result.seeds_used),
        "seed_count": result.score_matrix.seed_count,
        "neighborhood": neighborhood_report(result).to_dict() if min(result.grid.shape) >= 3 else None,
        **result.provenance,
    }


def write_calibration_artifacts(result: CalibrationResult, out_dir) -> list[Path]:
    """score_matrix.csv, score_std.csv, heatmap.svg and calibration.json."""
    from .plotting import plot_heatmap

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [
        write_matrix_csv(result.score_matrix.mean_score, result.grid, out / "score_matrix.csv"),
        write_matrix_csv(result.score_matrix.score_std, result.grid, out / "score_std.csv"),
        plot_heatmap(result.score_matrix.mean_score, result.grid, result.best_index, out / "heatmap.svg"),
    ]
    js = out / "calibration.json"
    js.write_text(json.dumps(result_to_dict(result), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(js)
    return paths
