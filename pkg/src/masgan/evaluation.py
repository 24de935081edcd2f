"""Two-sample KS test, KDEs and return/volume diagnostics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erfc as _erfc

from .errors import DegenerateInputError, InvalidInputError
from .marketdata import BarSeries

KDE_GRID_POINTS = 256
HIST_BINS = 64


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n: int
    m: int

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "n": self.n, "m": self.m}


def kolmogorov_sf(x: float, terms: int = 100) -> float:
    """Survival function of the Kolmogorov distribution, ``P(K > x)``."""
    if x <= 0:
        return 1.0
    if x < 0.2:
        # series converges slowly here and the value is 1 to machine precision
        return 1.0
    k = np.arange(1, terms + 1)
    s = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k**2 * x * x))
    return float(min(1.0, max(0.0, s)))


def ks_statistic(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b) -> KsResult:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("KS test needs two non-empty samples")
    d = ks_statistic(a, b)
    n, m = a.size, b.size
    en = math.sqrt(n * m / (n + m))
    return KsResult(d, kolmogorov_sf(en * d), n, m)


# -- density estimation --------------------------------------------------------------


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def peak(self) -> float:
        return float(self.grid[np.argmax(self.density)])


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=np.float64).ravel()
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(x.std(ddof=1), (q75 - q25) / 1.34)
    if spread <= 0:
        spread = x.std(ddof=1)
    return 0.9 * spread * x.size ** (-0.2)


def _norm_cdf(z):
    return 0.5 * _erfc(-z / math.sqrt(2))


def kde(samples, bandwidth: float | None = None, n_points: int = KDE_GRID_POINTS) -> DensityEstimate:
    """Gaussian KDE on a uniform grid spanning the data +/- 3 bandwidths."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise InvalidInputError("KDE needs at least 2 samples")
    if np.ptp(x) == 0:
        raise DegenerateInputError("KDE input has zero spread")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise DegenerateInputError("bandwidth must be positive")
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, n_points)
    # Each node holds the kernel mass of its trapezoid cell divided by the cell width.
    # Equal to the point-evaluated KDE up to O((step/h)^2), and the trapezoid integral
    # is 1 even when the bandwidth is far below the grid step.
    step = grid[1] - grid[0]
    # end cells absorb the tails so the total mass is exactly one
    lo = np.concatenate([[-np.inf], grid[1:] - step / 2])
    hi = np.concatenate([grid[:-1] + step / 2, [np.inf]])
    mass = np.zeros(n_points)
    for start in range(0, x.size, 4096):
        xs = x[None, start : start + 4096]
        mass += (_norm_cdf((hi[:, None] - xs) / h) - _norm_cdf((lo[:, None] - xs) / h)).sum(axis=1)
    width = np.full(n_points, step)
    width[[0, -1]] = step / 2
    dens = mass / (x.size * width)
    return DensityEstimate(grid, dens, h)


# -- return / volume diagnostics -------------------------------------------------------


@dataclass(frozen=True)
class ReturnStats:
    horizon: int
    returns: np.ndarray
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    mean: float
    std: float
    skew: float
    excess_kurtosis: float


def moments(x) -> tuple[float, float, float, float]:
    """Population mean, std, skewness and excess kurtosis (0 for zero variance)."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean()
    d = x - mu
    var = np.mean(d * d)
    if var == 0:
        return float(mu), 0.0, 0.0, 0.0
    sd = math.sqrt(var)
    return float(mu), sd, float(np.mean(d**3) / sd**3), float(np.mean(d**4) / var**2 - 3.0)


def horizon_returns(mids, h: int) -> np.ndarray:
    """Non-overlapping ``h``-bar log returns."""
    mids = np.asarray(mids, dtype=np.float64)
    n = (len(mids) - 1) // h
    idx = np.arange(n + 1) * h
    return np.log(mids[idx[1:]] / mids[idx[:-1]])


def return_distribution_stats(series: BarSeries | np.ndarray, horizons=(1, 10)) -> dict[int, ReturnStats]:
    mids = series.mids if isinstance(series, BarSeries) else np.asarray(series, dtype=np.float64)
    out = {}
    for h in horizons:
        if h < 1 or len(mids) - 1 < h:
            raise InvalidInputError(f"series of {len(mids)} bars too short for horizon {h}")
        out[h] = _stats(horizon_returns(mids, h), h)
    return out


def return_stats_from_paths(paths, horizons=(1, 10)) -> dict[int, ReturnStats]:
    """Like :func:`return_distribution_stats` but pooling horizon returns over many price paths."""
    paths = [np.asarray(m, dtype=np.float64) for m in paths]
    if not paths:
        raise InvalidInputError("no price paths")
    out = {}
    for h in horizons:
        if h < 1 or min(len(m) for m in paths) - 1 < h:
            raise InvalidInputError(f"paths too short for horizon {h}")
        r = np.concatenate([horizon_returns(m, h) for m in paths])
        out[h] = _stats(r, h)
    return out


def _stats(r: np.ndarray, h: int) -> ReturnStats:
    mu, sd, sk, ku = moments(r)
    lo, hi = (r.min(), r.max()) if np.ptp(r) > 0 else (r[0] - 0.5, r[0] + 0.5)
    counts, edges = np.histogram(r, bins=HIST_BINS, range=(lo, hi))
    return ReturnStats(h, r, counts, edges, mu, sd, sk, ku)


def volume_volatility_correlation(series: BarSeries | tuple) -> float:
    """Pearson correlation of per-bar volume with per-bar absolute log return."""
    if isinstance(series, BarSeries):
        if len(series) < 20:
            raise InvalidInputError("need at least 20 bars")
        vol = series.volumes[1:]
        absret = np.abs(np.log(series.mids[1:] / series.mids[:-1]))
    else:
        vol, absret = (np.asarray(a, dtype=np.float64) for a in series)
        if len(vol) < 20:
            raise InvalidInputError("need at least 20 bars")
    if vol.std() == 0 or absret.std() == 0:
        raise DegenerateInputError("volume or volatility has zero variance")
    c = np.corrcoef(vol, absret)[0, 1]
    return float(np.clip(c, -1.0, 1.0))


# -- critic score distributions --------------------------------------------------------


@dataclass
class ScoreReport:
    scores: dict[str, np.ndarray]
    kdes: dict[str, DensityEstimate | None]
    mean_gap: float
    ks: KsResult
    noise_mean: float

    @property
    def means(self) -> dict[str, float]:
        return {k: float(np.mean(v)) for k, v in self.scores.items()}


def random_feature_set(n: int, window_len: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, 2 * window_len))


def score_distribution_report(critic, real_set, generated_set, noise_set) -> ScoreReport:
    from .gan import realism_score

    sets = {"real": real_set, "generated": generated_set, "random": noise_set}
    scores = {}
    for name, s in sets.items():
        arr = np.asarray(s, dtype=np.float64)
        if arr.size == 0:
            raise InvalidInputError(f"{name} set is empty")
        scores[name] = np.atleast_1d(realism_score(critic, np.atleast_2d(arr)))
    kdes = {}
    for name, s in scores.items():
        try:
            kdes[name] = kde(s)
        except InvalidInputError:
            kdes[name] = None
    return ScoreReport(
        scores=scores,
        kdes=kdes,
        mean_gap=float(abs(scores["real"].mean() - scores["generated"].mean())),
        ks=ks_two_sample(scores["real"], scores["generated"]),
        noise_mean=float(scores["random"].mean()),
    )


# -- report files ----------------------------------------------------------------------


def _write_columns(path, header, cols) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def write_score_report(report: ScoreReport, out_dir) -> list[Path]:
    """scores_*.csv, kde_*.csv, ks_report.json and score_kde.svg."""
    from .plotting import plot_kdes

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, s in report.scores.items():
        paths.append(_write_columns(out / f"scores_{name}.csv", ["score"], [s]))
    for name, d in report.kdes.items():
        if d is not None:
            paths.append(_write_columns(out / f"kde_{name}.csv", ["x", "density"], [d.grid, d.density]))
    ks = {
        **report.ks.to_dict(),
        "mean_gap": report.mean_gap,
        "means": report.means,
        "noise_mean": report.noise_mean,
    }
    js = out / "ks_report.json"
    js.write_text(json.dumps(ks, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(js)
    paths.append(plot_kdes({k: v for k, v in report.kdes.items() if v is not None}, out / "score_kde.svg"))
    return paths


def write_return_report(stats: dict[int, ReturnStats], out_dir, correlation: float | None = None) -> list[Path]:
    """returns_hist_{h}.csv per horizon, returns_stats.json and returns_hist.svg."""
    from .plotting import plot_return_histograms

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    summary = {}
    for h, s in sorted(stats.items()):
        paths.append(
            _write_columns(out / f"returns_hist_{h}.csv", ["bin_left", "bin_right", "count"], [s.hist_edges[:-1], s.hist_edges[1:], s.hist_counts.tolist()])
        )
        summary[str(h)] = {"n": int(s.returns.size), "mean": s.mean, "std": s.std, "skew": s.skew, "excess_kurtosis": s.excess_kurtosis}
    if correlation is not None:
        summary["volume_volatility_correlation"] = correlation
    js = out / "returns_stats.json"
    js.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(js)
    paths.append(plot_return_histograms(stats, out / "returns_hist.svg"))
    return paths
