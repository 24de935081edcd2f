"""``masgan`` command line: simulate, build-dataset, train, calibrate, evaluate."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from .calibration import calibrate, write_calibration_artifacts
from .config import RunConfig, load_config
from .errors import CompatibilityError, ConfigError, InvalidInputError, MasganError
from .evaluation import (
    random_feature_set,
    return_stats_from_paths,
    score_distribution_report,
    volume_volatility_correlation,
    write_return_report,
    write_score_report,
)
from .gan import sample_generator, train
from .manifest import Manifest, atomic_write_text, file_digest
from .marketdata import (
    FeatureVector,
    NormStats,
    build_dataset,
    build_feature_vector,
    denormalize,
    export_csv,
    ingest_csv,
    load_dataset,
    save_dataset,
)
from .nn import Network
from .plotting import plot_training_curves
from .simulator import run_simulation
from .simulator.kernel import params_ref

log = logging.getLogger("masgan")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
SESSION_INDEX = "sessions.json"


# -- layout -----------------------------------------------------------------------


def sessions_dir(cfg: RunConfig) -> Path:
    return Path(cfg.data.input_dir) if cfg.data.input_dir else cfg.output_dir / "sessions"


def dataset_dir(cfg: RunConfig) -> Path:
    return cfg.output_dir / "dataset"


def checkpoint_dir(cfg: RunConfig, role: str) -> Path:
    return cfg.output_dir / "checkpoints" / role


def checkpoint_hash(directory) -> str:
    h = hashlib.sha256()
    for name in ("model.json", "weights.bin"):
        h.update(file_digest(Path(directory) / name).encode())
    return h.hexdigest()


# -- subcommands ------------------------------------------------------------------


def _simulate_one(job):
    params, seed, bar_seconds, path = job
    return export_csv(run_simulation(params, seed, bar_seconds), path)


def cmd_simulate(cfg: RunConfig, seed: int | None = None, jobs: int = 1) -> Path:
    seeds = cfg.session_seeds(seed)
    out = cfg.output_dir / "sessions"
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("simulate", cfg.config_hash(), seeds)
    job_list = [(cfg.simulator, s, cfg.data.bar_seconds, out / f"session_{s:06d}.csv") for s in seeds]
    log.info("simulating %d sessions (%s)", len(seeds), params_ref(cfg.simulator))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            paths = list(pool.map(_simulate_one, job_list))
    else:
        paths = [_simulate_one(j) for j in job_list]
    index = {
        p.name: {"seed": s, "bar_seconds": cfg.data.bar_seconds, "params": params_ref(cfg.simulator)}
        for p, s in zip(paths, seeds)
    }
    idx = atomic_write_text(out / SESSION_INDEX, json.dumps(index, indent=2, sort_keys=True) + "\n")
    man.add_artifacts([*paths, idx], cfg.output_dir)
    return man.write(cfg.output_dir)


def _read_sessions(cfg: RunConfig):
    src = sessions_dir(cfg)
    files = sorted(src.glob("*.csv"))
    if not files:
        raise InvalidInputError(f"no session CSVs in {src}")
    bar_seconds = {}
    index_path = src / SESSION_INDEX
    if index_path.is_file():
        index = json.loads(index_path.read_text(encoding="utf-8"))
        bar_seconds = {name: int(v["bar_seconds"]) for name, v in index.items()}
    found = {bar_seconds.get(f.name, cfg.data.bar_seconds) for f in files}
    if len(found) > 1:
        raise InvalidInputError(f"input sessions mix bar lengths {sorted(found)}")
    if found != {cfg.data.bar_seconds}:
        raise InvalidInputError(f"input sessions use T={found.pop()} s but config has data.bar_seconds={cfg.data.bar_seconds}")
    series = [ingest_csv(f, cfg.data.bar_seconds, session_id=f.stem) for f in files]
    return files, series


def cmd_build_dataset(cfg: RunConfig, seed: int | None = None, jobs: int = 1) -> Path:
    files, series = _read_sessions(cfg)
    man = Manifest("build-dataset", cfg.config_hash())
    man.add_inputs(files, cfg.output_dir)
    ds = build_dataset(series, cfg.data.window_len, provenance={"sessions": [f.name for f in files]})
    out = save_dataset(ds, dataset_dir(cfg))
    log.info("dataset: %d vectors of length %d", len(ds.vectors), 2 * ds.window_len)
    man.add_artifacts([out], cfg.output_dir)
    return man.write(cfg.output_dir)


def cmd_train(cfg: RunConfig, seed: int | None = None, jobs: int = 1) -> Path:
    ds_dir = dataset_dir(cfg)
    if not (ds_dir / "meta.json").is_file():
        raise InvalidInputError(f"dataset archive not found at {ds_dir}; run build-dataset first")
    ds = load_dataset(ds_dir)
    _check_compatible(ds.bar_seconds, ds.window_len, cfg, "dataset")
    gan_cfg = cfg.gan if seed is None else dataclasses.replace(cfg.gan, seed=seed)
    man = Manifest("train", cfg.config_hash(), [gan_cfg.seed])
    man.add_inputs(sorted(p for p in ds_dir.iterdir() if p.is_file()), cfg.output_dir)
    result = train(ds, gan_cfg, progress=lambda s: log.info("snapshot %s", s))
    meta = {"bar_seconds": ds.bar_seconds, "window_len": ds.window_len, "norm": ds.norm.to_dict(), "gan": gan_cfg.to_dict()}
    result.generator.meta.update(meta)
    result.critic.meta.update(meta)
    out = cfg.output_dir
    paths = [
        result.generator.save(checkpoint_dir(cfg, "generator")),
        result.critic.save(checkpoint_dir(cfg, "critic")),
        result.report.write_csv(out / "train_report.csv"),
        result.report.write_snapshots_csv(out / "train_snapshots.csv"),
        plot_training_curves(result.report, out / "training_curves.svg"),
    ]
    man.add_artifacts(paths, out)
    return man.write(out)


def _check_compatible(bar_seconds, window_len, cfg: RunConfig, what: str):
    if bar_seconds != cfg.data.bar_seconds or window_len != cfg.data.window_len:
        raise CompatibilityError(
            f"{what} has T={bar_seconds}, L={window_len}; config has T={cfg.data.bar_seconds}, L={cfg.data.window_len}"
        )


def load_critic(cfg: RunConfig, role: str = "critic") -> tuple[Network, NormStats, Path]:
    d = checkpoint_dir(cfg, role)
    if not (d / "model.json").is_file():
        raise InvalidInputError(f"{role} checkpoint not found at {d}; run train first")
    net = Network.load(d)
    for k in ("bar_seconds", "window_len", "norm"):
        if k not in net.meta:
            raise CompatibilityError(f"{role} checkpoint lacks '{k}' metadata")
    _check_compatible(net.meta["bar_seconds"], net.meta["window_len"], cfg, f"{role} checkpoint")
    return net, NormStats.from_dict(net.meta["norm"]), d


def cmd_calibrate(cfg: RunConfig, seed: int | None = None, jobs: int = 1) -> Path:
    if not (cfg.calibration.n_values and cfg.calibration.lambda_values):
        raise ConfigError("calibration.n_values and calibration.lambda_values are required for calibrate")
    critic, norm, ck = load_critic(cfg)
    grid = cfg.grid
    seeds = cfg.calibration_seeds
    man = Manifest("calibrate", cfg.config_hash(), seeds)
    man.add_inputs([ck / "model.json", ck / "weights.bin"], cfg.output_dir)
    provenance = {
        "checkpoint_hash": checkpoint_hash(ck),
        "config_hash": cfg.config_hash(),
        "base_params": params_ref(cfg.simulator),
    }
    log.info("calibrating %dx%d grid with %d seeds", *grid.shape, len(seeds))
    result = calibrate(
        grid, cfg.simulator, seeds, critic, norm,
        bar_seconds=cfg.data.bar_seconds, window_len=cfg.data.window_len,
        windowed=cfg.calibration.windowed, jobs=jobs, provenance=provenance,
    )
    paths = write_calibration_artifacts(result, cfg.output_dir / "calibration")
    man.add_artifacts(paths, cfg.output_dir)
    return man.write(cfg.output_dir)


def _paths_from_vectors(X: np.ndarray, norm: NormStats, L: int):
    """Price paths (start 1.0) and raw volumes recovered from feature vectors."""
    mids, vols = [], []
    for row in X:
        r, lv = denormalize(FeatureVector(row, L), norm)
        mids.append(np.exp(np.concatenate([[0.0], np.cumsum(r)])))
        vols.append(np.expm1(lv))
    return mids, vols


def _vv_correlation(mids, vols) -> float | None:
    absret = np.concatenate([np.abs(np.diff(np.log(m))) for m in mids])
    vol = np.concatenate(vols)
    try:
        return volume_volatility_correlation((vol, absret))
    except InvalidInputError as e:
        log.warning("volume/volatility correlation unavailable: %s", e)
        return None


def cmd_evaluate(cfg: RunConfig, seed: int | None = None, jobs: int = 1) -> Path:
    critic, norm, ck = load_critic(cfg)
    gen, _, gk = load_critic(cfg, "generator")
    L = cfg.data.window_len
    s = cfg.seed if seed is None else seed
    man = Manifest("evaluate", cfg.config_hash(), [s])
    man.add_inputs([ck / "weights.bin", gk / "weights.bin"], cfg.output_dir)
    n = cfg.evaluation.n_samples
    if cfg.evaluation.heldout_sessions:
        # fresh seeds beyond the training range keep the held-out set disjoint
        base = max(cfg.session_seeds()) + 1_000_000
        real = np.stack([
            build_feature_vector(run_simulation(cfg.simulator, base + i, cfg.data.bar_seconds), norm, L).values
            for i in range(cfg.evaluation.heldout_sessions)
        ])
    else:
        ds_dir = dataset_dir(cfg)
        if not (ds_dir / "meta.json").is_file():
            raise InvalidInputError(f"dataset archive not found at {ds_dir}")
        real = load_dataset(ds_dir).as_array()
    latent = int(gen.meta.get("latent_dim", gen.input_shape[0]))
    fake = sample_generator(gen, n, latent, torch.Generator().manual_seed(s))
    noise = random_feature_set(n, L, np.random.default_rng(s))
    report = score_distribution_report(critic, real, fake, noise)
    out = cfg.output_dir / "evaluation"
    paths = write_score_report(report, out)
    for name, X in (("real", real), ("generated", fake)):
        mids, vols = _paths_from_vectors(X, norm, L)
        horizons = tuple(h for h in (1, 10) if h <= L)
        stats = return_stats_from_paths(mids, horizons)
        paths += write_return_report(stats, out / name, correlation=_vv_correlation(mids, vols))
    man.add_artifacts(paths, cfg.output_dir)
    return man.write(cfg.output_dir)


COMMANDS = {
    "simulate": cmd_simulate,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="masgan", description="Market simulator calibration with a WGAN-GP critic.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for simulations")
        sp.add_argument("--seed", type=int, default=None, help="override the configured base seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg = load_config(args.config)
        manifest = COMMANDS[args.command](cfg, seed=args.seed, jobs=args.jobs)
    except ConfigError as e:
        print(f"masgan: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (MasganError, OSError) as e:
        print(f"masgan: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
