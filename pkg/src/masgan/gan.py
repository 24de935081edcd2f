"""WGAN-GP generator/critic, training loop and the realism score."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, InvalidInputError, TrainingAborted
from .marketdata import Dataset, FeatureVector
from .nn import DTYPE, LayerSpec, Network, adam, as_tensor, grad

log = logging.getLogger(__name__)

SUPPORTED_LATENT_DIMS = (10, 100, 200, 400)
REPORT_COLUMNS = ("iter", "critic_loss", "gen_loss", "gp", "interp_grad_norm")


@dataclass(frozen=True)
class GanConfig:
    latent_dim: int = 100
    batch_size: int = 64
    n_critic: int = 5
    gp_lambda: float = 10.0
    learning_rate: float = 1e-4
    critic_learning_rate: float | None = None  # defaults to learning_rate
    max_iterations: int = 10_000
    seed: int = 0
    use_attention: bool = True
    channels: int = 32
    kernel: int = 5
    hidden: int = 128
    dropout_rate: float = 0.2
    drift: float = 1e-3
    eval_interval: int = 500
    eval_samples: int = 256
    stop_on_convergence: bool = False
    min_iterations: int = 0
    augment_shift: bool = False

    def __post_init__(self):
        errs = []
        if self.latent_dim < 1:
            errs.append("latent_dim must be >= 1")
        if self.n_critic < 1:
            errs.append("n_critic must be >= 1")
        if self.gp_lambda < 0:
            errs.append("gp_lambda must be >= 0")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if not self.learning_rate > 0:
            errs.append("learning_rate must be positive")
        if self.critic_learning_rate is not None and not self.critic_learning_rate > 0:
            errs.append("critic_learning_rate must be positive")
        if self.max_iterations < 0:
            errs.append("max_iterations must be >= 0")
        if self.channels % 8:
            errs.append("channels must be divisible by 8")
        if not 0 <= self.dropout_rate < 1:
            errs.append("dropout_rate must be in [0, 1)")
        if self.drift < 0:
            errs.append("drift must be >= 0")
        if self.eval_interval < 1:
            errs.append("eval_interval must be >= 1")
        if errs:
            raise ConfigError("; ".join(errs))

    def to_dict(self) -> dict:
        return asdict(self)


# -- architectures -----------------------------------------------------------------


def _conv(c_in, c_out, k, stride=1):
    return LayerSpec("CONV1D", {"c_in": c_in, "c_out": c_out, "kernel": k, "stride": stride, "padding": k // 2})


def _conv_out(w, k, stride):
    return (w + 2 * (k // 2) - k) // stride + 1


def generator_specs(window_len: int, config: GanConfig) -> list[LayerSpec]:
    L, C, k = window_len, config.channels, config.kernel
    if config.use_attention:
        return [
            LayerSpec("DENSE", {"n_in": config.latent_dim, "n_out": C * L}),
            LayerSpec("RESHAPE", {"shape": (C, L)}),
            _conv(C, C, k), LayerSpec("RELU"),
            _conv(C, C, k), LayerSpec("RELU"),
            LayerSpec("SELF_ATTENTION_1D", {"channels": C}),
            _conv(C, C, k), LayerSpec("RELU"),
            _conv(C, 2, k),
            LayerSpec("RESHAPE", {"shape": (2 * L,)}),
        ]
    H = config.hidden
    return [
        LayerSpec("DENSE", {"n_in": config.latent_dim, "n_out": H}), LayerSpec("RELU"),
        LayerSpec("DROPOUT", {"rate": config.dropout_rate}),
        LayerSpec("DENSE", {"n_in": H, "n_out": H}), LayerSpec("RELU"),
        LayerSpec("DROPOUT", {"rate": config.dropout_rate}),
        LayerSpec("DENSE", {"n_in": H, "n_out": 2 * L}),
    ]


def critic_specs(window_len: int, config: GanConfig) -> list[LayerSpec]:
    L, C, k = window_len, config.channels, config.kernel
    if config.use_attention:
        w = _conv_out(_conv_out(L, k, 2), k, 2)
        return [
            LayerSpec("RESHAPE", {"shape": (2, L)}),
            _conv(2, C, k), LayerSpec("LEAKY_RELU", {"slope": 0.2}),
            _conv(C, C, k, 2), LayerSpec("LEAKY_RELU", {"slope": 0.2}),
            LayerSpec("SELF_ATTENTION_1D", {"channels": C}),
            _conv(C, C, k, 2), LayerSpec("LEAKY_RELU", {"slope": 0.2}),
            LayerSpec("RESHAPE", {"shape": (C * w,)}),
            LayerSpec("DENSE", {"n_in": C * w, "n_out": 1}),
        ]
    H = config.hidden
    return [
        LayerSpec("DENSE", {"n_in": 2 * L, "n_out": H}), LayerSpec("RELU"),
        LayerSpec("DROPOUT", {"rate": config.dropout_rate}),
        LayerSpec("DENSE", {"n_in": H, "n_out": H}), LayerSpec("RELU"),
        LayerSpec("DROPOUT", {"rate": config.dropout_rate}),
        LayerSpec("DENSE", {"n_in": H, "n_out": 1}),
    ]


def build_default_nets(window_len: int, config: GanConfig, generator: torch.Generator | None = None):
    """``(generator, critic)``: latent_dim -> 2L and 2L -> 1."""
    if window_len < 1:
        raise ConfigError("window_len must be >= 1")
    if generator is None:
        generator = torch.Generator().manual_seed(config.seed)
    meta = {"window_len": window_len, "latent_dim": config.latent_dim, "use_attention": config.use_attention}
    gen = Network(generator_specs(window_len, config), (config.latent_dim,), generator, {**meta, "role": "generator"})
    critic = Network(critic_specs(window_len, config), (2 * window_len,), generator, {**meta, "role": "critic"})
    if gen.output_shape != (2 * window_len,) or critic.output_shape != (1,):
        raise ConfigError(f"architecture shape mismatch: {gen.output_shape}, {critic.output_shape}")
    return gen, critic


# -- losses -----------------------------------------------------------------------


def critic_values(critic, x) -> torch.Tensor:
    """Critic output as a 1-D tensor of shape ``(B,)``."""
    return critic(x).reshape(-1)


def gradient_penalty(
    critic, real, fake, generator: torch.Generator | None = None, gp_lambda: float = 10.0, eps=None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Two-sided penalty on critic input-gradient norms at real/fake interpolates.

    Returns ``(penalty, per-sample gradient norms)``; the penalty is
    differentiable with respect to the critic's parameters.
    """
    real, fake = as_tensor(real), as_tensor(fake)
    if real.shape != fake.shape:
        raise InvalidInputError(f"real batch {tuple(real.shape)} and fake batch {tuple(fake.shape)} differ")
    if eps is None:
        eps = torch.rand((real.shape[0],) + (1,) * (real.dim() - 1), generator=generator, dtype=DTYPE)
    else:
        eps = as_tensor(eps).reshape((real.shape[0],) + (1,) * (real.dim() - 1))
    x_hat = (eps * real + (1 - eps) * fake.detach()).detach().requires_grad_(True)
    out = critic_values(critic, x_hat).sum()
    g = grad(out, x_hat, create_graph=True)
    norms = torch.sqrt((g.reshape(g.shape[0], -1) ** 2).sum(dim=1) + 1e-30)
    return gp_lambda * ((norms - 1.0) ** 2).mean(), norms


def realism_score(critic, x) -> np.ndarray | float:
    """Sigmoid of the critic value: a probability-like realism score in (0, 1)."""
    single = isinstance(x, FeatureVector) or np.ndim(x) == 1
    arr = np.atleast_2d(x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64))
    expected = getattr(critic, "input_shape", None)
    if expected is not None and tuple(arr.shape[1:]) != tuple(expected):
        raise InvalidInputError(f"feature length {arr.shape[1:]} does not match critic input {expected}")
    was_training = critic.training
    critic.eval()
    with torch.no_grad():
        s = torch.sigmoid(critic_values(critic, as_tensor(arr))).numpy()
    critic.train(was_training)
    return float(s[0]) if single else s


def critic_logits(critic, x) -> np.ndarray:
    critic.eval()
    with torch.no_grad():
        return critic_values(critic, as_tensor(np.atleast_2d(x))).numpy()


def sample_generator(gen, n: int, latent_dim: int, generator: torch.Generator) -> np.ndarray:
    gen.eval()
    with torch.no_grad():
        z = torch.randn((n, latent_dim), generator=generator, dtype=DTYPE)
        out = gen(z).numpy()
    gen.train()
    return out


# -- training ---------------------------------------------------------------------


@dataclass
class TrainReport:
    rows: list[tuple] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def iterations(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        i = REPORT_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=np.float64)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([r[0], *(repr(float(x)) for x in r[1:])])
        return path

    def write_snapshots_csv(self, path) -> Path:
        path = Path(path)
        keys = sorted({k for s in self.snapshots for k in s})
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for s in self.snapshots:
                w.writerow(s)
        return path


@dataclass
class TrainResult:
    generator: Network
    critic: Network
    report: TrainReport
    config: GanConfig


def _block_sums(returns: np.ndarray, h: int) -> np.ndarray:
    n = returns.shape[1] // h
    return returns[:, : n * h].reshape(returns.shape[0], n, h).sum(axis=2).ravel()


def evaluation_snapshot(critic, gen, real: np.ndarray, config: GanConfig, torch_gen: torch.Generator, window_len: int) -> dict:
    """Diversity, return-distribution distances and score overlap (the three convergence checks)."""
    from .evaluation import ks_two_sample

    fake = sample_generator(gen, config.eval_samples, config.latent_dim, torch_gen)
    L = window_len
    # diversity: mean per-coordinate std across generated samples relative to real
    diversity = float(fake.std(axis=0).mean() / max(real.std(axis=0).mean(), 1e-12))
    d1 = ks_two_sample(real[:, :L].ravel(), fake[:, :L].ravel()).statistic
    d10 = ks_two_sample(_block_sums(real[:, :L], 10), _block_sums(fake[:, :L], 10)).statistic if L >= 10 else float("nan")
    s_real = realism_score(critic, real)
    s_fake = realism_score(critic, fake)
    ks = ks_two_sample(s_real, s_fake)
    return {
        "diversity_ratio": diversity,
        "ks_returns_1": float(d1),
        "ks_returns_10": float(d10),
        "mean_score_real": float(np.mean(s_real)),
        "mean_score_generated": float(np.mean(s_fake)),
        "score_ks_statistic": ks.statistic,
        "score_ks_p": ks.p_value,
    }


def scores_converged(mean_real: float, mean_gen: float, ks_p: float) -> bool:
    return abs(mean_real - mean_gen) < 0.05 and 0.4 <= mean_real <= 0.6 and 0.4 <= mean_gen <= 0.6 and ks_p > 0.05


def train(dataset: Dataset | np.ndarray, config: GanConfig, window_len: int | None = None, progress=None) -> TrainResult:
    """WGAN-GP training. ``dataset`` is a :class:`Dataset` or an ``(n, 2L)`` array."""
    if isinstance(dataset, Dataset):
        data = dataset.as_array()
        window_len = dataset.window_len
    else:
        data = np.asarray(dataset, dtype=np.float64)
        if window_len is None:
            if data.ndim != 2 or data.shape[1] % 2:
                raise InvalidInputError("array dataset needs shape (n, 2L)")
            window_len = data.shape[1] // 2
    if data.shape[0] == 0:
        raise InvalidInputError("dataset is empty")

    tg = torch.Generator().manual_seed(config.seed)
    gen, critic = build_default_nets(window_len, config, tg)
    eval_gen = torch.Generator().manual_seed(config.seed + 1)

    def evaluate(c, g):
        return evaluation_snapshot(c, g, data, config, eval_gen, window_len)

    report = train_networks(gen, critic, data, config, tg, evaluate, progress)
    return TrainResult(gen, critic, report, config)


def random_time_shift(x: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    """Rotate each ``(2L,)`` feature vector by its own random lag, returns and volumes together.

    Applied identically to real and generated batches, so the critic objective
    is unchanged in expectation while the 64-session training set is no longer
    memorisable position by position.
    """
    B, D = x.shape
    L = D // 2
    k = torch.randint(0, L, (B, 1), generator=generator)
    idx = (torch.arange(L)[None, :] + k) % L
    x2 = x.reshape(B, 2, L)
    return torch.gather(x2, 2, idx[:, None, :].expand(B, 2, L)).reshape(B, D)


def train_networks(gen, critic, data, config: GanConfig, tg: torch.Generator | None = None, evaluate=None, progress=None) -> TrainReport:
    """The WGAN-GP loop on prebuilt networks; ``n_critic`` critic steps per generator step.

    ``evaluate(critic, gen) -> dict`` runs every ``eval_interval`` iterations
    and at the end; its result goes to ``report.snapshots``.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[0] == 0:
        raise InvalidInputError("dataset is empty")
    if tg is None:
        tg = torch.Generator().manual_seed(config.seed)
    gen.set_dropout_generator(tg)
    critic.set_dropout_generator(tg)
    opt_c = adam(critic.parameters(), config.critic_learning_rate or config.learning_rate)
    opt_g = adam(gen.parameters(), config.learning_rate)
    real_all = torch.as_tensor(data, dtype=DTYPE)
    n = real_all.shape[0]
    B = config.batch_size
    report = TrainReport()
    if config.augment_shift and data.shape[1] % 2:
        raise InvalidInputError("shift augmentation needs (n, 2L) feature vectors")

    def aug(x):
        return random_time_shift(x, tg) if config.augment_shift else x

    for it in range(1, config.max_iterations + 1):
        gen.train()
        critic.train()
        for _ in range(config.n_critic):
            idx = torch.randint(0, n, (B,), generator=tg)
            real = real_all[idx]
            z = torch.randn((B, config.latent_dim), generator=tg, dtype=DTYPE)
            with torch.no_grad():
                fake = gen(z).reshape(real.shape)
            real, fake = aug(real), aug(fake)
            c_real = critic_values(critic, real)
            c_fake = critic_values(critic, fake)
            gp, norms = gradient_penalty(critic, real, fake, tg, config.gp_lambda)
            w_loss = c_fake.mean() - c_real.mean()
            # anchor both sides so sigmoid(0) sits between real and generated
            loss = w_loss + gp + config.drift * 0.5 * ((c_real**2).mean() + (c_fake**2).mean())
            opt_c.zero_grad(set_to_none=True)
            loss.backward()
            opt_c.step()

        z = torch.randn((B, config.latent_dim), generator=tg, dtype=DTYPE)
        g_loss = -critic_values(critic, aug(gen(z))).mean()
        opt_g.zero_grad(set_to_none=True)
        g_loss.backward()
        opt_g.step()

        row = (it, loss.item(), g_loss.item(), gp.item(), norms.mean().item())
        report.rows.append(row)
        if not all(math.isfinite(x) for x in row[1:]):
            raise TrainingAborted(f"non-finite loss at iteration {it}: {row}", report)

        if evaluate is not None and (it % config.eval_interval == 0 or it == config.max_iterations):
            snap = {"iter": it, **evaluate(critic, gen)}
            report.snapshots.append(snap)
            log.info("iter %d %s", it, snap)
            if progress is not None:
                progress(snap)
            if (
                config.stop_on_convergence
                and it >= config.min_iterations
                and "mean_score_real" in snap
                and scores_converged(snap["mean_score_real"], snap["mean_score_generated"], snap["score_ks_p"])
            ):
                report.stopped_early = True
                break

    gen.eval()
    critic.eval()
    return report
