"""Small differentiable building blocks on top of torch (float64, CPU).

Layers are declared with :class:`LayerSpec` so a network can be rebuilt
from ``model.json`` and filled from ``weights.bin``.  All ops route through
torch autograd, so gradients of gradients (needed by the gradient
penalty) work for every layer kind.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, InvalidInputError, UsageError

DTYPE = torch.float64
CHECKPOINT_VERSION = 1
ATTENTION_REDUCTION = 8

KINDS = (
    "DENSE",
    "CONV1D",
    "SELF_ATTENTION_1D",
    "RELU",
    "LEAKY_RELU",
    "TANH",
    "SIGMOID",
    "SOFTMAX",
    "DROPOUT",
    "RESHAPE",
)


def as_tensor(x, requires_grad: bool = False) -> torch.Tensor:
    if not isinstance(x, torch.Tensor):
        a = np.asarray(x)
        if not a.flags.writeable:
            a = a.copy()
        x = torch.as_tensor(a, dtype=DTYPE)
    t = x
    t = t.to(DTYPE)
    if requires_grad and not t.requires_grad:
        t = t.detach().clone().requires_grad_(True)
    return t


# -- functional ops ---------------------------------------------------------------


def softmax(logits, dim: int = -1) -> torch.Tensor:
    """Max-subtracted softmax."""
    z = as_tensor(logits)
    z = z - z.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)


def conv1d_forward(x, weight, bias=None, stride: int = 1, padding: int = 0) -> torch.Tensor:
    """Cross-correlation along length. ``x`` is ``(C, W)`` or ``(B, C, W)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    if weight.dim() != 3:
        raise InvalidInputError("conv weight must have shape (C_out, C_in, k)")
    unbatched = x.dim() == 2
    if unbatched:
        x = x.unsqueeze(0)
    if x.dim() != 3 or x.shape[1] != weight.shape[1]:
        raise InvalidInputError(f"input shape {tuple(x.shape)} does not match weight {tuple(weight.shape)}")
    k = weight.shape[2]
    if stride < 1 or padding < 0 or x.shape[2] + 2 * padding < k:
        raise InvalidInputError("invalid stride/padding for input width")
    if k == 1 and stride == 1 and padding == 0:
        # pointwise: a plain channel matmul is much cheaper than the im2col path
        out = torch.einsum("oc,bcw->bow", weight[:, :, 0], x)
        if bias is not None:
            out = out + bias[:, None]
    else:
        out = F.conv1d(x, weight, bias, stride=stride, padding=padding)
    return out[0] if unbatched else out


def attention_weights(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Row-stochastic ``(B, W, W)`` matrix; row ``i`` = softmax_j(q_i . k_j)."""
    return softmax(torch.bmm(q.transpose(1, 2), k), dim=-1)


def dropout(x, rate: float, train: bool, generator: torch.Generator | None = None) -> torch.Tensor:
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train or rate == 0:
        return x
    keep = (torch.rand(x.shape, generator=generator, dtype=DTYPE) >= rate).to(DTYPE)
    return x * keep / (1.0 - rate)


def grad(output: torch.Tensor, inputs, create_graph: bool = False):
    """Reverse-mode gradient of a scalar ``output``.

    With ``create_graph=True`` the returned gradients are themselves
    differentiable, so a second reverse pass is valid.
    """
    if output.grad_fn is None and not output.requires_grad:
        raise UsageError("backward called on a value with no recorded forward graph")
    if output.numel() != 1:
        raise InvalidInputError("backward needs a scalar output")
    single = isinstance(inputs, torch.Tensor)
    gs = torch.autograd.grad(output, [inputs] if single else list(inputs), create_graph=create_graph, allow_unused=True)
    gs = [torch.zeros_like(i) if g is None else g for g, i in zip(gs, [inputs] if single else inputs)]
    return gs[0] if single else gs


# -- layers ---------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        for key, val in self.params.items():
            if key == "rate":
                if not 0 <= val < 1:
                    raise ConfigError(f"{self.kind}: dropout rate must be in [0, 1)")
            elif key == "shape":
                if any(int(s) <= 0 for s in val):
                    raise ConfigError(f"{self.kind}: reshape dims must be positive")
            elif key == "slope":
                if val < 0:
                    raise ConfigError(f"{self.kind}: slope must be non-negative")
            elif key == "padding":
                if val < 0:
                    raise ConfigError(f"{self.kind}: padding must be non-negative")
            elif isinstance(val, (int, float)) and val <= 0:
                raise ConfigError(f"{self.kind}: {key} must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        params = dict(d.get("params", {}))
        if "shape" in params:
            params["shape"] = tuple(params["shape"])
        return cls(d["kind"], params)


def _xavier(t: torch.Tensor, generator: torch.Generator | None) -> None:
    fan_out, fan_in = t.shape[0], t.shape[1]
    if t.dim() == 3:
        fan_in *= t.shape[2]
        fan_out *= t.shape[2]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        t.copy_(torch.rand(t.shape, generator=generator, dtype=DTYPE) * (2 * bound) - bound)


class Dense(nn.Module):
    def __init__(self, n_in: int, n_out: int, generator=None):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_out, n_in, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(n_out, dtype=DTYPE))
        _xavier(self.weight, generator)

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class Conv1d(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0, generator=None):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = nn.Parameter(torch.empty(c_out, c_in, kernel, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(c_out, dtype=DTYPE))
        _xavier(self.weight, generator)

    def forward(self, x):
        return conv1d_forward(x, self.weight, self.bias, self.stride, self.padding)


class SelfAttention1d(nn.Module):
    """Single-head self-attention over the length axis of a ``(B, C, W)`` map.

    Query/key/value are 1x1 convolutions to ``C // reduction`` channels; the
    attended values are projected back to ``C`` and added to the input
    scaled by a learnable ``gamma`` (initialised to 0).
    """

    def __init__(self, channels: int, reduction: int = ATTENTION_REDUCTION, generator=None):
        super().__init__()
        if channels % reduction:
            raise ConfigError(f"channels ({channels}) must be divisible by {reduction}")
        inner = channels // reduction
        self.f = Conv1d(channels, inner, 1, generator=generator)
        self.g = Conv1d(channels, inner, 1, generator=generator)
        self.h = Conv1d(channels, inner, 1, generator=generator)
        self.out = Conv1d(inner, channels, 1, generator=generator)
        self.gamma = nn.Parameter(torch.zeros((), dtype=DTYPE))
        self.last_weights: torch.Tensor | None = None

    def forward(self, x):
        unbatched = x.dim() == 2
        if unbatched:
            x = x.unsqueeze(0)
        q, k, v = self.f(x), self.g(x), self.h(x)
        beta = attention_weights(q, k)
        self.last_weights = beta.detach()
        o = self.out(torch.bmm(v, beta.transpose(1, 2)))
        y = self.gamma * o + x
        return y[0] if unbatched else y


def self_attention_1d(x, layer: SelfAttention1d) -> torch.Tensor:
    return layer(as_tensor(x))


class Activation(nn.Module):
    def __init__(self, kind: str, slope: float = 0.2):
        super().__init__()
        self.kind, self.slope = kind, slope

    def forward(self, x):
        if self.kind == "RELU":
            return F.relu(x)
        if self.kind == "LEAKY_RELU":
            return F.leaky_relu(x, self.slope)
        if self.kind == "TANH":
            return torch.tanh(x)
        if self.kind == "SIGMOID":
            return torch.sigmoid(x)
        return softmax(x, dim=-1)


class Dropout(nn.Module):
    def __init__(self, rate: float):
        super().__init__()
        self.rate = rate
        self.generator: torch.Generator | None = None

    def forward(self, x):
        return dropout(x, self.rate, self.training, self.generator)


class Reshape(nn.Module):
    def __init__(self, shape: Sequence[int]):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x):
        return x.reshape(x.shape[0], *self.shape)


def build_layer(spec: LayerSpec, generator=None) -> nn.Module:
    p = spec.params
    if spec.kind == "DENSE":
        return Dense(p["n_in"], p["n_out"], generator)
    if spec.kind == "CONV1D":
        return Conv1d(p["c_in"], p["c_out"], p["kernel"], p.get("stride", 1), p.get("padding", 0), generator)
    if spec.kind == "SELF_ATTENTION_1D":
        return SelfAttention1d(p["channels"], p.get("reduction", ATTENTION_REDUCTION), generator)
    if spec.kind == "DROPOUT":
        return Dropout(p["rate"])
    if spec.kind == "RESHAPE":
        return Reshape(p["shape"])
    return Activation(spec.kind, p.get("slope", 0.2))


class Network(nn.Module):
    """Feed-forward stack of layers declared by specs. Input is batched."""

    def __init__(self, specs: Sequence[LayerSpec], input_shape: Sequence[int], generator=None, meta: dict | None = None):
        super().__init__()
        self.specs = tuple(specs)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = nn.ModuleList(build_layer(s, generator) for s in self.specs)
        self.meta = dict(meta or {})
        self.output_shape = self._check_shapes()

    def _check_shapes(self) -> tuple[int, ...]:
        with torch.no_grad():
            try:
                out = self.forward(torch.zeros((1, *self.input_shape), dtype=DTYPE))
            except (RuntimeError, InvalidInputError) as exc:
                raise ConfigError(f"inconsistent layer shapes: {exc}") from None
        return tuple(out.shape[1:])

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def set_dropout_generator(self, generator: torch.Generator | None) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.generator = generator

    def attention_layers(self) -> list[SelfAttention1d]:
        return [m for m in self.layers if isinstance(m, SelfAttention1d)]

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.detach().numpy().ravel() for p in self.parameters()])

    # -- checkpoint ------------------------------------------------------------

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        model = {
            "version": CHECKPOINT_VERSION,
            "input_shape": list(self.input_shape),
            "output_shape": list(self.output_shape),
            "layers": [
                {**s.to_dict(), "param_shapes": [list(p.shape) for p in layer.parameters()]}
                for s, layer in zip(self.specs, self.layers)
            ],
            "meta": self.meta,
        }
        (directory / "model.json").write_text(json.dumps(model, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.flat_parameters().astype("<f8").tofile(directory / "weights.bin")
        return directory

    @classmethod
    def load(cls, directory) -> "Network":
        directory = Path(directory)
        model = json.loads((directory / "model.json").read_text(encoding="utf-8"))
        if model.get("version") != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {model.get('version')}")
        specs = [LayerSpec.from_dict(d) for d in model["layers"]]
        net = cls(specs, model["input_shape"], meta=model.get("meta", {}))
        flat = np.fromfile(directory / "weights.bin", dtype="<f8")
        expected = net.n_parameters()
        if flat.size != expected:
            raise InvalidInputError(f"weights.bin has {flat.size} values, model declares {expected}")
        offset = 0
        with torch.no_grad():
            for p in net.parameters():
                n = p.numel()
                p.copy_(torch.from_numpy(flat[offset : offset + n].reshape(p.shape).copy()))
                offset += n
        net.eval()
        return net


def adam(params, lr: float = 1e-4, betas=(0.0, 0.9)) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=betas)
