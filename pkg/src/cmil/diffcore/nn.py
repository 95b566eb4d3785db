"""Dense networks and diagonal-Gaussian heads on top of the tape."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph, Param, Tensor, as_tensor, elu, exp, linear, relu, tanh

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)

_ACTIVATIONS = {"elu": elu, "tanh": tanh, "relu": relu}


class Module:
    """Anything owning a flat list of :class:`Param`."""

    def parameters(self) -> list[Param]:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Param]:
        return {p.name: p for p in self.parameters()}

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in arrays:
                raise KeyError(f"missing parameter {p.name!r}")
            a = np.asarray(arrays[p.name], dtype=np.float64)
            if a.shape != p.value.shape:
                raise ValueError(f"{p.name}: shape {a.shape} != {p.value.shape}")
            p.value[...] = a

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / math.sqrt(shape[-2])
    return rng.uniform(-bound, bound, size=shape)


class MLP(Module):
    """Fully connected net; the last layer is linear.

    Parameter count is ``sum((n_in + 1) * n_out)`` over consecutive sizes.
    """

    def __init__(self, sizes, rng: np.random.Generator, activation: str = "elu", name: str = "mlp"):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.name = name
        self.weights: list[Param] = []
        self.biases: list[Param] = []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.weights.append(Param(f"{name}.w{i}", _uniform_fan_in(rng, (n_in, n_out))))
            self.biases.append(Param(f"{name}.b{i}", np.zeros(n_out)))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> list[Param]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __call__(self, x, graph: Graph) -> Tensor:
        return forward(self, x, graph)


def forward(mlp: MLP, x, graph: Graph) -> Tensor:
    """Run ``mlp`` on ``x`` (array or tensor), recording onto ``graph``."""
    h = as_tensor(x, graph)
    if h.ndim == 0 or h.shape[-1] != mlp.in_dim:
        raise ValueError(
            f"{mlp.name}: expected input last dimension {mlp.in_dim}, got shape {h.shape}"
        )
    act = _ACTIVATIONS[mlp.activation]
    n = len(mlp.weights)
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = linear(h, graph.param(w), graph.param(b))
        if i < n - 1:
            h = act(h)
    return h


class EnsembleMLP(Module):
    """``K`` same-shaped MLPs evaluated together with batched matmuls.

    Weights are stored stacked (``K x n_in x n_out``); each member gets its
    own random draw.  Output shape is ``(K, ..., n_out)``.
    """

    def __init__(self, k: int, sizes, rng: np.random.Generator, activation: str = "elu",
                 name: str = "ensemble"):
        self.k = int(k)
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.name = name
        self.weights: list[Param] = []
        self.biases: list[Param] = []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            w = np.stack([_uniform_fan_in(rng, (n_in, n_out)) for _ in range(self.k)])
            self.weights.append(Param(f"{name}.w{i}", w))
            self.biases.append(Param(f"{name}.b{i}", np.zeros((self.k, 1, n_out))))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    def parameters(self) -> list[Param]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __call__(self, x, graph: Graph, members=None) -> Tensor:
        """Evaluate members on ``x`` of shape ``(N, in)`` or ``(K, N, in)``.

        ``members`` (a sequence of member indices) restricts evaluation; the
        leading output axis then follows that order.
        """
        h = as_tensor(x, graph)
        if h.shape[-1] != self.in_dim:
            raise ValueError(
                f"{self.name}: expected input last dimension {self.in_dim}, got shape {h.shape}"
            )
        act = _ACTIVATIONS[self.activation]
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            wt, bt = graph.param(w), graph.param(b)
            if members is not None:
                idx = np.asarray(members)
                wt, bt = wt[idx], bt[idx]
            h = linear(h, wt, bt)
            if i < n - 1:
                h = act(h)
        return h


@dataclass
class DiagGaussian:
    """Diagonal Gaussian over the last axis of ``mean``."""

    mean: Tensor
    log_std: Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_std.shape:
            raise ValueError(f"mean {self.mean.shape} and log-std {self.log_std.shape} differ")

    @property
    def std(self) -> Tensor:
        return exp(self.log_std)

    def sample(self, noise: np.ndarray) -> Tensor:
        """Reparameterized draw ``mean + std * noise`` for a given unit-normal draw."""
        if noise.shape != self.mean.shape:
            raise ValueError(f"noise shape {noise.shape} != {self.mean.shape}")
        return self.mean + self.std * noise

    def detach(self) -> "DiagGaussian":
        return DiagGaussian(self.mean.detach(), self.log_std.detach())


def squash_log_std(raw: Tensor, lo: float = LOG_STD_MIN, hi: float = LOG_STD_MAX) -> Tensor:
    """Smoothly map an unconstrained head output into ``[lo, hi]``."""
    return lo + 0.5 * (hi - lo) * (tanh(raw) + 1.0)


def gaussian_head(out: Tensor, dim: int, lo: float = LOG_STD_MIN, hi: float = LOG_STD_MAX) -> DiagGaussian:
    """Split a ``2*dim`` network output into a :class:`DiagGaussian`."""
    if out.shape[-1] != 2 * dim:
        raise ValueError(f"head expects last dimension {2 * dim}, got {out.shape[-1]}")
    return DiagGaussian(out[..., :dim], squash_log_std(out[..., dim:], lo, hi))


def gaussian_kl(p: DiagGaussian, q: DiagGaussian) -> Tensor:
    """KL(p || q) summed over the last axis."""
    if p.mean.shape != q.mean.shape:
        raise ValueError(f"KL shape mismatch: {p.mean.shape} vs {q.mean.shape}")
    var_ratio = exp(2.0 * (p.log_std - q.log_std))
    diff = (p.mean - q.mean) * exp(-q.log_std)
    kl = (q.log_std - p.log_std) + 0.5 * (var_ratio + diff * diff) - 0.5
    return kl.sum(axis=-1)


def gaussian_logprob(p: DiagGaussian, x) -> Tensor:
    """Exact log-density summed over the last axis."""
    x = as_tensor(x, p.mean.graph)
    if x.shape != p.mean.shape:
        raise ValueError(f"log-prob shape mismatch: {x.shape} vs {p.mean.shape}")
    z = (x - p.mean) * exp(-p.log_std)
    return (-0.5 * z * z - p.log_std - 0.5 * _LOG_2PI).sum(axis=-1)
