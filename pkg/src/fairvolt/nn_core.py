"""Dense MLPs with manual backprop, Adam and Polyak averaging.

Weights are stored (out, in) so a layer computes ``x @ W.T + b`` on a batch
``x`` of shape (batch, in). Single vectors are accepted and treated as a
batch of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError

_OUTPUT_ACTIVATIONS = ("linear", "tanh")


@dataclass
class MlpNet:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if self.hidden_activation != "relu":
            raise ValueError("only relu hidden layers are supported")
        if self.output_activation not in _OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {_OUTPUT_ACTIVATIONS}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("one weight matrix and bias per layer transition")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[k + 1], self.layer_sizes[k]) or b.shape != (self.layer_sizes[k + 1],):
                raise ShapeError(f"layer {k}: bad parameter shapes {w.shape}, {b.shape}")

    def params(self) -> list[np.ndarray]:
        """Parameter arrays interleaved as w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpNet":
        return MlpNet(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            self.output_activation,
        )


@dataclass
class ParamGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class _Cache:
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    preacts: list[np.ndarray] = field(default_factory=list)
    output: np.ndarray | None = None
    squeeze: bool = False


def init_mlp(
    layer_sizes,
    rng: np.random.Generator,
    output_activation: str = "linear",
    final_scale: float | None = None,
) -> MlpNet:
    """Kaiming-uniform fan-in weights with a = sqrt(5), i.e. U(+-1/sqrt(fan_in)); zero biases.

    ``final_scale`` replaces the last layer's init with U(-final_scale,
    final_scale), used for the actor head so it starts near zero output.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    weights, biases = [], []
    for k in range(len(sizes) - 1):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        last = k == len(sizes) - 2
        if last and final_scale is not None:
            bound = final_scale
        else:
            bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        if last and final_scale is not None:
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        else:
            biases.append(np.zeros(fan_out))
    return MlpNet(sizes, weights, biases, "relu", output_activation)


def zeros_like_net(net: MlpNet) -> MlpNet:
    return MlpNet(
        net.layer_sizes,
        [np.zeros_like(w) for w in net.weights],
        [np.zeros_like(b) for b in net.biases],
        net.hidden_activation,
        net.output_activation,
    )


def forward(net: MlpNet, x):
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != net.layer_sizes[0]:
        raise ShapeError(f"expected input width {net.layer_sizes[0]}, got shape {x.shape}")
    cache = _Cache(squeeze=squeeze)
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        cache.inputs.append(h)
        z = h @ w.T + b
        cache.preacts.append(z)
        if k < last:
            h = np.maximum(z, 0.0)
        elif net.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
    cache.output = h
    return (h[0] if squeeze else h), cache


def backward(net: MlpNet, cache: _Cache, grad_out) -> ParamGrads:
    """Gradients of ``sum(grad_out * output)`` w.r.t. parameters and input."""
    g = np.asarray(grad_out, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise ShapeError(f"grad_out shape {g.shape} does not match output {cache.output.shape}")
    if net.output_activation == "tanh":
        g = g * (1.0 - cache.output**2)
    n = len(net.weights)
    gw: list[np.ndarray] = [None] * n
    gb: list[np.ndarray] = [None] * n
    for k in range(n - 1, -1, -1):
        gw[k] = g.T @ cache.inputs[k]
        gb[k] = g.sum(axis=0)
        g = g @ net.weights[k]
        if k > 0:
            g = g * (cache.preacts[k - 1] > 0)
    return ParamGrads(gw, gb, g[0] if cache.squeeze else g)


def adam_init(net: MlpNet, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    ps = net.params()
    return AdamState([np.zeros_like(p) for p in ps], [np.zeros_like(p) for p in ps], 0, lr, beta1, beta2, eps)


def adam_step(net: MlpNet, grads: ParamGrads, state: AdamState):
    """Bias-corrected Adam update, in place. Returns ``(net, state)``."""
    ps, gs = net.params(), grads.params()
    if len(ps) != len(gs) or any(p.shape != g.shape for p, g in zip(ps, gs)):
        raise ShapeError("gradient shapes do not match the network")
    if len(state.m) != len(ps) or any(p.shape != m.shape for p, m in zip(ps, state.m)):
        raise ShapeError("optimizer state does not match the network")
    if not all(np.all(np.isfinite(g)) for g in gs):
        raise NumericalError("non-finite gradient")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step_count
    c2 = 1.0 - b2**state.step_count
    for p, g, m, v in zip(ps, gs, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def soft_update(target: MlpNet, online: MlpNet, tau: float) -> MlpNet:
    """target <- tau * online + (1 - tau) * target, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if target.layer_sizes != online.layer_sizes:
        raise ShapeError("soft_update needs identical architectures")
    for t, o in zip(target.params(), online.params()):
        t[...] = tau * o + (1.0 - tau) * t
    return target


# -- serialization ---------------------------------------------------------


def net_to_arrays(net: MlpNet, prefix: str) -> dict[str, np.ndarray]:
    out = {
        f"{prefix}/layer_sizes": np.array(net.layer_sizes, dtype=np.int64),
        f"{prefix}/output_activation": np.array(net.output_activation),
    }
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}/w{k}"] = w
        out[f"{prefix}/b{k}"] = b
    return out


def net_from_arrays(data, prefix: str) -> MlpNet:
    sizes = tuple(int(s) for s in data[f"{prefix}/layer_sizes"])
    n = len(sizes) - 1
    return MlpNet(
        sizes,
        [np.array(data[f"{prefix}/w{k}"]) for k in range(n)],
        [np.array(data[f"{prefix}/b{k}"]) for k in range(n)],
        "relu",
        str(data[f"{prefix}/output_activation"]),
    )


def adam_to_arrays(state: AdamState, prefix: str) -> dict[str, np.ndarray]:
    out = {
        f"{prefix}/hyper": np.array([state.lr, state.beta1, state.beta2, state.eps]),
        f"{prefix}/step_count": np.array(state.step_count, dtype=np.int64),
        f"{prefix}/n": np.array(len(state.m), dtype=np.int64),
    }
    for k, (m, v) in enumerate(zip(state.m, state.v)):
        out[f"{prefix}/m{k}"] = m
        out[f"{prefix}/v{k}"] = v
    return out


def adam_from_arrays(data, prefix: str) -> AdamState:
    lr, b1, b2, eps = (float(x) for x in data[f"{prefix}/hyper"])
    n = int(data[f"{prefix}/n"])
    return AdamState(
        [np.array(data[f"{prefix}/m{k}"]) for k in range(n)],
        [np.array(data[f"{prefix}/v{k}"]) for k in range(n)],
        int(data[f"{prefix}/step_count"]),
        lr,
        b1,
        b2,
        eps,
    )
