"""Dense feed-forward networks in float64 numpy with hand-written backprop and Adam."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


class NumericalError(ArithmeticError):
    """A non-finite value showed up where a finite one was required."""


class Rng:
    """Seeded random stream. Same ``(seed, stream)`` gives the same draws."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,) if stream else ())
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "Rng":
        return Rng(self.seed, stream)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    return a


def _act_grad(name: str, a: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (a > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - y * y
    return np.ones_like(a)


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray  # (fan_out, fan_in)
    biases: np.ndarray  # (fan_out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ValueError(f"weights {self.weights.shape} and biases {self.biases.shape} do not match")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise NumericalError("layer parameters must be finite")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]


@dataclass(eq=False)
class DenseNetwork:
    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].fan_in != self.layers[i - 1].fan_out:
                raise ValueError(f"layer {i} expects {self.layers[i].fan_in} inputs, "
                                 f"layer {i - 1} gives {self.layers[i - 1].fan_out}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [l.fan_out for l in self.layers]

    @property
    def activations(self) -> list[str]:
        return [l.activation for l in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out += [l.weights, l.biases]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "DenseNetwork":
        if len(params) != 2 * len(self.layers):
            raise ValueError("parameter list does not match network")
        return DenseNetwork([DenseLayer(params[2 * i], params[2 * i + 1], l.activation)
                             for i, l in enumerate(self.layers)])

    def copy(self) -> "DenseNetwork":
        return self.with_params([p.copy() for p in self.params()])

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def equals(self, other: "DenseNetwork") -> bool:
        return (self.activations == other.activations
                and all(a.shape == b.shape and np.array_equal(a, b)
                        for a, b in zip(self.params(), other.params())))


@dataclass
class Trace:
    """Per-layer inputs, pre-activations and outputs from one forward pass."""

    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    squeeze: bool


def forward_trace(net: DenseNetwork, x: np.ndarray) -> tuple[np.ndarray, Trace]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != net.input_dim:
        raise ValueError(f"network expects inputs of length {net.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(h)):
        raise NumericalError("network input is not finite")
    inputs, pre, post = [], [], []
    for i, layer in enumerate(net.layers):
        inputs.append(h)
        with np.errstate(over="ignore", invalid="ignore"):
            a = h @ layer.weights.T + layer.biases
            h = _act(layer.activation, a)
        if not np.all(np.isfinite(h)):
            raise NumericalError(f"non-finite activation in layer {i}")
        pre.append(a)
        post.append(h)
    out = h[0] if squeeze else h
    return out, Trace(inputs, pre, post, squeeze)


def forward(net: DenseNetwork, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input vector or an (n, d_in) batch."""
    return forward_trace(net, x)[0]


def backward(net: DenseNetwork, x: np.ndarray | None, upstream: np.ndarray,
             trace: Trace | None = None) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse pass.

    ``upstream`` is dLoss/d(output), shaped like the forward output. Returns
    gradients in ``net.params()`` order and dLoss/d(input). Batch gradients
    are summed over rows, so fold any 1/n into ``upstream``.
    """
    if trace is None:
        _, trace = forward_trace(net, x)
    g = np.asarray(upstream, dtype=np.float64)
    if trace.squeeze:
        g = g[None, :]
    if g.shape != trace.post[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} != output shape {trace.post[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * net.depth)  # type: ignore[list-item]
    for i in range(net.depth - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation != "identity":
            g = g * _act_grad(layer.activation, trace.pre[i], trace.post[i])
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in layer {i}")
        with np.errstate(over="ignore", invalid="ignore"):
            grads[2 * i] = g.T @ trace.inputs[i]
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ layer.weights
    dx = g[0] if trace.squeeze else g
    return grads, dx


def mse_loss(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    diff = pred - truth
    n = diff.size
    return float(np.mean(diff * diff)), 2.0 * diff / n


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def fresh(cls, params: Sequence[np.ndarray], lr: float = 1e-3, **kw) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)

    def copy(self) -> "AdamState":
        return replace(self, m=[a.copy() for a in self.m], v=[a.copy() for a in self.v])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    if not state.m:
        state = AdamState.fresh(params, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and optimizer state have different lengths")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, replace(state, step=t, m=new_m, v=new_v)


def init_network(sizes: Sequence[int], activations: Sequence[str] | None, rng: Rng) -> DenseNetwork:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases.

    ``sizes`` lists widths including input and output. Without explicit
    ``activations`` hidden layers get relu and the output layer identity.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output size")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive: {sizes}")
    n_layers = len(sizes) - 1
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["identity"]
    if len(activations) != n_layers:
        raise ValueError(f"{n_layers} layers but {len(activations)} activations")
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return DenseNetwork(layers)


def he_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / fan_in))


def lr_schedule(initial_lr: float, decay: float, epoch: int) -> float:
    if not 0.0 < decay <= 1.0:
        raise ValueError(f"decay must be in (0, 1], got {decay}")
    return initial_lr * decay ** epoch


def minibatches(n: int, batch_size: int, rng: Rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# Checkpoints: an .npz archive. Key "meta" holds a JSON document; each network
# stored under a prefix contributes "<prefix>/W<i>" and "<prefix>/b<i>" arrays.
# Activations and shapes are listed in meta["networks"][prefix].

def network_arrays(net: DenseNetwork, prefix: str) -> tuple[dict, dict]:
    arrays = {}
    for i, l in enumerate(net.layers):
        arrays[f"{prefix}/W{i}"] = l.weights
        arrays[f"{prefix}/b{i}"] = l.biases
    return arrays, {"sizes": net.sizes, "activations": net.activations}


def network_from_arrays(arrays, prefix: str, info: dict) -> DenseNetwork:
    layers = [DenseLayer(np.array(arrays[f"{prefix}/W{i}"]), np.array(arrays[f"{prefix}/b{i}"]), act)
              for i, act in enumerate(info["activations"])]
    net = DenseNetwork(layers)
    if net.sizes != list(info["sizes"]):
        raise ValueError(f"checkpoint network {prefix!r} shape mismatch")
    return net


def save_checkpoint(path: str | Path, networks: dict[str, DenseNetwork], meta: dict) -> None:
    arrays, shapes = {}, {}
    for prefix, net in networks.items():
        a, info = network_arrays(net, prefix)
        arrays.update(a)
        shapes[prefix] = info
    doc = dict(meta, networks=shapes)
    arrays["meta"] = np.array(json.dumps(doc, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, DenseNetwork], dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        nets = {p: network_from_arrays(z, p, info) for p, info in meta["networks"].items()}
    return nets, meta
