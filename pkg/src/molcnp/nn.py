"""A small dense-network engine: forward pass, exact reverse-mode gradients,
Adam, Gaussian negative log-likelihood and finite-difference checking.

Inputs may be a single vector or a batch of row vectors.  For a batch the
gradient returned by :func:`backward` is the gradient of
``sum(upstream * forward(net, x))``, i.e. summed over rows.
"""

from __future__ import annotations

import io
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from molcnp.errors import DimensionMismatch, NonFiniteLoss, NonPositiveVariance, ShapeMismatch

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "identity")
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatch("bias length must equal the weight matrix row count")


@dataclass
class DenseNet:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a DenseNet needs at least one layer")
        for k in range(1, len(self.layers)):
            if self.layers[k].weight.shape[1] != self.layers[k - 1].weight.shape[0]:
                raise DimensionMismatch(f"layer {k} input does not match layer {k - 1} output")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [layer.weight.shape[0] for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...); live views."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def zeros_like(cls, net: DenseNet) -> "Gradients":
        return cls([np.zeros_like(l.weight) for l in net.layers], [np.zeros_like(l.bias) for l in net.layers])


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
    def for_params(cls, params: Sequence[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(lr, beta1, beta2, eps, 0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def init_dense(dims: Sequence[int], rng: np.random.Generator, activations: Sequence[str] | None = None) -> DenseNet:
    """He-style uniform fan-in initialization; relu hidden layers, identity output."""
    n_layers = len(dims) - 1
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["identity"]
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return DenseNet(layers)


def _as_batch(net: DenseNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.input_dim:
        raise DimensionMismatch(f"expected input dimension {net.input_dim}, got shape {x.shape}")
    return xb, single


def forward_cache(net: DenseNet, x: np.ndarray) -> list[np.ndarray]:
    """Forward pass over a batch, returning the input and every layer output."""
    acts = [x]
    h = x
    for layer in net.layers:
        z = h @ layer.weight.T
        z += layer.bias
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        acts.append(h)
    return acts


def backward_cache(net: DenseNet, acts: list[np.ndarray], upstream: np.ndarray, need_input: bool = True) -> Gradients:
    grads_w: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    delta = upstream
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        if layer.activation == "relu":
            delta = delta * (acts[k + 1] > 0.0)
        grads_w[k] = delta.T @ acts[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0 or need_input:
            delta = delta @ layer.weight
    return Gradients(grads_w, grads_b, delta if need_input else None)


def forward(net: DenseNet, x) -> np.ndarray:
    xb, single = _as_batch(net, x)
    out = forward_cache(net, xb)[-1]
    return out[0] if single else out


def backward(net: DenseNet, x, upstream) -> Gradients:
    """Gradient of ``<upstream, forward(net, x)>`` w.r.t. every parameter and x."""
    xb, single = _as_batch(net, x)
    up = np.asarray(upstream, dtype=np.float64)
    up = up[None, :] if single else up
    if up.shape != (xb.shape[0], net.output_dim):
        raise DimensionMismatch(f"upstream must have shape {(xb.shape[0], net.output_dim)}, got {up.shape}")
    grads = backward_cache(net, forward_cache(net, xb), up)
    if single:
        grads.input = grads.input[0]
    return grads


def gaussian_nll(mu, var, y):
    """Negative log density of ``y`` under N(mu, var); elementwise on arrays."""
    var = np.asarray(var, dtype=np.float64)
    if np.any(~(var > 0.0)):
        raise NonPositiveVariance("variance must be strictly positive")
    resid = np.asarray(y, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    out = HALF_LOG_2PI + 0.5 * np.log(var) + resid * resid / (2.0 * var)
    return float(out) if out.ndim == 0 else out


def adam_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """In-place Adam update of a flat parameter list."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("parameter, gradient and moment lists differ in length")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape mismatch: parameter {p.shape}, gradient {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def adam_step(net: DenseNet, grads: Gradients, state: AdamState) -> tuple[DenseNet, AdamState]:
    if not state.m:
        state.m = [np.zeros_like(p) for p in net.parameters()]
        state.v = [np.zeros_like(p) for p in net.parameters()]
    adam_update(net.parameters(), grads.arrays(), state)
    return net, state


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def numeric_gradient(params: Sequence[np.ndarray], loss: Callable[[], float], h: float = 1e-4) -> list[np.ndarray]:
    """Central differences of ``loss()`` w.r.t. each entry of ``params`` (perturbed in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss()
            flat[i] = orig - h
            lm = loss()
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * h)
        out.append(g)
    return out


def gradient_check(
    net: DenseNet,
    loss: Callable[[DenseNet], float],
    grad: Callable[[DenseNet], Gradients],
    h: float = 1e-4,
) -> float:
    """Max relative error between ``grad(net)`` and central differences of ``loss``.

    ``loss`` and ``grad`` receive the (temporarily perturbed) network.
    """
    base = loss(net)
    if not np.isfinite(base):
        raise NonFiniteLoss("loss is not finite at the check point")
    analytic = grad(net).arrays()
    numeric = numeric_gradient(net.parameters(), lambda: loss(net), h)
    return max(float(relative_error(a, n).max()) for a, n in zip(analytic, numeric))


# ---------------------------------------------------------------------------
# Serialization


def net_arrays(net: DenseNet, prefix: str = "") -> dict[str, np.ndarray]:
    arrays = {
        f"{prefix}dims": np.array(net.dims, dtype=np.int64),
        f"{prefix}activations": np.array([ACTIVATIONS.index(l.activation) for l in net.layers], dtype=np.int64),
    }
    for k, layer in enumerate(net.layers):
        arrays[f"{prefix}W{k}"] = layer.weight
        arrays[f"{prefix}b{k}"] = layer.bias
    return arrays


def net_from_arrays(arrays, prefix: str = "") -> DenseNet:
    dims = [int(d) for d in arrays[f"{prefix}dims"]]
    acts = [ACTIVATIONS[int(a)] for a in arrays[f"{prefix}activations"]]
    layers = []
    for k, act in enumerate(acts):
        w = np.array(arrays[f"{prefix}W{k}"], dtype=np.float64)
        if w.shape != (dims[k + 1], dims[k]):
            raise ShapeMismatch(f"checkpoint layer {k} has shape {w.shape}, expected {(dims[k + 1], dims[k])}")
        layers.append(Layer(w, np.array(arrays[f"{prefix}b{k}"], dtype=np.float64), act))
    return DenseNet(layers)


def write_npz(path, arrays: dict[str, np.ndarray]) -> None:
    """``np.savez``-compatible archive with fixed member timestamps.

    Identical arrays always produce identical bytes.
    """
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def save_net(net: DenseNet, path) -> None:
    arrays = {"version": np.array(CHECKPOINT_VERSION)}
    arrays.update(net_arrays(net))
    write_npz(path, arrays)


def load_net(path) -> DenseNet:
    with np.load(Path(path)) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return net_from_arrays(data)
