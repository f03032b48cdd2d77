"""Minimal dense Q-network with hand-rolled backprop and Adam updates.

The action-value heads used here are tiny (two tanh hidden layers of 100 and
50 units, linear output), so the whole network lives in one flat float64
parameter vector with per-layer views. That keeps the optimizer to a handful
of vectorized operations and makes checkpointing and checksumming trivial.

Gradients are exact; :func:`grad_check` compares them against central finite
differences and is wired into the test suite as an independent oracle.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DivergenceError",
    "QNetwork",
    "AdamState",
    "mlp_new",
    "forward",
    "forward_batch",
    "loss_and_grads",
    "numeric_grads",
    "max_relative_error",
    "grad_check",
    "adam_new",
    "td_step",
    "clone_network",
    "sync_params",
    "params_digest",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_HIDDEN = (100, 50)

CHECKPOINT_MAGIC = "qnet-v1"


class DivergenceError(RuntimeError):
    """A training step produced a non-finite loss; the run must abort."""


def _param_count(dims: tuple[int, ...]) -> int:
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def _bind_views(dims: tuple[int, ...], flat: np.ndarray):
    """Per-layer (weights, biases) views into one flat vector.

    Layout per layer: weight matrix (fan_in, fan_out) row-major, then bias.
    """
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out))
        offset += fan_in * fan_out
        biases.append(flat[offset : offset + fan_out])
        offset += fan_out
    return weights, biases


@dataclass
class QNetwork:
    """Feed-forward net: tanh on every hidden layer, identity output.

    ``weights`` and ``biases`` are views into ``params``; updating the flat
    vector in place is visible through them and vice versa.
    """

    dims: tuple[int, ...]
    params: np.ndarray
    weights: list = field(init=False, repr=False)
    biases: list = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) < 2 or any(d < 1 for d in self.dims):
            raise ValueError(f"invalid layer dims {self.dims}")
        params = np.ascontiguousarray(self.params, dtype=np.float64)
        if params.shape != (_param_count(self.dims),):
            raise ValueError(
                f"params length {params.size} does not match dims {self.dims}"
            )
        self.params = params
        self.weights, self.biases = _bind_views(self.dims, self.params)

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def action_count(self) -> int:
        return self.dims[-1]

    @property
    def n_params(self) -> int:
        return self.params.size


def mlp_new(
    input_dim: int,
    action_count: int,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
) -> QNetwork:
    """Fresh network with uniform fan-in initialization.

    Weights are drawn uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases
    start at zero. Bit-identical for identical generator state.
    """
    dims = (input_dim, *hidden, action_count)
    net = QNetwork(dims, np.zeros(_param_count(dims)))
    for w in net.weights:
        bound = 1.0 / math.sqrt(w.shape[0])
        w[:] = rng.uniform(-bound, bound, size=w.shape)
    return net


def forward(net: QNetwork, x: np.ndarray) -> np.ndarray:
    """Action values for a single input vector. Pure."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ValueError(f"input shape {x.shape} != ({net.input_dim},)")
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.tanh(h @ w + b)
    return h @ net.weights[-1] + net.biases[-1]


def forward_batch(net: QNetwork, inputs: np.ndarray) -> np.ndarray:
    """Action values for a batch, shape (n, input_dim) -> (n, action_count)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != net.input_dim:
        raise ValueError(f"batch shape {inputs.shape} != (n, {net.input_dim})")
    h = inputs
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.tanh(h @ w + b)
    return h @ net.weights[-1] + net.biases[-1]


def _selected_mse(net: QNetwork, inputs, actions, targets) -> float:
    q = forward_batch(net, inputs)
    diff = q[np.arange(len(targets)), actions] - targets
    return float(np.mean(diff * diff))


def loss_and_grads(
    net: QNetwork,
    inputs: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean squared error on the selected action values, plus exact gradients.

    Returns (loss, flat gradient vector laid out exactly like ``net.params``).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.intp)
    targets = np.asarray(targets, dtype=np.float64)
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("batch must be nonempty")

    # Forward, keeping each layer's activation for the backward pass.
    activations = [inputs]
    h = inputs
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.tanh(h @ w + b)
        activations.append(h)
    q = h @ net.weights[-1] + net.biases[-1]

    rows = np.arange(n)
    diff = q[rows, actions] - targets
    loss = float(np.mean(diff * diff))

    grad_flat = np.zeros_like(net.params)
    grad_w, grad_b = _bind_views(net.dims, grad_flat)

    delta = np.zeros_like(q)
    delta[rows, actions] = (2.0 / n) * diff
    for layer in reversed(range(len(net.weights))):
        a_prev = activations[layer]
        grad_w[layer][:] = a_prev.T @ delta
        grad_b[layer][:] = delta.sum(axis=0)
        if layer > 0:
            # tanh'(z) = 1 - tanh(z)^2, and activations[layer] is tanh(z).
            delta = (delta @ net.weights[layer].T) * (1.0 - a_prev * a_prev)
    return loss, grad_flat


def numeric_grads(
    net: QNetwork,
    inputs: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    step: float = 1e-5,
) -> np.ndarray:
    """Central finite differences of the TD loss for every parameter.

    Restores the network exactly; intended as a slow independent reference.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.intp)
    targets = np.asarray(targets, dtype=np.float64)
    grads = np.zeros_like(net.params)
    flat = net.params
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        loss_plus = _selected_mse(net, inputs, actions, targets)
        flat[i] = original - step
        loss_minus = _selected_mse(net, inputs, actions, targets)
        flat[i] = original
        grads[i] = (loss_plus - loss_minus) / (2.0 * step)
    return grads


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-4) -> float:
    """Worst-case elementwise relative difference between two gradient vectors.

    The denominator is floored so that near-zero entries compare absolutely.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def grad_check(
    net: QNetwork,
    inputs: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max relative error between backprop and finite-difference gradients."""
    _, analytic = loss_and_grads(net, inputs, actions, targets)
    numeric = numeric_grads(net, inputs, actions, targets, step)
    return max_relative_error(analytic, numeric)


@dataclass
class AdamState:
    """Adaptive-moment optimizer state for one network's flat parameters."""

    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float
    _scratch: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        if self._scratch is None:
            self._scratch = np.zeros_like(self.m)


def adam_new(
    net: QNetwork,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    zeros = np.zeros_like(net.params)
    return AdamState(m=zeros.copy(), v=zeros.copy(), step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def td_step(
    net: QNetwork,
    opt: AdamState,
    inputs: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
) -> float:
    """One minibatch update of the TD regression loss.

    Returns the pre-update loss. Raises :class:`DivergenceError` on a
    non-finite loss so that runs fail loudly instead of training on NaNs.
    """
    loss, grads = loss_and_grads(net, inputs, actions, targets)
    if not math.isfinite(loss):
        raise DivergenceError(
            f"non-finite TD loss {loss!r} at optimizer step {opt.step} "
            f"(max |param| {np.max(np.abs(net.params)):.3e}, "
            f"max |target| {np.max(np.abs(targets)):.3e})"
        )
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    opt.m *= b1
    opt.m += (1.0 - b1) * grads
    np.multiply(grads, grads, out=opt._scratch)
    opt.v *= b2
    opt.v += (1.0 - b2) * opt._scratch
    # Bias-corrected update, computed in the scratch buffer.
    np.sqrt(opt.v, out=opt._scratch)
    opt._scratch /= math.sqrt(1.0 - b2 ** opt.step)
    opt._scratch += opt.eps
    np.divide(opt.m, opt._scratch, out=opt._scratch)
    opt._scratch *= opt.lr / (1.0 - b1 ** opt.step)
    net.params -= opt._scratch
    return loss


def clone_network(net: QNetwork) -> QNetwork:
    return QNetwork(net.dims, net.params.copy())


def sync_params(dst: QNetwork, src: QNetwork) -> None:
    """Copy ``src`` parameters into ``dst`` (shapes must match)."""
    if dst.dims != src.dims:
        raise ValueError(f"cannot sync params across dims {src.dims} -> {dst.dims}")
    dst.params[:] = src.params


def params_digest(net: QNetwork) -> str:
    """SHA-256 of dims and raw parameter bytes; cheap identity check."""
    digest = hashlib.sha256()
    digest.update(repr(net.dims).encode())
    digest.update(net.params.tobytes())
    return digest.hexdigest()


def save_checkpoint(net: QNetwork, path) -> None:
    """Versioned text checkpoint: header with layer dims, one parameter per
    line in flat (row-major per layer) order. Round-trips bit-exactly."""
    lines = [CHECKPOINT_MAGIC + " " + " ".join(str(d) for d in net.dims)]
    lines.extend(repr(float(p)) for p in net.params)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> QNetwork:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if not header or header[0] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
        dims = tuple(int(d) for d in header[1:])
        values = [float(line) for line in fh if line.strip()]
    expected = _param_count(dims)
    if len(values) != expected:
        raise ValueError(f"{path}: expected {expected} parameters, found {len(values)}")
    return QNetwork(dims, np.array(values, dtype=np.float64))
