"""Dense LeakyReLU networks with hand-written reverse-mode gradients.

Everything is float64 numpy. A network is an ``MlpSpec`` (layer widths and
negative slope) plus a ``NetworkWeights`` instance; functions here never
mutate the weights they are given, so evaluation is safe from several
threads at once.

Layer ``l`` computes ``a = h @ W[l] + b[l]`` with ``W[l]`` shaped
``(fan_in, fan_out)``. Hidden layers apply LeakyReLU, the last layer is
linear.

The gradient penalty needs derivatives of an input-gradient norm with
respect to the parameters. LeakyReLU is piecewise linear, so its
derivative mask is locally constant and the input gradient is a product
of weight matrices and fixed masks; differentiating that product once more
is the second reverse pass in :func:`gradient_penalty`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple[int, ...]
    slope: float = 0.2

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ContractError("an MLP needs at least input and output dims")
        if any(d < 1 for d in dims):
            raise ContractError(f"layer dims must be >= 1, got {dims}")
        if not 0.0 < self.slope < 1.0:
            raise ContractError(f"LeakyReLU slope must lie in (0, 1), got {self.slope}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass
class NetworkWeights:
    """Per-layer weight matrices and bias vectors.

    Also used as the container for gradients, which share the layout.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ContractError("weights and biases must have one entry per layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "NetworkWeights":
        dims = spec.layer_dims
        return cls(
            [np.zeros((dims[i], dims[i + 1])) for i in range(spec.n_layers)],
            [np.zeros(dims[i + 1]) for i in range(spec.n_layers)],
        )

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def params(self) -> list[np.ndarray]:
        """Parameters in the fixed order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_params(cls, params: Sequence[np.ndarray]) -> "NetworkWeights":
        return cls(list(params[0::2]), list(params[1::2]))

    def copy(self) -> "NetworkWeights":
        return NetworkWeights([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def with_flat(self, vec: np.ndarray) -> "NetworkWeights":
        out, pos = [], 0
        for p in self.params():
            out.append(np.asarray(vec[pos:pos + p.size], dtype=np.float64).reshape(p.shape))
            pos += p.size
        return NetworkWeights.from_params(out)

    def __add__(self, other: "NetworkWeights") -> "NetworkWeights":
        return NetworkWeights.from_params([a + b for a, b in zip(self.params(), other.params())])

    def scaled(self, c: float) -> "NetworkWeights":
        return NetworkWeights.from_params([c * p for p in self.params()])

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())

    def matches(self, spec: MlpSpec) -> bool:
        return self.layer_dims == spec.layer_dims


def init_weights(spec: MlpSpec, rng: np.random.Generator) -> NetworkWeights:
    """Uniform init in +-sqrt(1/fan_in) for weights and biases alike."""
    ws, bs = [], []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        bound = math.sqrt(1.0 / fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    return NetworkWeights(ws, bs)


def leaky_relu(a: np.ndarray, slope: float) -> np.ndarray:
    return np.where(a >= 0.0, a, slope * a)


def _check_batch(weights: NetworkWeights, spec: MlpSpec, batch) -> np.ndarray:
    if not weights.matches(spec):
        raise DimensionError(f"weights have dims {weights.layer_dims}, spec says {spec.layer_dims}")
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1 and spec.input_dim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"batch shape {x.shape} does not match input dim {spec.input_dim}")
    return x


@dataclass
class _Trace:
    inputs: list[np.ndarray] = field(default_factory=list)  # input of each layer
    masks: list[np.ndarray] = field(default_factory=list)  # LeakyReLU derivative per hidden layer
    output: np.ndarray | None = None


def _forward_trace(weights: NetworkWeights, spec: MlpSpec, x: np.ndarray) -> _Trace:
    tr = _Trace()
    h = x
    last = spec.n_layers - 1
    for l, (w, b) in enumerate(zip(weights.weights, weights.biases)):
        tr.inputs.append(h)
        with np.errstate(invalid="ignore", over="ignore"):
            a = h @ w + b
        if not np.isfinite(a).all():
            raise NumericError("non-finite pre-activation", where=f"layer {l}")
        if l < last:
            tr.masks.append(np.where(a >= 0.0, 1.0, spec.slope))
            h = a * tr.masks[-1]
        else:
            h = a
    tr.output = h
    return tr


def forward(weights: NetworkWeights, spec: MlpSpec, batch) -> np.ndarray:
    """Network outputs, shape ``(batch, output_dim)``."""
    x = _check_batch(weights, spec, batch)
    return _forward_trace(weights, spec, x).output


def _backward(weights: NetworkWeights, tr: _Trace, grad_out: np.ndarray):
    """Reverse pass for an upstream gradient on the outputs.

    Returns (parameter gradients, gradient w.r.t. the network input).
    """
    n = len(weights.weights)
    gw, gb = [None] * n, [None] * n
    g = grad_out
    for l in reversed(range(n)):
        gw[l] = tr.inputs[l].T @ g
        gb[l] = g.sum(axis=0)
        g = g @ weights.weights[l].T
        if l > 0:
            g = g * tr.masks[l - 1]
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient", where=f"layer {l}")
    return NetworkWeights(gw, gb), g


def backward(weights: NetworkWeights, spec: MlpSpec, batch, grad_out):
    """Vector-Jacobian product of the network at ``batch``.

    Returns ``(param_grads, input_grads)`` for the upstream gradient
    ``grad_out`` on the outputs.
    """
    x = _check_batch(weights, spec, batch)
    tr = _forward_trace(weights, spec, x)
    grad_out = np.asarray(grad_out, dtype=np.float64).reshape(tr.output.shape)
    return _backward(weights, tr, grad_out)


def param_grads(
    weights: NetworkWeights,
    spec: MlpSpec,
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    batch,
) -> tuple[float, NetworkWeights]:
    """Loss value and its gradient w.r.t. every parameter.

    ``loss_fn`` maps the output array to ``(loss, dloss/doutputs)``.
    """
    x = _check_batch(weights, spec, batch)
    tr = _forward_trace(weights, spec, x)
    loss, g_out = loss_fn(tr.output)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", where="loss_fn")
    grads, _ = _backward(weights, tr, np.asarray(g_out, dtype=np.float64).reshape(tr.output.shape))
    return float(loss), grads


def _input_grad_trace(weights: NetworkWeights, tr: _Trace):
    """Input gradient of a scalar network plus the per-layer output adjoints."""
    n = len(weights.weights)
    g = np.ones((tr.output.shape[0], 1))
    adj = [None] * n
    for l in reversed(range(n)):
        adj[l] = g
        g = g @ weights.weights[l].T
        if l > 0:
            g = g * tr.masks[l - 1]
    return g, adj


def input_grad(weights: NetworkWeights, spec: MlpSpec, x) -> np.ndarray:
    """Per-sample gradient of a scalar-output network w.r.t. its input."""
    if spec.output_dim != 1:
        raise ContractError(f"input_grad needs a scalar output, spec has {spec.output_dim}")
    xx = _check_batch(weights, spec, x)
    tr = _forward_trace(weights, spec, xx)
    return _input_grad_trace(weights, tr)[0]


def gradient_penalty(
    weights: NetworkWeights,
    spec: MlpSpec,
    x_real,
    x_fake,
    eps,
) -> tuple[float, NetworkWeights]:
    """Mean of ``(||grad_x D(x_hat)|| - 1)**2`` over the batch.

    ``x_hat = eps * x_real + (1 - eps) * x_fake`` with one ``eps`` per
    sample. Returns the penalty and its exact parameter gradient. Biases
    only move the activation masks, so their penalty gradient is zero
    almost everywhere.
    """
    if spec.output_dim != 1:
        raise ContractError("gradient penalty needs a scalar critic")
    xr = _check_batch(weights, spec, x_real)
    xf = _check_batch(weights, spec, x_fake)
    if xr.shape != xf.shape:
        raise DimensionError(f"real {xr.shape} and fake {xf.shape} batches differ")
    e = np.asarray(eps, dtype=np.float64).reshape(-1, 1)
    if e.shape[0] != xr.shape[0]:
        raise DimensionError("need one interpolation coefficient per sample")
    if ((e < 0.0) | (e > 1.0)).any():
        raise ContractError("interpolation coefficients must lie in [0, 1]")
    x_hat = e * xr + (1.0 - e) * xf
    tr = _forward_trace(weights, spec, x_hat)
    u, adj = _input_grad_trace(weights, tr)

    n_batch = u.shape[0]
    norms = np.sqrt((u * u).sum(axis=1))
    penalty = float(np.mean((norms - 1.0) ** 2))
    zero = norms == 0.0
    if zero.any():
        log.debug("gradient penalty: %d samples with zero input gradient", int(zero.sum()))
    safe = np.where(zero, 1.0, norms)
    u_bar = np.where(zero, 0.0, 2.0 * (norms - 1.0) / (n_batch * safe))[:, None] * u

    # reverse of _input_grad_trace: v_l = adj_l @ W_l.T, adj_{l-1} = v_l * mask_{l-1}
    n = len(weights.weights)
    gw = [None] * n
    v_bar = u_bar
    for l in range(n):
        gw[l] = v_bar.T @ adj[l]
        if l == n - 1:
            break
        v_bar = (v_bar @ weights.weights[l]) * tr.masks[l]
    gb = [np.zeros_like(b) for b in weights.biases]
    return penalty, NetworkWeights(gw, gb)


@dataclass
class AdamState:
    """Adam moments plus a linear learning-rate decay.

    ``lr`` at the k-th update (1-based) is ``lr0 * (1 - (k - 1) / total_steps)``;
    ``total_steps=None`` keeps it constant.
    """

    lr0: float = 5e-4
    total_steps: int | None = None
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None

    def lr_at(self, k: int) -> float:
        if self.total_steps is None:
            return self.lr0
        return self.lr0 * max(0.0, 1.0 - (k - 1) / self.total_steps)


def adam_step(state: AdamState, weights: NetworkWeights, grads: NetworkWeights) -> NetworkWeights:
    """One Adam update. Advances ``state`` in place, returns new weights."""
    params, gs = weights.params(), grads.params()
    if len(params) != len(gs) or any(p.shape != g.shape for p, g in zip(params, gs)):
        raise DimensionError("gradient layout does not match the weights")
    for i, g in enumerate(gs):
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient passed to Adam", where=f"parameter {i}")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    k = state.step
    lr = state.lr_at(k)
    bc1 = 1.0 - state.beta1 ** k
    bc2 = 1.0 - state.beta2 ** k
    out = []
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        out.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
    return NetworkWeights.from_params(out)


def average_weights(items: Sequence[tuple[NetworkWeights, float]]) -> NetworkWeights:
    """Coefficient-normalized parameter-wise average of networks."""
    if not items:
        raise ContractError("nothing to average")
    dims = items[0][0].layer_dims
    coefs = np.array([c for _, c in items], dtype=np.float64)
    if (coefs < 0).any() or not coefs.any():
        raise ContractError("coefficients must be non-negative and not all zero")
    for w, _ in items:
        if w.layer_dims != dims:
            raise ContractError(f"cannot average networks of dims {dims} and {w.layer_dims}")
    coefs = coefs / coefs.sum()
    acc = [np.zeros_like(p) for p in items[0][0].params()]
    for (w, _), c in zip(items, coefs):
        for a, p in zip(acc, w.params()):
            a += c * p
    return NetworkWeights.from_params(acc)
