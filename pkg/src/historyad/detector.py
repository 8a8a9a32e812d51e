"""The anomaly detector: a critic trained between real data and history samples.

Training minimizes

    mean D(real) - mean D(hist) + lam * mean_{real + hist} dist(D, [-1, 1])^2

over equal-sized batches from both sources, so the pooled mean weights the
two distributions one half each. Scores are raw network outputs: about -1 on
normal data, about +1 on anomalies.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import ContractError, DimensionError, NumericError
from .nn import AdamState, MlpSpec, NetworkWeights

log = logging.getLogger(__name__)

INIT_MODES = ("weight_average", "random")


def boundary_distance(v):
    """Distance from ``v`` to the interval [-1, 1]."""
    return np.maximum(0.0, np.abs(v) - 1.0)


@dataclass(frozen=True)
class DetectorConfig:
    lam: float = 10.0
    steps: int = 2000
    batch_size: int = 256
    lr: float = 5e-4
    init_mode: str = "weight_average"
    seed: int = 0
    hidden: tuple[int, ...] = (64,)
    slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.lam > 0:
            raise ContractError("lam must be > 0")
        if self.steps < 1 or self.batch_size < 1:
            raise ContractError("steps and batch_size must be >= 1")
        if not self.lr > 0:
            raise ContractError("lr must be > 0")
        if self.init_mode not in INIT_MODES:
            raise ContractError(f"init_mode must be one of {INIT_MODES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class Detector:
    spec: MlpSpec
    weights: NetworkWeights
    config: DetectorConfig = field(default_factory=DetectorConfig)
    trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.spec.output_dim != 1:
            raise ContractError("detector must have a scalar output")
        if not self.weights.matches(self.spec):
            raise DimensionError("detector weights do not match its spec")


def _loss_and_output_grads(out_real, out_hist, lam):
    n_r, n_h = len(out_real), len(out_hist)
    pooled = n_r + n_h
    bd_r, bd_h = boundary_distance(out_real), boundary_distance(out_hist)
    loss = (
        out_real.mean() - out_hist.mean()
        + lam * (np.sum(bd_r ** 2) + np.sum(bd_h ** 2)) / pooled
    )
    g_r = 1.0 / n_r + lam * 2.0 * bd_r * np.sign(out_real) / pooled
    g_h = -1.0 / n_h + lam * 2.0 * bd_h * np.sign(out_hist) / pooled
    return float(loss), g_r, g_h


def dtv_loss(detector: Detector, real_batch, hist_batch, lam: float | None = None):
    """Loss value and parameter gradients on one pair of batches."""
    lam = detector.config.lam if lam is None else lam
    real = np.asarray(real_batch, dtype=np.float64)
    hist = np.asarray(hist_batch, dtype=np.float64)
    if len(real) == 0 or len(hist) == 0:
        raise ContractError("both batches must be non-empty")
    out_r = nn.forward(detector.weights, detector.spec, real)
    out_h = nn.forward(detector.weights, detector.spec, hist)
    loss, g_r, g_h = _loss_and_output_grads(out_r, out_h, lam)
    if not np.isfinite(loss):
        raise NumericError("non-finite detector loss", where="dtv_loss")
    grads_r, _ = nn.backward(detector.weights, detector.spec, real, g_r)
    grads_h, _ = nn.backward(detector.weights, detector.spec, hist, g_h)
    return loss, grads_r + grads_h


def loss_from_scores(real_scores, hist_scores, lam: float = 10.0) -> float:
    """Detector loss for given output values, without a network."""
    out_r = np.asarray(real_scores, dtype=np.float64).ravel()
    out_h = np.asarray(hist_scores, dtype=np.float64).ravel()
    if len(out_r) == 0 or len(out_h) == 0:
        raise ContractError("both batches must be non-empty")
    return _loss_and_output_grads(out_r, out_h, lam)[0]


def dtv_loss_value(detector: Detector, real_batch, hist_batch, lam: float | None = None) -> float:
    lam = detector.config.lam if lam is None else lam
    return loss_from_scores(score(detector, real_batch), score(detector, hist_batch), lam)


def initial_weights(history, dim: int, config: DetectorConfig, rng: np.random.Generator):
    """Starting spec and weights for the detector per ``config.init_mode``."""
    store = getattr(history, "store", None)
    if config.init_mode == "weight_average":
        if store is None:
            raise ContractError("weight_average init needs a history built from a checkpoint store")
        from .history import init_dtv

        return store.critic_spec, init_dtv(history)
    spec = store.critic_spec if store is not None else MlpSpec((dim, *config.hidden, 1), config.slope)
    return spec, nn.init_weights(spec, rng)


def train_dtv(history, dataset, config: DetectorConfig) -> Detector:
    """Fit the detector by Adam on fresh batches from ``dataset`` and ``history``.

    Both arguments expose ``dim`` and ``sample(n, rng)``. The returned
    detector carries the minibatch loss recorded before every update.
    """
    if int(history.dim) != int(dataset.dim):
        raise DimensionError(f"history dim {history.dim} != data dim {dataset.dim}")
    rng = np.random.default_rng(config.seed)
    spec, weights = initial_weights(history, int(dataset.dim), config, rng)
    det = Detector(spec, weights, config)
    opt = AdamState(lr0=config.lr, total_steps=config.steps)
    n = config.batch_size
    for step in range(config.steps):
        real = dataset.sample(n, rng)
        hist = history.sample(n, rng)
        try:
            loss, grads = dtv_loss(det, real, hist)
            det.weights = nn.adam_step(opt, det.weights, grads)
        except NumericError as exc:
            err = NumericError(f"detector training diverged at step {step}: {exc}", where="train_dtv")
            err.trace = list(det.trace)
            raise err from exc
        det.trace.append(loss)
    log.info("detector trained: loss %.4f -> %.4f", det.trace[0], det.trace[-1])
    return det


def score(detector: Detector, batch) -> np.ndarray:
    """Anomaly score per sample (-1 normal, +1 anomalous)."""
    return nn.forward(detector.weights, detector.spec, batch)[:, 0]
