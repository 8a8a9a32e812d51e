"""Sampling from the generator's training history.

Training times are drawn from the truncated exponential density
``c * exp(-beta * t)`` on ``[alpha, n_epochs]`` and mapped to the stored
checkpoint nearest in time; that generator then produces the sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import nn
from .errors import ContractError
from .gan import Checkpoint, CheckpointStore
from .nn import NetworkWeights


def _check_range(alpha, beta, n_epochs):
    if not 0.0 <= alpha < n_epochs:
        raise ContractError(f"need 0 <= alpha < n_epochs, got alpha={alpha}, n_epochs={n_epochs}")
    if beta < 0.0:
        raise ContractError(f"beta must be >= 0, got {beta}")


def time_density(t, alpha: float, beta: float, n_epochs: float):
    """Normalized density of the training-time distribution."""
    _check_range(alpha, beta, n_epochs)
    t = np.asarray(t, dtype=np.float64)
    if beta == 0.0:
        c = 1.0 / (n_epochs - alpha)
    else:
        # c = beta / (e^{-beta alpha} - e^{-beta n}), written relative to alpha for range
        c = beta / -math.expm1(-beta * (n_epochs - alpha))
    inside = (t >= alpha) & (t <= n_epochs)
    return np.where(inside, c * np.exp(-beta * (t - alpha)), 0.0)


def sample_time(alpha: float, beta: float, n_epochs: float, u):
    """Inverse CDF of the truncated exponential; ``u`` uniform in [0, 1).

    t = -(1/beta) ln(e^{-beta alpha} - u (e^{-beta alpha} - e^{-beta n_epochs})),
    evaluated as ``alpha - log1p(u * expm1(-beta (n - alpha))) / beta`` which
    is the same expression with the common factor e^{-beta alpha} pulled out.
    """
    _check_range(alpha, beta, n_epochs)
    u = np.asarray(u, dtype=np.float64)
    if beta == 0.0:
        t = alpha + u * (n_epochs - alpha)
    else:
        t = alpha - np.log1p(u * np.expm1(-beta * (n_epochs - alpha))) / beta
    t = np.clip(t, alpha, n_epochs)
    return float(t) if t.ndim == 0 else t


@dataclass
class HistoryDistribution:
    store: CheckpointStore
    alpha: float = 1.0
    beta: float = 3.0
    n_epochs: float | None = None
    case2: bool = False
    wide_factor: float = 3.0

    def __post_init__(self):
        if self.n_epochs is None:
            self.n_epochs = float(self.store.config.n_epochs)
        _check_range(self.alpha, self.beta, self.n_epochs)
        if not self.wide_factor > 1.0:
            raise ContractError("wide_factor must be > 1")
        if not self.store.checkpoints:
            raise ContractError("checkpoint store is empty")
        eligible = sorted(
            (c for c in self.store.checkpoints if self.alpha <= c.t <= self.n_epochs),
            key=lambda c: c.t,
        )
        if not eligible:
            raise ContractError(f"no checkpoint with alpha={self.alpha} <= t <= {self.n_epochs}")
        self._eligible = eligible
        self._times = np.array([c.t for c in eligible])

    @property
    def dim(self) -> int:
        return self.store.data_dim

    @property
    def eligible(self) -> list[Checkpoint]:
        return list(self._eligible)

    def _nearest_index(self, t):
        times = self._times
        t = np.asarray(t, dtype=np.float64)
        hi = np.clip(np.searchsorted(times, t, side="left"), 0, len(times) - 1)
        lo = np.clip(hi - 1, 0, len(times) - 1)
        # ties go to the later checkpoint
        return np.where(np.abs(t - times[lo]) < np.abs(times[hi] - t), lo, hi)

    def nearest_checkpoint(self, t: float) -> Checkpoint:
        """Eligible checkpoint closest in time to ``t``; ties pick the later one."""
        return self._eligible[int(self._nearest_index(t))]

    def sample_latent(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cfg = self.store.config
        z = rng.normal(0.0, cfg.latent_std, size=(n, cfg.latent_dim))
        if self.case2:
            wide = rng.random(n) < 0.5
            z[wide] *= self.wide_factor
        return z

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` draws from the history mixture (alias: :func:`sample_hist`)."""
        if n < 1:
            raise ContractError("n must be >= 1")
        u = rng.random(n)
        z = self.sample_latent(n, rng)
        idx = self._nearest_index(sample_time(self.alpha, self.beta, self.n_epochs, u))
        out = np.empty((n, self.dim))
        for i in np.unique(idx):
            rows = idx == i
            out[rows] = self.store.generate(self._eligible[i], z[rows])
        return out


def nearest_checkpoint(history: HistoryDistribution, t: float) -> Checkpoint:
    return history.nearest_checkpoint(t)


def sample_hist(history: HistoryDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    return history.sample(n, rng)


def init_dtv(history: HistoryDistribution) -> NetworkWeights:
    """Critic weights averaged over eligible checkpoints with weights e^{-beta t}."""
    ts = history._times
    if not len(ts):
        raise ContractError("no eligible checkpoints")
    spec_dims = history.store.critic_spec.layer_dims
    if any(c.discriminator.layer_dims != spec_dims for c in history._eligible):
        raise ContractError("critic architecture differs across checkpoints")
    # shifting the exponent by alpha only rescales c
    coefs = np.exp(-history.beta * (ts - history.alpha))
    return nn.average_weights([(c.discriminator, w) for c, w in zip(history._eligible, coefs)])


def support_coverage_diagnostic(
    history: HistoryDistribution,
    data_samples,
    radius: float,
    n_samples: int = 10_000,
    rng: np.random.Generator | None = None,
    samples=None,
) -> float:
    """Fraction of data points with a history sample within ``radius``.

    Draws ``n_samples`` history samples unless ``samples`` is given.
    """
    if not radius > 0:
        raise ContractError("radius must be > 0")
    if samples is None:
        samples = history.sample(n_samples, rng if rng is not None else np.random.default_rng(0))
    data = np.asarray(data_samples, dtype=np.float64).reshape(-1, history.dim)
    tree = cKDTree(np.asarray(samples, dtype=np.float64).reshape(-1, history.dim))
    dist, _ = tree.query(data, k=1)
    return float(np.mean(dist <= radius))
