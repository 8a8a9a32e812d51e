"""Evaluation helpers: AUPRC, score histograms, noise and latent-path probes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detector import Detector, score
from .errors import ContractError
from .gan import Checkpoint, CheckpointStore


def auprc(scores, labels) -> float:
    """Area under the precision-recall curve, anomalous (label 1) positive.

    Non-interpolated: sum over distinct thresholds of (recall increment) x
    (precision at that threshold). Tied scores form a single threshold.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ContractError("scores and labels differ in length")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise ContractError("AUPRC needs both classes among the labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_block = np.append(s[1:] != s[:-1], True)
    tp = np.cumsum(y)[last_of_block]
    pp = (np.arange(1, len(s) + 1))[last_of_block]
    d_tp = np.diff(tp, prepend=0)
    return math.fsum((d_tp / n_pos) * (tp / pp))


def score_histogram(scores, n_bins: int = 50):
    """Equal-width density histogram over the score range: (edges, densities)."""
    if n_bins < 1:
        raise ContractError("n_bins must be >= 1")
    dens, edges = np.histogram(np.asarray(scores, dtype=np.float64).ravel(), bins=n_bins, density=True)
    return edges, dens


@dataclass
class ScoreReport:
    scores: np.ndarray
    labels: np.ndarray
    auprc: float
    edges: np.ndarray
    densities: np.ndarray


def score_report(scores, labels, n_bins: int = 50) -> ScoreReport:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if not np.isfinite(scores).all():
        raise ContractError("scores must be finite")
    labels = np.asarray(labels).ravel().astype(int)
    edges, dens = score_histogram(scores, n_bins)
    return ScoreReport(scores, labels, auprc(scores, labels), edges, dens)


def noise_sweep(detector: Detector, normal_batch, sigmas, rng: np.random.Generator) -> list[float]:
    """Mean score after adding N(0, sigma^2) noise, one value per sigma.

    One standard-normal draw is shared by all sigmas, so the sweep
    compares the same perturbation directions at growing magnitude.
    """
    sig = [float(s) for s in sigmas]
    if any(s < 0 for s in sig) or any(b < a for a, b in zip(sig, sig[1:])):
        raise ContractError("sigmas must be non-negative and non-decreasing")
    x = np.asarray(normal_batch, dtype=np.float64)
    noise = rng.standard_normal(x.shape)
    return [float(score(detector, x if s == 0.0 else x + s * noise).mean()) for s in sig]


def latent_interpolation(
    store: CheckpointStore,
    checkpoint: Checkpoint,
    detector: Detector,
    z1,
    z2,
    steps: int,
) -> list[tuple[float, float]]:
    """Scores of G((1 - t) z1 + t z2) for ``steps`` evenly spaced t in [0, 1]."""
    if steps < 2:
        raise ContractError("steps must be >= 2")
    z1 = np.asarray(z1, dtype=np.float64).ravel()
    z2 = np.asarray(z2, dtype=np.float64).ravel()
    if z1.shape != (store.config.latent_dim,) or z2.shape != z1.shape:
        raise ContractError(f"latent vectors must have dim {store.config.latent_dim}")
    ts = np.linspace(0.0, 1.0, steps)
    path = (1.0 - ts)[:, None] * z1 + ts[:, None] * z2
    path[0], path[-1] = z1, z2
    # one row at a time: batched BLAS may differ from single-row scoring in the last bit
    scores = [score(detector, store.generate(checkpoint, p[None, :]))[0] for p in path]
    return [(float(t), float(v)) for t, v in zip(ts, scores)]
