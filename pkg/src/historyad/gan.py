"""WGAN-GP training that records generator/critic snapshots.

One "batch" is one generator update, preceded by ``n_critic`` critic
updates; an epoch is ``batches_per_epoch`` generator updates. Snapshots are
taken ``saves_per_epoch`` times per epoch at evenly spaced batch counts and
stamped with the training time in epochs.

Sign convention: the critic is pushed negative on real data and positive on
generated samples, i.e. it maximizes E_G[D] - E_data[D]. The detector later
reuses that orientation (-1 normal, +1 anomalous).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np

from . import nn
from .errors import ContractError, DimensionError, NumericError
from .nn import AdamState, MlpSpec, NetworkWeights

log = logging.getLogger(__name__)


class SampleSource(Protocol):
    dim: int

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True)
class GanConfig:
    latent_dim: int = 2
    latent_std: float = 1.0
    n_epochs: int = 5
    batches_per_epoch: int = 100
    batch_size: int = 64
    n_critic: int = 5
    gp_coefficient: float = 10.0
    saves_per_epoch: int = 50
    seed: int = 0
    generator_hidden: tuple[int, ...] = (32, 32)
    critic_hidden: tuple[int, ...] = (32, 32)
    slope: float = 0.2
    lr: float = 5e-4
    critic_lr: float | None = None
    generator_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "generator_hidden", tuple(int(h) for h in self.generator_hidden))
        object.__setattr__(self, "critic_hidden", tuple(int(h) for h in self.critic_hidden))
        for name in ("latent_dim", "n_epochs", "batches_per_epoch", "batch_size", "n_critic", "saves_per_epoch"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        for name in ("latent_std", "gp_coefficient", "lr"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be > 0")
        if self.critic_lr is not None and not self.critic_lr > 0:
            raise ContractError("critic_lr must be > 0")
        if self.saves_per_epoch > self.batches_per_epoch:
            raise ContractError("saves_per_epoch must not exceed batches_per_epoch")
        if not 0 < self.slope < 1:
            raise ContractError("slope must lie in (0, 1)")

    def generator_spec(self, data_dim: int) -> MlpSpec:
        return MlpSpec((self.latent_dim, *self.generator_hidden, data_dim), self.slope)

    def critic_spec(self, data_dim: int) -> MlpSpec:
        return MlpSpec((data_dim, *self.critic_hidden, 1), self.slope)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator_hidden"] = list(self.generator_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        return cls(**d)


@dataclass
class Checkpoint:
    t: float
    generator: NetworkWeights
    discriminator: NetworkWeights
    index: int


@dataclass
class CheckpointStore:
    config: GanConfig
    generator_spec: MlpSpec
    critic_spec: MlpSpec
    checkpoints: list[Checkpoint] = field(default_factory=list)
    version: int = 1

    @property
    def data_dim(self) -> int:
        return self.generator_spec.output_dim

    def times(self) -> np.ndarray:
        return np.array([c.t for c in self.checkpoints])

    def generate(self, checkpoint: Checkpoint, z: np.ndarray) -> np.ndarray:
        return nn.forward(checkpoint.generator, self.generator_spec, z)


def _critic_terms(d_spec, d_w, real, fake):
    return float(nn.forward(d_w, d_spec, fake).mean()), float(nn.forward(d_w, d_spec, real).mean())


def wgan_losses(
    d_spec: MlpSpec,
    d_weights: NetworkWeights,
    g_spec: MlpSpec,
    g_weights: NetworkWeights,
    real_batch,
    z_batch,
    gp_coefficient: float,
    eps,
) -> tuple[float, float]:
    """Critic and generator losses for one batch.

    critic = mean D(x) - mean D(G(z)) + gp_coefficient * penalty,
    generator = mean D(G(z)).
    """
    fake = nn.forward(g_weights, g_spec, z_batch)
    d_fake, d_real = _critic_terms(d_spec, d_weights, real_batch, fake)
    gp, _ = nn.gradient_penalty(d_weights, d_spec, real_batch, fake, eps)
    critic = d_real - d_fake + gp_coefficient * gp
    generator = d_fake
    if not np.isfinite(critic):
        raise NumericError("non-finite critic loss", where="critic")
    if not np.isfinite(generator):
        raise NumericError("non-finite generator loss", where="generator")
    return critic, generator


def critic_grads(d_spec, d_w, real, fake, gp_coefficient, eps):
    """Critic loss and its parameter gradient (fake batch held fixed)."""
    n = real.shape[0]
    g_fake, _ = nn.backward(d_w, d_spec, fake, np.full((n, 1), -1.0 / n))
    g_real, _ = nn.backward(d_w, d_spec, real, np.full((n, 1), 1.0 / n))
    gp, g_gp = nn.gradient_penalty(d_w, d_spec, real, fake, eps)
    d_fake, d_real = _critic_terms(d_spec, d_w, real, fake)
    loss = d_real - d_fake + gp_coefficient * gp
    return loss, g_fake + g_real + g_gp.scaled(gp_coefficient)


def generator_grads(g_spec, g_w, d_spec, d_w, z):
    """Generator loss mean D(G(z)) and its gradient w.r.t. generator parameters."""
    n = z.shape[0]
    fake = nn.forward(g_w, g_spec, z)
    _, g_in = nn.backward(d_w, d_spec, fake, np.full((n, 1), 1.0 / n))
    grads, _ = nn.backward(g_w, g_spec, z, g_in)
    loss = float(nn.forward(d_w, d_spec, fake).mean())
    return loss, grads


def _save_points(batches_per_epoch: int, saves_per_epoch: int) -> set[int]:
    b, s = batches_per_epoch, saves_per_epoch
    return {k for k in range(1, b + 1) if (k * s) // b > ((k - 1) * s) // b}


def train_wgan(config: GanConfig, dataset: SampleSource) -> CheckpointStore:
    """Train G and D for exactly ``n_epochs`` epochs, snapshotting as configured.

    The initial state is stored at t=0. Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(config.seed)
    dim = int(dataset.dim)
    g_spec, d_spec = config.generator_spec(dim), config.critic_spec(dim)
    g_w = nn.init_weights(g_spec, rng)
    d_w = nn.init_weights(d_spec, rng)
    # zero critic head: a random initial slope would let the penalty lock in its sign
    d_w.weights[-1][:] = 0.0
    d_w.biases[-1][:] = 0.0
    if config.generator_offset:
        g_w.biases[-1] = g_w.biases[-1] + config.generator_offset

    total = config.n_epochs * config.batches_per_epoch
    g_opt = AdamState(lr0=config.lr, total_steps=total)
    d_opt = AdamState(lr0=config.critic_lr or config.lr, total_steps=total * config.n_critic)

    store = CheckpointStore(config, g_spec, d_spec)
    store.checkpoints.append(Checkpoint(0.0, g_w.copy(), d_w.copy(), 0))
    saves = _save_points(config.batches_per_epoch, config.saves_per_epoch)
    n = config.batch_size

    for epoch in range(config.n_epochs):
        for b in range(1, config.batches_per_epoch + 1):
            try:
                for _ in range(config.n_critic):
                    real = np.asarray(dataset.sample(n, rng), dtype=np.float64)
                    if real.shape != (n, dim):
                        raise DimensionError(f"dataset batch has shape {real.shape}, expected {(n, dim)}")
                    z = rng.normal(0.0, config.latent_std, size=(n, config.latent_dim))
                    eps = rng.random(n)
                    fake = nn.forward(g_w, g_spec, z)
                    c_loss, grads = critic_grads(d_spec, d_w, real, fake, config.gp_coefficient, eps)
                    if not np.isfinite(c_loss):
                        raise NumericError("non-finite critic loss", where="critic")
                    d_w = nn.adam_step(d_opt, d_w, grads)
                z = rng.normal(0.0, config.latent_std, size=(n, config.latent_dim))
                g_loss, grads = generator_grads(g_spec, g_w, d_spec, d_w, z)
                if not np.isfinite(g_loss):
                    raise NumericError("non-finite generator loss", where="generator")
                g_w = nn.adam_step(g_opt, g_w, grads)
            except NumericError as exc:
                last = store.checkpoints[-1].index
                raise NumericError(
                    f"WGAN training diverged at epoch {epoch}, batch {b}: {exc}",
                    where=f"last valid checkpoint {last}",
                ) from exc
            if b in saves:
                t = (epoch * config.batches_per_epoch + b) / config.batches_per_epoch
                store.checkpoints.append(Checkpoint(t, g_w.copy(), d_w.copy(), len(store.checkpoints)))
        log.info("epoch %d done: critic %.4f generator %.4f", epoch + 1, c_loss, g_loss)
    return store
