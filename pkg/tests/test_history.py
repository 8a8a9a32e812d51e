import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from historyad.errors import ContractError
from historyad.gan import Checkpoint, CheckpointStore, GanConfig
from historyad.history import (
    HistoryDistribution,
    init_dtv,
    nearest_checkpoint,
    sample_hist,
    sample_time,
    support_coverage_diagnostic,
    time_density,
)
from historyad.nn import MlpSpec, NetworkWeights, init_weights


def tagged_store(times, n_epochs=5, latent_dim=2, seed=0):
    """Store whose generators ignore z and emit their own checkpoint time."""
    cfg = GanConfig(latent_dim=latent_dim, n_epochs=n_epochs, critic_hidden=(3,))
    g_spec = MlpSpec((latent_dim, 1))
    d_spec = cfg.critic_spec(1)
    rng = np.random.default_rng(seed)
    ckpts = []
    for i, t in enumerate(times):
        g = NetworkWeights([np.zeros((latent_dim, 1))], [np.array([float(t)])])
        ckpts.append(Checkpoint(float(t), g, init_weights(d_spec, rng), i))
    return CheckpointStore(cfg, g_spec, d_spec, ckpts)


def identity_store(times, latent_dim=1):
    """Store whose generators are G(z) = z + t (first latent coordinate)."""
    cfg = GanConfig(latent_dim=latent_dim, n_epochs=5, critic_hidden=(3,))
    g_spec = MlpSpec((latent_dim, 1))
    d_spec = cfg.critic_spec(1)
    w = np.zeros((latent_dim, 1))
    w[0, 0] = 1.0
    ckpts = [
        Checkpoint(float(t), NetworkWeights([w.copy()], [np.array([float(t)])]), NetworkWeights.zeros(d_spec), i)
        for i, t in enumerate(times)
    ]
    return CheckpointStore(cfg, g_spec, d_spec, ckpts)


def quadrature_cdf(t, alpha, beta, n):
    num, _ = integrate.quad(lambda s: math.exp(-beta * s), alpha, t, epsabs=1e-13, epsrel=1e-12)
    den, _ = integrate.quad(lambda s: math.exp(-beta * s), alpha, n, epsabs=1e-13, epsrel=1e-12)
    return num / den


def bisect_inverse(u, alpha, beta, n, iters=200):
    lo, hi = alpha, n
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if quadrature_cdf(mid, alpha, beta, n) < u:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


GRID = np.round(np.arange(0, 251) * 0.02, 10)


class TestSampleTime:
    def test_lower_endpoint(self):
        assert sample_time(1.0, 3.0, 5.0, 0.0) == 1.0

    def test_upper_endpoint(self):
        assert sample_time(1.0, 3.0, 5.0, np.nextafter(1.0, 0.0)) == pytest.approx(5.0, abs=1e-9)

    def test_median_value(self):
        t = sample_time(1.0, 3.0, 5.0, 0.5)
        assert t == pytest.approx(1.2311, abs=1e-4)
        assert t == pytest.approx(bisect_inverse(0.5, 1.0, 3.0, 5.0), abs=1e-10)

    @pytest.mark.parametrize("alpha,beta,n", [(1.0, 3.0, 5.0), (0.0, 0.5, 10.0), (2.0, 5.0, 10.0), (0.5, 1e-9, 3.0)])
    def test_inverse_of_quadrature_cdf(self, alpha, beta, n):
        for u in (0.05, 0.3, 0.77, 0.99):
            assert sample_time(alpha, beta, n, u) == pytest.approx(bisect_inverse(u, alpha, beta, n), abs=1e-9)

    def test_beta_zero_is_uniform_map(self):
        np.testing.assert_allclose(sample_time(1.0, 0.0, 5.0, np.array([0.0, 0.25, 0.5])), [1.0, 2.0, 3.0])

    @pytest.mark.parametrize("alpha,beta,n", [(5.0, 1.0, 5.0), (-1.0, 1.0, 5.0), (1.0, -0.1, 5.0)])
    def test_invalid_range(self, alpha, beta, n):
        with pytest.raises(ContractError):
            sample_time(alpha, beta, n, 0.5)

    @given(u=st.floats(0.0, 1.0, exclude_max=True), beta=st.floats(0.0, 60.0))
    def test_in_range(self, u, beta):
        t = sample_time(1.0, beta, 5.0, u)
        assert 1.0 <= t <= 5.0

    def test_histogram_l1(self):
        alpha, beta, n = 1.0, 3.0, 5.0
        rng = np.random.default_rng(0)
        t = sample_time(alpha, beta, n, rng.random(1_000_000))
        counts, edges = np.histogram(t, bins=50, range=(alpha, n))
        exact = np.array([quadrature_cdf(b, alpha, beta, n) - quadrature_cdf(a, alpha, beta, n) for a, b in zip(edges[:-1], edges[1:])])
        assert np.abs(counts / len(t) - exact).sum() < 0.01

    def test_uniform_ks(self):
        rng = np.random.default_rng(1)
        t = sample_time(0.0, 0.0, 1.0, rng.random(1_000_000))
        assert stats.kstest(t, "uniform").statistic < 0.005

    def test_density_normalized(self):
        val, _ = integrate.quad(lambda s: float(time_density(s, 1.0, 3.0, 5.0)), 1.0, 5.0)
        assert val == pytest.approx(1.0, abs=1e-12)
        assert time_density(0.5, 1.0, 3.0, 5.0) == 0.0


class TestNearestCheckpoint:
    def setup_method(self):
        self.h = HistoryDistribution(tagged_store(GRID), alpha=1.0, beta=3.0)

    def test_exact_time(self):
        assert nearest_checkpoint(self.h, 1.5).t == pytest.approx(1.5)

    def test_midway_goes_later(self):
        h = HistoryDistribution(tagged_store([0.0, 1.0, 2.0, 3.0]), alpha=1.0, beta=3.0, n_epochs=5.0)
        assert nearest_checkpoint(h, 1.5).t == 2.0
        assert nearest_checkpoint(h, 2.5).t == 3.0

    def test_below_first_eligible(self):
        h = HistoryDistribution(tagged_store([0.0, 0.9, 1.3, 2.0]), alpha=1.0, beta=3.0)
        assert nearest_checkpoint(h, 1.0).t == 1.3

    def test_no_eligible(self):
        with pytest.raises(ContractError):
            HistoryDistribution(tagged_store([0.0, 0.5]), alpha=1.0, beta=3.0)


class TestSampleHist:
    def test_single_checkpoint(self):
        h = HistoryDistribution(tagged_store([0.0, 2.0]), alpha=1.0, beta=7.0)
        out = sample_hist(h, 500, np.random.default_rng(0))
        assert out.shape == (500, 1)
        assert (out == 2.0).all()

    def test_large_beta_concentrates_early(self):
        h = HistoryDistribution(tagged_store(GRID), alpha=1.0, beta=50.0)
        out = h.sample(20_000, np.random.default_rng(2))[:, 0]
        first_tenth = 1.0 + 0.1 * (5.0 - 1.0)
        assert np.mean(out <= first_tenth + 0.01) >= 0.99

    def test_matches_time_density(self):
        h = HistoryDistribution(tagged_store(GRID), alpha=1.0, beta=3.0)
        out = h.sample(200_000, np.random.default_rng(3))[:, 0]
        assert abs(np.mean(out) - integrate.quad(lambda s: s * float(time_density(s, 1.0, 3.0, 5.0)), 1, 5)[0]) < 0.01

    def test_storage_order_invariance(self):
        store = tagged_store(GRID)
        shuffled = tagged_store(GRID)
        np.random.default_rng(4).shuffle(shuffled.checkpoints)
        a = HistoryDistribution(store, 1.0, 3.0).sample(5000, np.random.default_rng(9))
        b = HistoryDistribution(shuffled, 1.0, 3.0).sample(5000, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_case2_latents(self):
        store = tagged_store(GRID)
        rng = np.random.default_rng(5)
        z1 = HistoryDistribution(store, case2=False).sample_latent(100_000, rng)
        z2 = HistoryDistribution(store, case2=True, wide_factor=3.0).sample_latent(100_000, rng)
        n1, n2 = np.linalg.norm(z1, axis=1), np.linalg.norm(z2, axis=1)
        assert n2.mean() > n1.mean()
        # half/half mixture of radii: mean norm is the average of the two scales
        assert n2.mean() == pytest.approx(n1.mean() * (1 + 3.0) / 2, rel=0.02)

    def test_case2_output_wider(self):
        store = identity_store(GRID)
        a = HistoryDistribution(store, case2=False).sample(50_000, np.random.default_rng(6))
        b = HistoryDistribution(store, case2=True).sample(50_000, np.random.default_rng(6))
        assert np.std(b) > np.std(a)

    def test_bad_n(self):
        with pytest.raises(ContractError):
            HistoryDistribution(tagged_store(GRID)).sample(0, np.random.default_rng(0))


class TestInitDtv:
    def test_single_eligible(self):
        store = tagged_store([0.0, 3.0])
        w = init_dtv(HistoryDistribution(store, alpha=1.0, beta=3.0))
        np.testing.assert_array_equal(w.flat(), store.checkpoints[1].discriminator.flat())

    def test_two_checkpoints_beta_zero(self):
        store = tagged_store([0.0, 2.0, 4.0])
        w = init_dtv(HistoryDistribution(store, alpha=1.0, beta=0.0))
        want = 0.5 * (store.checkpoints[1].discriminator.flat() + store.checkpoints[2].discriminator.flat())
        np.testing.assert_allclose(w.flat(), want, rtol=0, atol=1e-15)

    def test_direct_weighted_sum(self):
        store = tagged_store(GRID)
        w = init_dtv(HistoryDistribution(store, alpha=1.0, beta=3.0))
        eligible = [c for c in store.checkpoints if 1.0 <= c.t <= 5.0]
        coef = np.array([math.exp(-3.0 * c.t) for c in eligible])
        direct = sum(k * c.discriminator.flat() for k, c in zip(coef, eligible)) / coef.sum()
        assert np.max(np.abs(w.flat() - direct)) < 1e-12

    @settings(max_examples=25, deadline=None)
    @given(shift=st.floats(-3.0, 3.0))
    def test_constant_rescaling_invariance(self, shift):
        # e^{-beta (t - s)} = e^{beta s} e^{-beta t}: moving alpha's reference only rescales c
        store = tagged_store(GRID)
        h = HistoryDistribution(store, alpha=1.0, beta=3.0)
        eligible = h.eligible
        coef = np.array([math.exp(-3.0 * (c.t - shift)) for c in eligible])
        direct = sum(k * c.discriminator.flat() for k, c in zip(coef, eligible)) / coef.sum()
        assert np.max(np.abs(init_dtv(h).flat() - direct)) < 1e-12


class TestCoverage:
    def test_subset_is_full(self):
        h = HistoryDistribution(identity_store(GRID))
        samples = h.sample(2000, np.random.default_rng(0))
        cov = support_coverage_diagnostic(h, samples[:300], radius=1e-9, samples=samples)
        assert cov == 1.0

    def test_far_is_zero(self):
        h = HistoryDistribution(tagged_store(GRID))
        assert support_coverage_diagnostic(h, np.full((50, 1), 100.0), 0.5, 1000, np.random.default_rng(0)) == 0.0

    def test_monotone_in_radius(self):
        h = HistoryDistribution(identity_store(GRID))
        data = np.random.default_rng(1).normal(0, 3, size=(500, 1))
        samples = h.sample(3000, np.random.default_rng(2))
        covs = [support_coverage_diagnostic(h, data, r, samples=samples) for r in (0.01, 0.05, 0.1, 0.5, 1.0)]
        assert covs == sorted(covs)

    def test_bad_radius(self):
        h = HistoryDistribution(tagged_store(GRID))
        with pytest.raises(ContractError):
            support_coverage_diagnostic(h, np.zeros((1, 1)), 0.0)
