"""Acceptance suite: one PASS/FAIL line per criterion, collected in REPORT.

The lines are printed as they are produced and again in the pytest
terminal summary (see conftest.py).
"""

import json
import time

import numpy as np
import pytest
from scipy import stats

from historyad import pipeline, storage
from historyad.detector import DetectorConfig, score, train_dtv
from historyad.gan import train_wgan
from historyad.history import init_dtv, sample_time
from historyad.metrics import auprc
from historyad.nn import forward, gradient_penalty, input_grad, param_grads
from historyad.oracle import (
    Density1D,
    DensityPair,
    integrated_loss,
    min_loss,
    optimal_d,
    optimal_dtv_star,
    tv_distance,
)
from tests.test_detector import Source, loss_and_se
from tests.test_history import quadrature_cdf
from tests.test_metrics import brute_force_auprc, random_instance
from tests.test_nn import fd_grad, random_net, rel_err

REPORT = []

N01 = Density1D.normal(0.0, 1.0)
ORACLE_PAIRS = {
    "N(0,1) vs N(1,1)": (N01, Density1D.normal(1.0, 1.0)),
    "N(0,1) vs N(0,2)": (N01, Density1D.normal(0.0, 2.0)),
    "N(0,1) vs U(-5,5)": (N01, Density1D.uniform(-5.0, 5.0)),
    "U(0,1) vs U(2,3)": (Density1D.uniform(0.0, 1.0), Density1D.uniform(2.0, 3.0)),
    "U(0,1) vs U(-1,2)": (Density1D.uniform(0.0, 1.0), Density1D.uniform(-1.0, 2.0)),
    "N(0,1) vs bimodal": (N01, Density1D(gaussians=((0.5, -2.0, 0.5), (0.5, 2.0, 0.5)))),
}
TRAIN_PAIRS = {
    "N(0,1) vs N(0,2)": (N01, Density1D.normal(0.0, 2.0)),
    "N(0,1) vs N(2,1)": (N01, Density1D.normal(2.0, 1.0)),
    "N(0,1) vs U(-5,5)": (N01, Density1D.uniform(-5.0, 5.0)),
    "U(0,1) vs U(-1,2)": (Density1D.uniform(0.0, 1.0), Density1D.uniform(-1.0, 2.0)),
}
# detector setting for the analytic-pair runs (no GAN involved)
PAIR_DETECTOR = dict(init_mode="random", hidden=(64, 64), steps=4000, batch_size=512, lr=1e-3)
HELD_OUT = 200_000
INIT_SEEDS = range(10)


def report(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}  {title}: {detail}"
    REPORT.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    cfg = pipeline.toy_config(seed=0, out_dir=str(out))
    start = time.perf_counter()
    paths = pipeline.run_toy(cfg)
    elapsed = time.perf_counter() - start
    metrics = json.loads(paths["metrics"].read_text())
    return {"config": cfg, "paths": paths, "metrics": metrics, "elapsed": elapsed}


def test_c01_closure():
    start = time.perf_counter()
    errs = {}
    for name, (pd, ph) in ORACLE_PAIRS.items():
        pair = DensityPair(pd, ph)
        errs[name] = abs(integrated_loss(pair, optimal_d(pair, pair.nodes)) - min_loss(pair))
    elapsed = time.perf_counter() - start
    worst = max(errs.values())
    report(1, "closure at D*_TV + delta*", worst < 1e-8 and elapsed < 1.0,
           f"{len(errs)} pairs, max |error| {worst:.2e} (< 1e-8), {elapsed:.3f} s (< 1 s)")


def test_c02_duality():
    errs = []
    for pd, ph in ORACLE_PAIRS.values():
        pair = DensityPair(pd, ph)
        p_data, p_hist = pair.densities()
        gap = pair.integrate((p_hist - p_data) * optimal_dtv_star(pair, pair.nodes))
        errs.append(abs(gap - 2 * tv_distance(pair)))
    report(2, "duality gap equals 2 TV", max(errs) < 1e-8, f"{len(errs)} pairs, max |error| {max(errs):.2e} (< 1e-8)")


def test_c03_trained_detector_optimality():
    rows, ok = [], True
    for i, (name, (pd, ph)) in enumerate(TRAIN_PAIRS.items()):
        start = time.perf_counter()
        det = train_dtv(Source(ph), Source(pd), DetectorConfig(seed=100 + i, **PAIR_DETECTOR))
        elapsed = time.perf_counter() - start
        rng = np.random.default_rng(200 + i)
        est, se = loss_and_se(score(det, pd.sample(HELD_OUT, rng)), score(det, ph.sample(HELD_OUT, rng)))
        best = min_loss(DensityPair(pd, ph))
        rel = abs(est - best) / abs(best)
        good = rel < 0.05 and est >= best - 3 * se and elapsed < 120 and det.trace[-1] < det.trace[0]
        ok &= good
        rows.append(f"{name} rel {rel:.2%} (se {se:.1e}, {elapsed:.0f} s)")
    report(3, "trained detector within 5% of min_loss, not below min - 3 SE, < 2 min", ok, "; ".join(rows))


def test_c04_toy_pipeline(toy):
    m = toy["metrics"]
    prof = np.loadtxt(toy["paths"]["profile"], delimiter=",", skiprows=1)
    far = prof[np.abs(prof[:, 0]) >= 4.0]
    det = storage.load_detector(toy["paths"]["detector"])
    checks = [
        m["mean_score_normal"] < -0.5,
        far[:, 1].min() > 0.5,
        m["auprc"] >= 0.95,
        toy["elapsed"] < 300,
        det.trace[-1] < det.trace[0],
    ]
    report(4, "toy pipeline", all(checks),
           f"normal mean {m['mean_score_normal']:+.3f} (< -0.5), min score at |x| >= 4 {far[:, 1].min():+.3f} (> 0.5), "
           f"AUPRC {m['auprc']:.4f} (>= 0.95), {toy['elapsed']:.0f} s (< 300 s)")


def test_c05_coverage(toy):
    h = json.loads(toy["paths"]["history"].read_text())
    cfg = toy["config"]
    ok = h["coverage"] >= 0.99 and h["coverage_radius"] == 0.1 and cfg.run.coverage_samples == 10_000
    report(5, "support coverage", ok, f"{h['coverage']:.4f} (>= 0.99) at radius 0.1 with 10^4 history samples")


def test_c06_gradient_checks():
    rng = np.random.default_rng(60)
    n = 100
    worst_param = worst_input = worst_gp = 0.0
    for _ in range(n):
        spec, w = random_net(rng)
        x = rng.normal(size=(5, spec.input_dim))
        up = rng.normal(size=(5, 1))

        def loss_fn(out):
            return float((out * up).sum()), up

        _, g = param_grads(w, spec, loss_fn, x)
        fd = fd_grad(lambda v: loss_fn(forward(w.with_flat(v), spec, x))[0], w.flat(), 1e-6)
        worst_param = max(worst_param, rel_err(g.flat(), fd))

        x0 = x[0].copy()
        gi = input_grad(w, spec, x0[None])[0]
        worst_input = max(worst_input, rel_err(gi, fd_grad(lambda v: float(forward(w, spec, v[None])[0, 0]), x0, 1e-6)))

        xf, e = rng.normal(size=x.shape), rng.random(5)
        _, gg = gradient_penalty(w, spec, x, xf, e)
        fd_gp = fd_grad(lambda v: gradient_penalty(w.with_flat(v), spec, x, xf, e)[0], w.flat(), 1e-6)
        worst_gp = max(worst_gp, rel_err(gg.flat(), fd_gp))
    ok = worst_param < 1e-6 and worst_input < 1e-6 and worst_gp < 1e-4
    report(6, "gradient checks", ok,
           f"{n} instances, param {worst_param:.1e} / input {worst_input:.1e} (< 1e-6), penalty {worst_gp:.1e} (< 1e-4)")


def test_c07_sampler():
    alpha, beta, n_ep = 1.0, 3.0, 5.0
    rng = np.random.default_rng(70)
    t = sample_time(alpha, beta, n_ep, rng.random(1_000_000))
    counts, edges = np.histogram(t, bins=50, range=(alpha, n_ep))
    cdf = np.array([quadrature_cdf(e, alpha, beta, n_ep) for e in edges])
    l1 = np.abs(counts / len(t) - np.diff(cdf)).sum()
    u = sample_time(0.0, 0.0, 1.0, rng.random(1_000_000))
    ks = stats.kstest(u, "uniform").statistic
    report(7, "time sampler", l1 < 0.01 and ks < 0.005, f"L1 {l1:.4f} (< 0.01), beta=0 KS {ks:.5f} (< 0.005)")


def test_c08_initialization(toy):
    base = toy["config"]
    wins, gaps, exact = 0, [], 0.0
    for seed in INIT_SEEDS:
        cfg = base.with_seed(seed)
        dataset = pipeline.make_dataset(cfg)
        if seed == base.run.seed:
            store = storage.load_store(toy["paths"]["store"])
        else:
            store = train_wgan(cfg.gan, dataset)
        history = pipeline.make_history(cfg, store)
        losses = pipeline.initial_losses(cfg, history, dataset)
        wins += losses["weight_average"] < losses["random"]
        gaps.append(losses["weight_average"] - losses["random"])

        coef = np.exp(-cfg.history.beta * np.array([c.t for c in history.eligible]))
        direct = sum(k * c.discriminator.flat() for k, c in zip(coef, history.eligible)) / coef.sum()
        exact = max(exact, float(np.max(np.abs(init_dtv(history).flat() - direct))))
    ok = wins > len(INIT_SEEDS) / 2 and exact < 1e-12
    report(8, "weight-average init beats random init", ok,
           f"wins {wins}/{len(INIT_SEEDS)} (majority needed), mean loss gap {np.mean(gaps):+.3f}, "
           f"init vs direct sum {exact:.1e} (< 1e-12)")


def test_c09_auprc_oracle():
    rng = np.random.default_rng(90)
    n, mismatches = 1000, 0
    for _ in range(n):
        s, y = random_instance(rng)
        mismatches += auprc(s, y) != brute_force_auprc(s, y)
    report(9, "AUPRC vs exhaustive thresholds", mismatches == 0, f"{mismatches} mismatches in {n} instances (n <= 12)")


def test_c10_noise_monotone(toy):
    m = toy["metrics"]
    means = m["noise_mean_scores"]
    ok = list(m["noise_sigmas"]) == [0.0, 0.5, 1.0, 2.0, 4.0] and all(b >= a for a, b in zip(means, means[1:]))
    report(10, "noise sweep non-decreasing", ok, ", ".join(f"{s:g}: {v:+.3f}" for s, v in zip(m["noise_sigmas"], means)))


def test_c11_ablation(toy, tmp_path):
    cfg = toy["config"].with_out_dir(tmp_path)
    rows = {r["saves_per_epoch"]: r for r in pipeline.checkpoint_frequency_ablation(cfg, (1, 25))}
    report(11, "checkpoint frequency ablation", rows[25]["auprc"] >= rows[1]["auprc"],
           f"AUPRC {rows[25]['auprc']:.7f} at 25 saves/epoch vs {rows[1]['auprc']:.7f} at 1 (same seed); "
           f"coverage {rows[25]['coverage']:.4f} vs {rows[1]['coverage']:.4f}")


def test_c12_persistence(toy, tmp_path):
    paths = toy["paths"]
    store_blob, det_blob = paths["store"].read_bytes(), paths["detector"].read_bytes()
    round_trip = (
        storage.store_to_bytes(storage.load_store(paths["store"])) == store_blob
        and storage.detector_to_bytes(storage.load_detector(paths["detector"])) == det_blob
    )
    again = pipeline.run_toy(toy["config"].with_out_dir(tmp_path))
    differing = [k for k in paths if paths[k].read_bytes() != again[k].read_bytes()]
    report(12, "persistence and rerun", round_trip and not differing,
           f"round trip {'bit-exact' if round_trip else 'differs'}, "
           f"rerun differs in {differing or 'no files'} ({len(paths)} artifacts)")
