"""End-to-end runs: GAN -> history -> detector -> scores and metrics.

Every artifact is written deterministically (sorted JSON keys, ``repr``
floats), so a rerun with the same config and seed reproduces each file
byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import storage
from .config import DataConfig, ExperimentConfig, HistoryConfig
from .data import DatasetHandle, MixtureSpec, load_idx, synth_dataset
from .detector import Detector, DetectorConfig, dtv_loss_value, initial_weights, score, train_dtv
from .errors import FormatError, HistoryADError, PipelineError
from .gan import CheckpointStore, GanConfig, train_wgan
from .history import HistoryDistribution, support_coverage_diagnostic
from .metrics import auprc, latent_interpolation, noise_sweep, score_histogram

log = logging.getLogger(__name__)

STORE_FILE = "checkpoints.hadc"
DETECTOR_FILE = "detector.hadt"
SCORES_FILE = "scores.csv"
HISTOGRAM_FILE = "histogram.csv"
METRICS_FILE = "metrics.json"
HISTORY_FILE = "history.json"

NOISE_SIGMAS = (0.0, 0.5, 1.0, 2.0, 4.0)
LOSS_EVAL_SAMPLES = 20_000


def toy_config(seed: int = 0, out_dir: str = "out/toy") -> ExperimentConfig:
    """1D N(0, 1) data with a generator started at +5 and anomalies at +6.

    The generator and critic settings make the generator overshoot the data
    in both directions within the first two epochs, which is where the
    history weight e^{-3 t} concentrates.
    """
    cfg = ExperimentConfig(
        data=DataConfig(anomaly_shift=(6.0,)),
        gan=GanConfig(
            latent_dim=2,
            n_epochs=5,
            batches_per_epoch=1200,
            batch_size=64,
            n_critic=5,
            gp_coefficient=2.0,
            saves_per_epoch=50,
            generator_hidden=(64,),
            critic_hidden=(64,),
            lr=5e-4,
            generator_offset=5.0,
        ),
        history=HistoryConfig(alpha=1.0, beta=3.0),
        detector=DetectorConfig(lam=10.0, steps=4000, batch_size=256, lr=5e-4, hidden=(64,)),
    )
    return cfg.with_seed(seed).with_out_dir(out_dir)


@contextmanager
def stage(name: str):
    """Re-raise package errors from the block as :class:`PipelineError`."""
    try:
        yield
    except PipelineError:
        raise
    except (HistoryADError, OSError) as exc:
        raise PipelineError(name, exc) from exc


def make_dataset(config: ExperimentConfig) -> DatasetHandle:
    d = config.data
    seed = config.seed_for("data")
    if d.kind == "idx":
        return load_idx(d.images, d.labels, d.anomalous_labels, d.test_fraction, seed)
    spec = MixtureSpec(d.weights, d.means, d.stds)
    shift = d.anomaly_shift if d.anomaly_shift else None
    return synth_dataset(spec, seed, d.n_train, d.n_test, shift)


def make_history(config: ExperimentConfig, store: CheckpointStore) -> HistoryDistribution:
    h = config.history
    return HistoryDistribution(store, h.alpha, h.beta, case2=h.case2, wide_factor=h.wide_factor)


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_scores_csv(path: Path, scores, labels) -> None:
    lines = ["sample_id,score,label"]
    lines += [f"{i},{float(s)!r},{int(y)}" for i, (s, y) in enumerate(zip(scores, labels))]
    _write_text(path, "\n".join(lines) + "\n")


def read_scores_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["sample_id", "score", "label"]:
        raise FormatError(f"{path}: expected header 'sample_id,score,label'", offset=0)
    scores, labels = [], []
    for line, row in enumerate(rows[1:], start=2):
        try:
            _, s, y = row
            scores.append(float(s))
            labels.append(int(y))
        except ValueError as exc:
            raise FormatError(f"{path}: bad row at line {line}: {exc}") from exc
    return np.array(scores), np.array(labels, dtype=int)


def write_histogram_csv(path: Path, edges, dens) -> None:
    lines = ["bin_lo,bin_hi,density"]
    lines += [f"{float(a)!r},{float(b)!r},{float(d)!r}" for a, b, d in zip(edges[:-1], edges[1:], dens)]
    _write_text(path, "\n".join(lines) + "\n")


def stage_train_gan(config: ExperimentConfig, dataset: DatasetHandle, out: Path) -> CheckpointStore:
    with stage("train-gan"):
        store = train_wgan(config.gan, dataset)
        storage.save_store(store, out / STORE_FILE)
    return store


def stage_history(config: ExperimentConfig, store: CheckpointStore, dataset: DatasetHandle, out: Path):
    """Build the history and write its diagnostics; returns (history, summary)."""
    with stage("build-history"):
        history = make_history(config, store)
        rng = np.random.default_rng(config.seed_for("eval"))
        normal_test = dataset.test[dataset.test_labels == 0]
        probe = normal_test if len(normal_test) else dataset.train
        coverage = support_coverage_diagnostic(
            history, probe, config.run.coverage_radius, config.run.coverage_samples, rng
        )
        summary = {
            "alpha": history.alpha,
            "beta": history.beta,
            "case2": history.case2,
            "eligible_checkpoints": len(history.eligible),
            "eligible_times": [c.t for c in history.eligible],
            "coverage": coverage,
            "coverage_radius": config.run.coverage_radius,
        }
        write_json(out / HISTORY_FILE, summary)
    return history, summary


def stage_train_detector(config: ExperimentConfig, history, dataset: DatasetHandle, out: Path) -> Detector:
    with stage("train-detector"):
        det = train_dtv(history, dataset, config.detector)
        storage.save_detector(det, out / DETECTOR_FILE)
    return det


def stage_score(detector: Detector, dataset: DatasetHandle, out: Path) -> np.ndarray:
    with stage("score"):
        if len(dataset.test) == 0:
            raise HistoryADError("dataset has no test samples to score")
        scores = score(detector, dataset.test)
        write_scores_csv(out / SCORES_FILE, scores, dataset.test_labels)
    return scores


def stage_eval(config: ExperimentConfig, detector: Detector, dataset: DatasetHandle, scores, out: Path,
               extra: dict | None = None) -> dict:
    with stage("eval"):
        labels = dataset.test_labels
        edges, dens = score_histogram(scores, config.run.histogram_bins)
        write_histogram_csv(out / HISTOGRAM_FILE, edges, dens)
        has_both = 0 < labels.sum() < len(labels)
        normal = dataset.test[labels == 0]
        rng = np.random.default_rng(config.seed_for("eval"))
        metrics = {
            "auprc": auprc(scores, labels) if has_both else None,
            "n_test": int(len(labels)),
            "n_anomalous": int(labels.sum()),
            "mean_score_normal": float(scores[labels == 0].mean()) if (labels == 0).any() else None,
            "mean_score_anomalous": float(scores[labels == 1].mean()) if (labels == 1).any() else None,
            "detector_loss_first": detector.trace[0] if detector.trace else None,
            "detector_loss_last": detector.trace[-1] if detector.trace else None,
            "noise_sigmas": list(NOISE_SIGMAS),
            "noise_mean_scores": noise_sweep(detector, normal, NOISE_SIGMAS, rng) if len(normal) else None,
        }
        metrics.update(extra or {})
        write_json(out / METRICS_FILE, metrics)
    return metrics


def run_pipeline(config: ExperimentConfig, dataset: DatasetHandle | None = None) -> dict[str, Path]:
    """Run every stage and return the written artifact paths by name."""
    out = Path(config.run.out_dir)
    with stage("setup"):
        out.mkdir(parents=True, exist_ok=True)
    with stage("data"):
        dataset = make_dataset(config) if dataset is None else dataset
    store = stage_train_gan(config, dataset, out)
    history, summary = stage_history(config, store, dataset, out)
    det = stage_train_detector(config, history, dataset, out)
    scores = stage_score(det, dataset, out)
    stage_eval(config, det, dataset, scores, out, {"coverage": summary["coverage"]})
    names = {
        "store": STORE_FILE,
        "history": HISTORY_FILE,
        "detector": DETECTOR_FILE,
        "scores": SCORES_FILE,
        "histogram": HISTOGRAM_FILE,
        "metrics": METRICS_FILE,
    }
    return {k: out / v for k, v in names.items()}


def initial_losses(config: ExperimentConfig, history, dataset, n: int = LOSS_EVAL_SAMPLES) -> dict:
    """Detector loss at initialization for both init modes, on shared samples."""
    rng = np.random.default_rng(config.seed_for("eval"))
    real, hist = dataset.sample(n, rng), history.sample(n, rng)
    out = {}
    for mode in ("weight_average", "random"):
        cfg = dataclasses.replace(config.detector, init_mode=mode)
        spec, w = initial_weights(history, dataset.dim, cfg, np.random.default_rng(cfg.seed))
        out[mode] = dtv_loss_value(Detector(spec, w, cfg), real, hist)
    return out


def toy_profile(detector: Detector, lo: float = -8.0, hi: float = 8.0, n: int = 161):
    """Detector score on an even 1D grid, as (x, score) rows."""
    x = np.linspace(lo, hi, n)
    return np.column_stack([x, score(detector, x[:, None])])


def run_toy(config: ExperimentConfig | None = None) -> dict[str, Path]:
    """The 1D reproduction: pipeline artifacts plus score profile and latent path."""
    config = toy_config() if config is None else config
    paths = run_pipeline(config)
    out = Path(config.run.out_dir)
    with stage("toy-diagnostics"):
        store = storage.load_store(paths["store"])
        det = storage.load_detector(paths["detector"])
        history = make_history(config, store)
        prof = toy_profile(det)
        _write_text(out / "profile.csv", "x,score\n" + "".join(f"{x!r},{s!r}\n" for x, s in prof.tolist()))
        rng = np.random.default_rng(config.seed_for("eval"))
        z1, z2 = rng.standard_normal((2, store.config.latent_dim))
        last = history.eligible[-1]
        path = latent_interpolation(store, last, det, z1, z2, 21)
        _write_text(out / "latent_path.csv", "t,score\n" + "".join(f"{t!r},{s!r}\n" for t, s in path))
    paths["profile"] = out / "profile.csv"
    paths["latent_path"] = out / "latent_path.csv"
    return paths


def checkpoint_frequency_ablation(
    base_config: ExperimentConfig,
    frequencies=(1, 5, 25, 50),
    dataset: DatasetHandle | None = None,
) -> list[dict]:
    """AUPRC of the full pipeline per saves-per-epoch value, same seed throughout.

    Only the save frequency changes; the GAN trajectory itself does not
    depend on it, so the runs differ only in which snapshots the history
    draws from.
    """
    base_out = Path(base_config.run.out_dir)
    with stage("data"):
        dataset = make_dataset(base_config) if dataset is None else dataset
    rows = []
    for f in frequencies:
        with stage("ablate-frequency"):
            cfg = dataclasses.replace(base_config, gan=dataclasses.replace(base_config.gan, saves_per_epoch=int(f)))
            cfg = cfg.with_out_dir(base_out / f"saves_{int(f)}")
        paths = run_pipeline(cfg, dataset)
        metrics = json.loads(paths["metrics"].read_text(encoding="utf-8"))
        rows.append({"saves_per_epoch": int(f), "auprc": metrics["auprc"], "coverage": metrics["coverage"]})
    base_out.mkdir(parents=True, exist_ok=True)
    write_json(base_out / "ablation.json", rows)
    return rows
