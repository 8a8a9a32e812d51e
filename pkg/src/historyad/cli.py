"""Command-line entry point: ``historyad <command> [--config F] [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 other failure, 2 usage, 3 config, 4 file format,
5 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline, storage
from .config import ExperimentConfig, dump_config, parse_config
from .errors import ConfigError, FormatError, NumericError, PipelineError

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_FORMAT = 4
EXIT_NUMERIC = 5

log = logging.getLogger("historyad")


def _load_config(args, toy_default: bool = False) -> ExperimentConfig:
    if args.config is not None:
        cfg = parse_config(args.config)
    elif toy_default:
        cfg = pipeline.toy_config()
    else:
        raise ConfigError("--config", "required for this command")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = cfg.with_out_dir(args.out)
    return cfg


def _out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg):
    with pipeline.stage("data"):
        return pipeline.make_dataset(cfg)


def _load(kind: str, path: Path):
    with pipeline.stage(f"load-{kind}"):
        return storage.load_store(path) if kind == "store" else storage.load_detector(path)


def cmd_train_gan(args):
    cfg = _load_config(args)
    out = _out(cfg)
    pipeline.stage_train_gan(cfg, _dataset(cfg), out)
    print(out / pipeline.STORE_FILE)


def cmd_build_history(args):
    cfg = _load_config(args)
    out = _out(cfg)
    store = _load("store", out / pipeline.STORE_FILE)
    _, summary = pipeline.stage_history(cfg, store, _dataset(cfg), out)
    print(f"eligible checkpoints: {summary['eligible_checkpoints']}")
    print(f"coverage at radius {summary['coverage_radius']}: {summary['coverage']:.4f}")


def cmd_train_detector(args):
    cfg = _load_config(args)
    out = _out(cfg)
    store = _load("store", out / pipeline.STORE_FILE)
    with pipeline.stage("build-history"):
        history = pipeline.make_history(cfg, store)
    pipeline.stage_train_detector(cfg, history, _dataset(cfg), out)
    print(out / pipeline.DETECTOR_FILE)


def cmd_score(args):
    cfg = _load_config(args)
    out = _out(cfg)
    det = _load("detector", out / pipeline.DETECTOR_FILE)
    pipeline.stage_score(det, _dataset(cfg), out)
    print(out / pipeline.SCORES_FILE)


def cmd_eval(args):
    cfg = _load_config(args)
    out = _out(cfg)
    det = _load("detector", out / pipeline.DETECTOR_FILE)
    dataset = _dataset(cfg)
    with pipeline.stage("eval"):
        scores, _ = pipeline.read_scores_csv(out / pipeline.SCORES_FILE)
    metrics = pipeline.stage_eval(cfg, det, dataset, scores, out)
    print(json.dumps({"auprc": metrics["auprc"]}))


def cmd_run(args):
    cfg = _load_config(args)
    paths = pipeline.run_pipeline(cfg)
    for p in paths.values():
        print(p)


def cmd_toy(args):
    cfg = _load_config(args, toy_default=True)
    if args.config is None and args.out is None:
        cfg = cfg.with_out_dir("out/toy")
    paths = pipeline.run_toy(cfg)
    metrics = json.loads(paths["metrics"].read_text(encoding="utf-8"))
    print(f"AUPRC {metrics['auprc']:.4f}  mean normal score {metrics['mean_score_normal']:+.3f}  "
          f"coverage {metrics['coverage']:.4f}")


def cmd_ablate(args):
    cfg = _load_config(args, toy_default=True)
    if args.config is None and args.out is None:
        cfg = cfg.with_out_dir("out/ablation")
    rows = pipeline.checkpoint_frequency_ablation(cfg, args.frequencies)
    for r in rows:
        print(f"saves/epoch {r['saves_per_epoch']:>3}  AUPRC {r['auprc']:.4f}")


def cmd_show_config(args):
    print(dump_config(_load_config(args, toy_default=True)), end="")


COMMANDS = {
    "train-gan": (cmd_train_gan, "train the WGAN-GP and write the checkpoint store"),
    "build-history": (cmd_build_history, "history diagnostics from an existing store"),
    "train-detector": (cmd_train_detector, "train the detector against the stored history"),
    "score": (cmd_score, "score the test split with a trained detector"),
    "eval": (cmd_eval, "AUPRC, histogram and noise sweep from written scores"),
    "run": (cmd_run, "all stages in order"),
    "toy": (cmd_toy, "1D toy reproduction (built-in config unless --config)"),
    "ablate-frequency": (cmd_ablate, "AUPRC against checkpoint saves per epoch"),
    "show-config": (cmd_show_config, "print the effective config as TOML"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="historyad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="experiment TOML file")
        p.add_argument("--seed", type=int, help="overrides run.seed")
        p.add_argument("--out", type=Path, help="overrides run.out_dir")
        if name == "ablate-frequency":
            p.add_argument("--frequencies", type=int, nargs="+", default=[1, 5, 25, 50])
        p.set_defaults(func=func)
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        exc = exc.cause
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, FormatError):
        return EXIT_FORMAT
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_OTHER


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        print(f"historyad: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
