"""Command line entry point: ``hganlab {train,eval,sample,compare,defend,gradcheck}``.

Exit codes: 0 success, 1 failed check or unexpected error, 2 configuration
error, 3 training aborted on a non-finite loss, 4 incompatible checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import math
import os
import sys
import time

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, serialize_config
from .data import DatasetConfig
from .defense import AttackConfig, defense_sweep, sweep_to_csv
from .gradcheck import run_gradchecks
from .metrics import evaluate, fit_eval_classifier, reports_to_csv
from .models import ModeClassifier
from .tensor import ContractError
from .training import TrainingAborted, metrics_to_csv, train

__all__ = ["main", "build_parser", "COMPARE_HEADER", "pgm_bytes", "samples_csv"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT, EXIT_CHECKPOINT = 0, 1, 2, 3, 4
COMPARE_HEADER = ["variant", "metric", "median", "min", "max", "n_seeds"]
_COMPARE_METRICS = ["kl_divergence", "chi_square", "modes_covered", "mode_score", "frechet_distance"]


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, steps=args.steps)
    return cfg


def _run_dir(base: str, variant: str, seed: int) -> str:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = os.path.join(base, f"{variant}-{seed}-{stamp}")
    candidate, k = path, 1
    while True:
        try:
            os.makedirs(candidate)
            return candidate
        except FileExistsError:
            candidate = f"{path}-{k}"
            k += 1


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def samples_csv(samples: np.ndarray, d: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(d)])
    for row in samples:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def pgm_bytes(samples: np.ndarray, side: int) -> bytes:
    """Binary PGM tiling ``n`` square images of ``side`` pixels on a ceil(sqrt n) grid."""
    n = len(samples)
    cells = math.ceil(math.sqrt(n)) if n else 0
    canvas = np.zeros((cells * side, cells * side), dtype=np.uint8)
    for i, img in enumerate(samples):
        r, c = divmod(i, cells)
        pix = np.clip(np.asarray(img, dtype=np.float64).reshape(side, side), 0.0, 1.0)
        canvas[r * side : (r + 1) * side, c * side : (c + 1) * side] = np.round(pix * 255).astype(np.uint8)
    return f"P5\n{canvas.shape[1]} {canvas.shape[0]}\n255\n".encode("ascii") + canvas.tobytes()


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = _load(args)
    tc = cfg.train
    run = _run_dir(args.out, tc.variant, tc.seed)
    _write(os.path.join(run, "config.txt"), serialize_config(cfg))
    data = cfg.dataset.sample(tc.n_train, tc.seed)
    est = tc.estimator().initialize(data.samples.shape[1], cfg.dataset.is_binary)
    try:
        est.partial_fit(data.samples)
    except TrainingAborted as exc:
        _write(os.path.join(run, "metrics.csv"), metrics_to_csv(est.metrics_))
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    _write(os.path.join(run, "metrics.csv"), metrics_to_csv(est.metrics_))
    save_checkpoint(os.path.join(run, "model.hgck"), est, tc)
    print(run)
    return EXIT_OK


def _checkpoint_and_config(args):
    est, tc = load_checkpoint(args.checkpoint)
    cfg = load_config(args.config) if args.config else ExperimentConfig(tc.dataset if tc else DatasetConfig())
    if cfg.dataset.spec().dim != est.n_features_in_:
        raise CheckpointError(
            f"checkpoint generates {est.n_features_in_}-dim samples, dataset has {cfg.dataset.spec().dim}"
        )
    seed = args.seed if args.seed is not None else (tc.seed if tc else 0)
    return est, cfg, seed


def cmd_eval(args) -> int:
    est, cfg, seed = _checkpoint_and_config(args)
    ev = cfg.evaluation
    clf = fit_eval_classifier(cfg.dataset, seed, ev.classifier_samples, ev.classifier_epochs)
    report = evaluate(est, cfg.dataset, ev.n_samples, seed, ev.min_count, clf)
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out, exist_ok=True)
    text = reports_to_csv([report])
    _write(os.path.join(out, "eval.csv"), text)
    print(text, end="")
    return EXIT_OK


def cmd_sample(args) -> int:
    est, cfg, seed = _checkpoint_and_config(args)
    samples = est.sample(args.n, random_state=seed)
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out, exist_ok=True)
    if cfg.dataset.is_binary:
        path = os.path.join(out, "samples.pgm")
        with open(path, "wb") as fh:
            fh.write(pgm_bytes(samples, cfg.dataset.spec().canvas_size))
    else:
        path = os.path.join(out, "samples.csv")
        _write(path, samples_csv(samples, est.n_features_in_))
    print(path)
    return EXIT_OK


def _split(text, cast):
    return tuple(cast(s) for s in text.split(",") if s.strip()) if text else None


def compare_rows(reports) -> list:
    rows = []
    for variant in dict.fromkeys(r.variant for r in reports):
        group = [r for r in reports if r.variant == variant]
        for metric in _COMPARE_METRICS:
            vals = np.array([getattr(r, metric) for r in group], dtype=np.float64)
            rows.append([variant, metric, float(np.median(vals)), float(vals.min()), float(vals.max()), len(group)])
    return rows


def compare_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_HEADER)
    for r in rows:
        w.writerow(r[:2] + [repr(v) for v in r[2:5]] + [r[5]])
    return buf.getvalue()


def cmd_compare(args) -> int:
    cfg = _load(args)
    ev = cfg.evaluation
    variants = _split(args.variants, str) or ev.variants
    seeds = _split(args.seeds, int) or ev.seeds
    reports = []
    for seed in seeds:
        clf = fit_eval_classifier(cfg.dataset, seed, ev.classifier_samples, ev.classifier_epochs)
        for variant in variants:
            tc = dataclasses.replace(cfg.train, variant=variant, seed=seed)
            est = train(tc)
            reports.append(evaluate(est, cfg.dataset, ev.n_samples, seed, ev.min_count, clf))
            print(f"{variant} seed={seed} kl={reports[-1].kl_divergence:.4f} covered={reports[-1].modes_covered}", file=sys.stderr)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "eval.csv"), reports_to_csv(reports))
    text = compare_csv(compare_rows(reports))
    _write(os.path.join(args.out, "compare.csv"), text)
    print(text, end="")
    return EXIT_OK


def cmd_defend(args) -> int:
    cfg = _load(args)
    df = cfg.defense
    if args.checkpoint:
        est, _ = load_checkpoint(args.checkpoint)
    else:
        est = train(cfg.train)
    seed = cfg.train.seed
    data = cfg.dataset.sample(df.classifier_samples, seed, stream="classifier-data")
    clf = ModeClassifier(n_classes=cfg.dataset.n_modes, epochs=df.classifier_epochs, random_state=seed)
    clf.fit(data.samples, data.mode_labels)
    test = cfg.dataset.sample(df.n_test, seed, stream="defense-test")
    attack = AttackConfig(df.attack, df.epsilon, df.pgd_steps, df.pgd_step_size)
    rows = defense_sweep(clf, est, test.samples, test.mode_labels, df.L_values, df.R_values, attack, df.seeds, df.learning_rate)
    os.makedirs(args.out, exist_ok=True)
    text = sweep_to_csv(rows)
    _write(os.path.join(args.out, "sweep.csv"), text)
    print(text, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradchecks(args.states, args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.max_error:.3e}  {r.name}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hganlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="runs"):
        p.add_argument("--config", help="experiment config file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", default=out_default, help="output directory")
        return p

    p = common(sub.add_parser("train", help="train one model"))
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint"), out_default=None)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("sample", help="dump unfiltered generator samples"), out_default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-n", "--n", type=int, default=64)
    p.set_defaults(func=cmd_sample)

    p = common(sub.add_parser("compare", help="train and evaluate variants over seeds"), out_default="compare")
    p.add_argument("--variants", help="comma-separated, e.g. hgan,gan")
    p.add_argument("--seeds", help="comma-separated, e.g. 0,1,2")
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.set_defaults(func=cmd_compare)

    p = common(sub.add_parser("defend", help="attack a classifier and sweep the projection defense"), out_default="defense")
    p.add_argument("--checkpoint", help="generator checkpoint; trains one from the config when absent")
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and loss")
    p.add_argument("--states", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except CheckpointError as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
