"""Command-line front end: ``hsic train|eval|predict|selftest|split|inspect``.

Exit codes: 0 success, 1 self-test failure, 2 configuration error, 3 data
error, 4 diverged training, 5 checkpoint/config mismatch. Settings resolve as
flags > config file > defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline
from .autodiff import save_tensors
from .config import ExperimentConfig
from .data import describe_header, load_ground_truth, save_split, stratified_split
from .errors import ConfigError, DataError, DivergedLoss, ManifestMismatch
from .metrics import render_class_map
from .prep import make_batches
from .train import evaluate, write_curves

EXIT_SELFTEST, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_MANIFEST = 1, 2, 3, 4, 5


def _load_config(args) -> ExperimentConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "epsilon": getattr(args, "epsilon", None),
        "epochs": getattr(args, "epochs", None),
        "out_dir": getattr(args, "out_dir", None),
    }
    if getattr(args, "deterministic", False):
        overrides["deterministic"] = True
    return ExperimentConfig.load(args.config, overrides)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _load_config(args)
    prep = pipeline.prepare(cfg)
    out = _out_dir(cfg)

    def progress(log):
        if not args.quiet:
            print(f"epoch {log.epoch:3d}  loss {log.train_loss:.4f}  acc {log.train_acc:.4f}  "
                  f"val_loss {log.val_loss:.4f}  val_acc {log.val_acc:.4f}  {log.seconds:.2f}s",
                  flush=True)

    try:
        result = pipeline.fit(cfg, prep, callback=progress)
    except DivergedLoss as exc:
        state = exc.state or {}
        if "params" in state:
            save_tensors(state["params"].arrays, out / "diverged.json",
                         extra={"epoch": state["epoch"], "batch": state["batch"]})
        raise
    write_curves(result.logs, out / "curves.csv")
    ckpt = pipeline.save_run(out, cfg, result, prep)
    cfg.save(out / "config.json")
    last = result.logs[-1]
    summary = {
        "epochs": len(result.logs),
        "final_train_loss": last.train_loss,
        "final_train_acc": last.train_acc,
        "final_val_loss": last.val_loss,
        "final_val_acc": last.val_acc,
        "train_seconds": round(result.seconds, 4),
        "parameters": result.params.count,
        "config_hash": cfg.fingerprint(),
        "checkpoint": str(ckpt),
    }
    (out / "train-summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"trained {len(result.logs)} epochs in {result.seconds:.4f}s -> {ckpt}")
    return 0


def _load_for_eval(args):
    cfg = _load_config(args)
    params, pca, manifest = pipeline.load_run(args.checkpoint, cfg)
    prep = pipeline.prepare(cfg, pca=pca)
    return cfg, params, prep, manifest


def cmd_eval(args) -> int:
    cfg, params, prep, _ = _load_for_eval(args)
    summary_path = Path(args.checkpoint).parent / "train-summary.json"
    train_seconds = None
    if summary_path.is_file():
        train_seconds = json.loads(summary_path.read_text(encoding="utf-8")).get("train_seconds")
    report, _ = pipeline.assess(cfg, params, prep, train_seconds)
    out = _out_dir(cfg)
    report.save(out / "report.json")
    print(f"OA {report.overall_accuracy:.6f}  AA {report.average_accuracy:.6f}  "
          f"kappa {report.kappa:.6f}  ECE {report.ece:.6f}  -> {out / 'report.json'}")
    return 0


def cmd_predict(args) -> int:
    cfg, params, prep, _ = _load_for_eval(args)
    gt = prep.gt
    if args.full_scene:
        rr, cc = np.mgrid[0:gt.rows, 0:gt.cols]
        coords = np.stack([rr.ravel(), cc.ravel()], axis=1)
    else:
        coords = np.argwhere(gt.labels > 0)
    batches = make_batches(prep.source, gt, prep.split, "test", cfg.patch_size, cfg.batch_size,
                           shuffle=False, coords=coords)
    result = evaluate(params, batches)
    out = _out_dir(cfg)
    render_class_map(result.predictions, gt, out / "map.pgm", out / "map.ppm")
    print(f"wrote {out / 'map.pgm'} ({len(result.predictions)} pixels, {result.seconds:.4f}s)")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import format_table, run_checks

    t0 = time.perf_counter()
    results = run_checks(corrupt=args.corrupt)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f}s")
    if failed:
        print("failed: " + "; ".join(failed), file=sys.stderr)
        return EXIT_SELFTEST
    return 0


def cmd_split(args) -> int:
    cfg = _load_config(args)
    gt = load_ground_truth(cfg.ground_truth_path)
    split = stratified_split(gt, cfg.ratios, cfg.seed)
    save_split(split, args.out)
    for c, (tr, va, te) in split.counts_by_class(gt).items():
        print(f"{c:3d} {gt.class_names[c - 1]:<24} {tr}/{va}/{te}")
    return 0


def cmd_inspect(args) -> int:
    print(json.dumps(describe_header(args.header), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsic", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write curves, checkpoint and manifest")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epsilon", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out-dir", dest="out_dir")
    t.add_argument("--deterministic", action="store_true")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in [
        ("eval", cmd_eval, "test-set OA/AA/kappa/ECE report"),
        ("predict", cmd_predict, "classification map"),
    ]:
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--config", required=True)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--seed", type=int)
        e.add_argument("--out-dir", dest="out_dir")
        e.add_argument("--deterministic", action="store_true")
        if name == "predict":
            e.add_argument("--full-scene", action="store_true")
        e.set_defaults(func=func)

    s = sub.add_parser("selftest", help="gradient, loss, metric and split checks")
    s.add_argument("--corrupt", metavar="OP", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_selftest)

    sp = sub.add_parser("split", help="export the stratified train/val/test assignment")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_split)

    i = sub.add_parser("inspect", help="print a cube or ground-truth header")
    i.add_argument("header")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"hsic: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"hsic: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergedLoss as exc:
        print(f"hsic: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ManifestMismatch as exc:
        print(f"hsic: checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_MANIFEST


if __name__ == "__main__":
    sys.exit(main())
