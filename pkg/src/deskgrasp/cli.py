"""Command-line entry points: generate / train / eval / ablate / gradcheck.

Exit codes: 0 ok, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from . import dataio, pipeline
from .errors import ConfigError, TrainingDiverged

log = logging.getLogger("deskgrasp")


def _load_config(args) -> cfgmod.RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "variant", None) is not None:
        overrides["variant"] = args.variant
    if getattr(args, "k", None) is not None:
        overrides["k_list"] = tuple(int(v) for v in args.k.split(","))
    if args.config:
        return cfgmod.load(args.config, overrides)
    from dataclasses import replace
    return replace(cfgmod.RunConfig(), **overrides).validate()


def _out_dir(args, default: str) -> str:
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _write(path: str, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_generate(args) -> int:
    from .synthdata import build_dataset
    cfg = _load_config(args)
    out = _out_dir(args, cfg.dataset_dir)
    dataset = build_dataset(cfg.num_shapes, cfg.views_per_shape,
                            cfg.grasps_per_shape, cfg.seed, cfg.cloud_points,
                            cfg.test_shapes,
                            pipeline.gripper_from_config(cfg))
    dataio.write_dataset(dataset, out)
    _write(os.path.join(out, "config.txt"), cfgmod.serialize(cfg))
    n_train = len(dataset.split("train"))
    n_test = len(dataset.split("test"))
    n_pos = sum(len(s.grasps.positives()) for s in dataset.samples)
    n_neg = sum(len(s.grasps.negatives()) for s in dataset.samples)
    manifest = os.path.join(out, dataio.MANIFEST_NAME)
    print(f"wrote {len(dataset.samples)} samples ({n_train} train, {n_test} test) "
          f"to {out}")
    print(f"grasp annotations: {n_pos} positive, {n_neg} negative")
    print(f"manifest sha256: {dataio.file_sha256(manifest)}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "run")
    dataset = dataio.read_dataset(cfg.dataset_dir)
    result = pipeline.train(cfg, dataset)
    chash = cfgmod.config_hash(cfg)
    trace_text = "\n".join(dataio.trace_line(*row) for row in result.trace)
    _write(os.path.join(out, "trace.txt"), trace_text + ("\n" if trace_text else ""))
    dataio.save_checkpoint(os.path.join(out, "checkpoint.txt"),
                           result.model.parameters(), result.velocities,
                           chash, result.steps)
    _write(os.path.join(out, "config.txt"), cfgmod.serialize(cfg))
    if result.trace:
        last = result.trace[-1]
        print(f"trained {result.steps} steps (variant {cfg.variant}); "
              f"final losses: sample={last[1]} regr={last[2]:.6g} "
              f"class={last[3]:.6g} t={last[4]}")
    else:
        print(f"checkpoint written at initialization (0 steps, variant {cfg.variant})")
    print(f"checkpoint: {os.path.join(out, 'checkpoint.txt')}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "run")
    dataset = dataio.read_dataset(cfg.dataset_dir)
    model = pipeline.build_model(cfg)
    checkpoint = dataio.load_checkpoint(args.checkpoint)
    model.load_values(checkpoint.params)
    report = pipeline.evaluate_model(model, cfg, dataset, args.split)
    _write(os.path.join(out, "metrics.txt"),
           dataio.report_table(report, f"rule-based metrics ({args.split} split, "
                                       f"variant {cfg.variant})"))
    _write(os.path.join(out, "metrics.records"), dataio.report_records(report))
    _write(os.path.join(out, "curve.csv"), dataio.curve_csv(report))
    _write(os.path.join(out, "curve.svg"), dataio.curve_svg(report))
    print(dataio.report_table(report, f"rule-based metrics ({args.split} split)"))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, "run")
    dataset = dataio.read_dataset(cfg.dataset_dir)
    rows = pipeline.ablate(cfg, dataset)
    lines = ["ablation: variant x metric x k", ""]
    header = (f"{'variant':>10} {'metric':>10} "
              + " ".join(f"@{k}%".rjust(9) for k in cfg.k_list)
              + f" {'L_cc':>10} {'t':>10}")
    lines.append(header)
    lines.append("-" * len(header))
    for row in rows:
        for metric in ("success", "coverage", "oracle"):
            vals = getattr(row.report, metric)
            cells = " ".join(f"{vals[k]:9.4f}" for k in cfg.k_list)
            lcc = "n/a" if row.final_lcc is None else f"{row.final_lcc:.6f}"
            t = "n/a" if row.final_t is None else f"{row.final_t:.6f}"
            lines.append(f"{row.variant:>10} {metric:>10} {cells} "
                         f"{lcc:>10} {t:>10}")
    table = "\n".join(lines) + "\n"
    _write(os.path.join(out, "ablation.txt"), table)
    print(table)
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradcheck
    seeds = range(args.seeds)
    failed = False
    for result in gradcheck.run_all(seeds):
        status = "OK" if result.ok else "FAIL"
        print(f"{result.name:32s} worst={result.worst:.3e} "
              f"tol={result.tolerance:.0e} [{status}]")
        failed |= not result.ok
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deskgrasp",
        description="6-DOF parallel-jaw grasp proposal on procedural desk scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant=True):
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        if variant:
            p.add_argument("--variant",
                           choices=["full", "no-proj", "fps", "no-sample"],
                           help="override the model variant")

    p = sub.add_parser("generate", help="write a procedural dataset")
    common(p, variant=False)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--k", help="comma-separated k percentages")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare all four variants")
    common(p, variant=False)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="run finite-difference suites")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
