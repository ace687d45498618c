"""Command-line entry point: ``train``, ``eval``, ``repro`` and ``collapse-demo``.

Exit codes: 0 success, 2 bad input (config, checkpoint, case name),
3 stable-mode collapse.

Output files (all under ``--out``):

``manifest.json``
    ``{"command", "config", "seed", "mode", "out", "versions"}``; written first.
``metrics.jsonl``
    One JSON object per training step with the keys of ``StepMetrics`` in
    declaration order.  Non-finite floats are written as ``NaN``/``Infinity``.
``checkpoints/step_<N>.params`` and ``final.params``
    Parameter files, see :mod:`stablereinforce.policy`.
``curve.jsonl`` / ``collapse.jsonl``
    ``eval`` and ``collapse-demo`` records, also printed to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, parse_set_args, resolve_config
from .env import load_tasks
from .evaluation import evaluate_scaling, greedy_accuracy
from .experiments import DEMO_OVERRIDES, collapse_demo, stress_check
from .policy import PolicyParams
from .repro import CASES
from .trainer import CollapseError, default_tasks, run_training

log = logging.getLogger("stablereinforce")


def _overrides(args) -> dict:
    out = parse_set_args(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        out["mode"] = args.mode
    return out


def write_manifest(out: Path, command: str, config) -> None:
    manifest = {
        "command": command,
        "config": config.to_dict(),
        "seed": config.seed,
        "mode": config.mode,
        "out": str(out),
        "versions": {
            "stablereinforce": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    try:
        config = resolve_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "train", config)
    ckpt_dir = out / "checkpoints"

    def save_checkpoint(step, params):
        ckpt_dir.mkdir(exist_ok=True)
        params.save(ckpt_dir / f"step_{step:06d}.params")

    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        def on_step(m):
            fh.write(json.dumps(m.to_record()) + "\n")
            fh.flush()

        try:
            res = run_training(config, on_step=on_step, on_checkpoint=save_checkpoint)
        except CollapseError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
    res.params.save(out / "final.params")
    last = res.history[-1] if res.history else None
    summary = {"steps": len(res.history), "collapsed": res.collapsed,
               "collapse_step": res.collapse_step,
               "eval_accuracy": last.eval_accuracy if last else None}
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    try:
        params = PolicyParams.load(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot load checkpoint {args.checkpoint}: {exc}", file=sys.stderr)
        return 2
    try:
        config = resolve_config(args.config, _overrides(args))
        ks = [int(k) for k in args.ks.split(",")]
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.tasks:
        try:
            tasks = load_tasks(args.tasks)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot load tasks {args.tasks}: {exc}", file=sys.stderr)
            return 2
    else:
        tasks = default_tasks(replace(config, pool_size=1))[2]
    if tasks and tasks[0].dim != params.dim:
        print(f"error: task dimension {tasks[0].dim} != policy dimension {params.dim}",
              file=sys.stderr)
        return 2
    greedy = greedy_accuracy(params, tasks, config.max_len)
    curve = evaluate_scaling(params, tasks, ks, np.random.default_rng(config.seed),
                             config.max_len, seed=config.seed)
    lines = [json.dumps({"greedy_acc": greedy, "n": len(tasks)})]
    lines += [json.dumps(r) for r in curve.records()]
    for line in lines:
        print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "curve.jsonl").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return 0


def cmd_repro(args) -> int:
    if args.case not in CASES:
        print(f"error: unknown case {args.case!r}; available: {', '.join(CASES)}",
              file=sys.stderr)
        return 2
    result = CASES[args.case]()
    for line in result.lines():
        print(line)
    return 0 if result.ok else 1


def cmd_collapse_demo(args) -> int:
    overrides = {**DEMO_OVERRIDES, **_overrides(args)}
    overrides.setdefault("total_steps", args.steps)
    try:
        base = resolve_config(args.config, overrides)
        seeds = [int(s) for s in args.seeds.split(",")]
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, "collapse-demo", base)
    records = []
    outcomes = collapse_demo(seeds, base)
    for o in outcomes:
        records.append({"kind": "run", **o.to_record()})
    stress = stress_check(base)
    records.append({"kind": "stress", "seed": base.seed, **{f"max_abs_token_loss_{m}": v
                                                         for m, v in stress.items()}})
    stable = [o for o in outcomes if o.mode == "stable"]
    base_runs = [o for o in outcomes if o.mode != "stable"]
    ok = all(not o.collapsed and o.overflow_events == 0 and o.all_losses_finite
             and o.max_abs_token_loss <= 3 * base.delta_max for o in stable)
    records.append({
        "kind": "summary",
        "stable_collapses": sum(o.collapsed for o in stable),
        "baseline_collapses": sum(o.collapsed for o in base_runs),
        "runs_per_mode": len(seeds),
        "stress_baseline_ge_1e4": stress["reinforce_pp"] >= 1e4,
        "stable_ok": ok,
    })
    lines = [json.dumps(r) for r in records]
    for line in lines:
        print(line)
    if out is not None:
        (out / "collapse.jsonl").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return 0 if ok else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stablereinforce",
                                     description="StableReinforce toy reward-model RL harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", help="key = value config file or run manifest (.json)")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=["stable", "reinforce_pp", "wo_preclip", "wo_filter"])
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                       help="override a config key (repeatable)")

    p = sub.add_parser("train", help="run training")
    common(p, out_required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy accuracy and Voting@K / Any@K")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tasks", help="JSON-lines task file (default: held-out set)")
    p.add_argument("--ks", default="1,5,15")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("repro", help="check a worked example")
    p.add_argument("case")
    p.set_defaults(func=cmd_repro)

    p = sub.add_parser("collapse-demo", help="paired stable vs reinforce_pp runs")
    common(p)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--steps", type=int, default=500)
    p.set_defaults(func=cmd_collapse_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
