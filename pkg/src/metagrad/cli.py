"""``metagrad`` command-line interface.

Subcommands map one-to-one onto the runners in :mod:`metagrad.experiments`;
this module only parses flags, merges them with an optional flat config file
(defaults < file < flags), and prints human-readable summaries.  Exit status
is 0 only when the command completed and — for ``certify`` — every
certificate passed; configuration mistakes exit 2 with a one-line diagnosis.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, merge_options
from .experiments import (
    run_certify, run_depth_sweep, run_dump_tasks, run_finetune, run_ood_sweep,
    run_train_sinusoid,
)

__all__ = ["main", "build_parser", "DEFAULTS"]

# Per-command knob defaults.  These tables are the single source of truth:
# flags, config-file validation, and runner parameters are all generated from
# them, so a knob cannot exist in one layer and be silently dropped by another.
DEFAULTS = {
    "certify": {
        "bins": 5, "eps": 1e-6, "alpha": 1e-3, "selector": "sym_half",
        "inject_fault": False, "report": "certificates.jsonl",
    },
    "train-sinusoid": {
        "iters": 10_000, "batch": 25, "k_shot": 5, "train_k_query": 10,
        "inner_alpha": 1e-3, "inner_steps": 5, "outer_lr": 1e-3,
        "hidden": (40, 40), "log_every": 100,
        "checkpoint": "checkpoint.txt", "curve": "train_curve.csv",
    },
    "finetune": {
        "checkpoint": None, "max_steps": 100, "alpha": 1e-3,
        "scratch_lr": 0.03, "k_shot": 5, "csv": "finetune.csv",
    },
    "ood-sweep": {
        "checkpoint": None, "axis": "amplitude", "grid": (5.0, 6.0, 8.0, 10.0),
        "steps": 5, "alpha": 1e-3, "csv": "ood_sweep.csv",
    },
    "depth-sweep": {
        "depths": (1, 2, 3, 4, 5), "reps": 3, "iters": 2000, "batch": 10,
        "oracle_iters": 10_000, "oracle_lr": 3e-3, "oracle_batch": 25,
        "oracle_target": 0.03, "k_support": 40, "k_query": 40, "bias_dim": 10,
        "inner_alpha": 1e-3, "inner_steps": 1, "outer_lr": 1e-3,
        "csv": "depth_sweep.csv",
    },
    "dump-tasks": {
        "family": "sinusoid", "k_shot": 5, "k_query": 100, "jsonl": "tasks.jsonl",
    },
}

_HELP = {
    "certify": "run every numerical certificate on the layered construction",
    "train-sinusoid": "meta-train an MLP on sinusoid tasks; writes checkpoint + curve",
    "finetune": "compare meta-learned vs. random init under per-task fine-tuning",
    "ood-sweep": "score adaptation on increasingly out-of-distribution task bands",
    "depth-sweep": "meta-learner vs. conditioned oracle across network depths",
    "dump-tasks": "write a reproducible batch of sampled tasks as JSON lines",
}


def _comma_ints(s: str):
    return tuple(int(x) for x in s.split(","))


def _comma_floats(s: str):
    return tuple(float(x) for x in s.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metagrad",
        description="gradient-based meta-learning: certificates and experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, metavar="PATH",
                        help="flat key = value settings file")
    common.add_argument("--seed", type=int, metavar="N",
                        help="root seed for every random stream (default 0)")
    common.add_argument("--out", type=Path, metavar="DIR",
                        help="output directory (default .)")
    common.add_argument("--trials", type=int, metavar="N",
                        help="trial / task count where applicable (default 100)")

    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="COMMAND")
    for name, defaults in DEFAULTS.items():
        sp = sub.add_parser(name, parents=[common], help=_HELP[name])
        for key, dv in defaults.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(dv, bool):
                sp.add_argument(flag, action="store_true", default=None)
            elif isinstance(dv, tuple):
                conv = _comma_ints if all(isinstance(x, int) for x in dv) else _comma_floats
                sp.add_argument(flag, type=conv, default=None, metavar="A,B,...")
            elif isinstance(dv, (int, float)):
                sp.add_argument(flag, type=type(dv), default=None,
                                metavar=type(dv).__name__.upper())
            else:
                sp.add_argument(flag, type=str, default=None)
    return parser


def _resolve(args) -> RunConfig:
    defaults = DEFAULTS[args.subcommand]
    file_values = load_config(args.config) if args.config else {}
    source = str(args.config) if args.config else "<config>"

    core_defaults = {"seed": 0, "out": ".", "trials": 100}
    file_core = {k: file_values.pop(k) for k in list(core_defaults) if k in file_values}
    core_flags = {"seed": args.seed, "trials": args.trials,
                  "out": str(args.out) if args.out is not None else None}
    core = merge_options(args.subcommand, core_defaults, file_core, core_flags, source)

    flag_values = {key: getattr(args, key) for key in defaults}
    params = merge_options(args.subcommand, defaults, file_values, flag_values, source)
    for key, value in params.items():
        if value is None:
            raise ConfigError(
                f"{args.subcommand}: field {key!r} is required "
                f"(--{key.replace('_', '-')} or a config entry)")
    return RunConfig(args.subcommand, core["seed"], Path(core["out"]),
                     core["trials"], params)


# -- per-command reporting ---------------------------------------------------------

def _cmd_certify(rc: RunConfig) -> int:
    certs, path = run_certify(rc)
    for c in certs:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.claim}")
        if not c.passed:
            detail = "; ".join(f"{k}={v:.6g}" for k, v in c.measured.items())
            print(f"      {c.description.splitlines()[0]}  [{detail}]")
    n_pass = sum(c.passed for c in certs)
    print(f"{n_pass}/{len(certs)} certificates passed -> {path}")
    return 0 if n_pass == len(certs) else 1


def _cmd_train(rc: RunConfig) -> int:
    p = rc.params
    print(f"meta-training {p['iters']} iterations "
          f"(batch {p['batch']}, {p['inner_steps']} inner steps)...", flush=True)
    _, _, curve = run_train_sinusoid(rc)
    it, loss, secs = curve[-1]
    print(f"iteration {it}: meta_loss={loss:.6f} ({secs:.0f}s)")
    print(f"wrote {rc.path(p['checkpoint'])} and {rc.path(p['curve'])}")
    return 0


def _cmd_finetune(rc: RunConfig) -> int:
    out = run_finetune(rc)
    for method, (sup, qry) in out.items():
        print(f"{method}: step {sup.shape[1] - 1} "
              f"support_mse={sup[:, -1].mean():.5f} query_mse={qry[:, -1].mean():.5f}")
    print(f"wrote {rc.path(rc.params['csv'])}")
    return 0


def _cmd_ood(rc: RunConfig) -> int:
    for rec in run_ood_sweep(rc):
        ci = f" +/- {rec.ci:.4f}" if rec.ci is not None else ""
        print(f"{rec.label}: query_mse={rec.mean:.4f}{ci}")
    print(f"wrote {rc.path(rc.params['csv'])}")
    return 0


def _cmd_depth(rc: RunConfig) -> int:
    run_depth_sweep(rc)
    print(f"wrote {rc.path(rc.params['csv'])}")
    return 0


def _cmd_dump(rc: RunConfig) -> int:
    tasks, path = run_dump_tasks(rc)
    print(f"wrote {len(tasks)} {rc.params['family']} tasks -> {path}")
    return 0


_COMMANDS = {
    "certify": _cmd_certify,
    "train-sinusoid": _cmd_train,
    "finetune": _cmd_finetune,
    "ood-sweep": _cmd_ood,
    "depth-sweep": _cmd_depth,
    "dump-tasks": _cmd_dump,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = _resolve(args)
        return _COMMANDS[rc.subcommand](rc)
    except ValueError as e:  # ConfigError and bad-parameter diagnoses
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
