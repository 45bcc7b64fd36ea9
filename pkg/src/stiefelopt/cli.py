"""Command-line entry point.

Subcommands:
    train     one training run; writes loss.csv, loss.png, config.echo
              and weights.bin into the output directory
    compare   the four-scenario optimizer comparison; writes
              comparison.csv and comparison.png
    verify    the property suite; prints one PASS/FAIL line per check

Every run flag can also come from a flat ``key = value`` config file via
--config; command-line flags win.  STIEFELOPT_OUTPUT_DIR sets the default
output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .reporting import (
    render_comparison_figure,
    render_loss_figure,
    write_comparison_csv,
    write_config_echo,
    write_loss_csv,
)
from .training import (
    RunConfig,
    evaluate_model,
    load_dataset,
    load_eval_dataset,
    run_training,
)
from .weightstore import save_weights

OUTPUT_DIR_ENV = "STIEFELOPT_OUTPUT_DIR"

COMPARE_SCENARIOS = [
    ("adam", "adam", False),
    ("adam_stiefel", "adam", True),
    ("gradient_stiefel", "gradient", True),
    ("momentum_stiefel", "momentum", True),
]


def _parse_config_file(path: str) -> dict:
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            values[key] = raw
    return values


def _coerce(raw: str, template):
    if isinstance(template, bool):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    return raw


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Layer defaults < environment < config file < command line."""
    config = RunConfig()
    if os.environ.get(OUTPUT_DIR_ENV):
        config.output_dir = os.environ[OUTPUT_DIR_ENV]
    if args.config:
        file_values = _parse_config_file(args.config)
        for key, raw in file_values.items():
            if not hasattr(config, key):
                raise ValueError(f"unknown config key {key!r}")
            setattr(config, key, _coerce(raw, getattr(config, key)))
    for field in dataclasses.fields(RunConfig):
        value = getattr(args, field.name, None)
        if value is not None:
            setattr(config, field.name, value)
    config.validate()
    return config


def _add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    for field in dataclasses.fields(RunConfig):
        flag = "--" + field.name.replace("_", "-")
        if isinstance(field.default, bool):
            parser.add_argument(flag, action=argparse.BooleanOptionalAction,
                                default=None)
        elif isinstance(field.default, int):
            parser.add_argument(flag, type=int, default=None)
        elif isinstance(field.default, float):
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, type=str, default=None)


def cmd_train(args: argparse.Namespace) -> int:
    stage = "resolve-config"
    try:
        config = resolve_config(args)
        stage = "load-data"
        dataset = load_dataset(config)
        stage = "train"
        result = run_training(config, dataset)
        stage = "write-artifacts"
        os.makedirs(config.output_dir, exist_ok=True)
        write_loss_csv(os.path.join(config.output_dir, "loss.csv"), result.rows)
        write_config_echo(os.path.join(config.output_dir, "config.echo"),
                          config.as_dict())
        names = result.params.names()
        arrays = result.params.to_arrays()
        save_weights(os.path.join(config.output_dir, "weights.bin"),
                     list(zip(names, arrays)))
        render_loss_figure(os.path.join(config.output_dir, "loss.png"), result.rows,
                           title=f"{config.optimizer}"
                                 f"{' + stiefel' if config.constrain else ''}")
        if config.evaluate:
            stage = "evaluate"
            eval_loss, accuracy = evaluate_model(result.params, config,
                                                 load_eval_dataset(config))
            with open(os.path.join(config.output_dir, "eval.csv"), "w") as f:
                f.write("mean_eval_loss,accuracy\n")
                f.write(f"{eval_loss!r},{accuracy!r}\n")
            print(f"held-out: mean loss {eval_loss:.6f}, accuracy {accuracy:.4f}")
    except Exception as exc:
        print(f"stiefelopt train failed during {stage}: {exc}", file=sys.stderr)
        return 1
    final = result.rows[-1].mean_train_loss if result.rows else float("nan")
    print(f"trained {result.steps} steps; final mean loss {final:.6f}; "
          f"artifacts in {config.output_dir}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    stage = "resolve-config"
    try:
        base = resolve_config(args)
        stage = "load-data"
        dataset = load_dataset(base)
        labels, curves, updates = [], [], []
        for label, optimizer, constrain in COMPARE_SCENARIOS:
            stage = f"train-{label}"
            config = dataclasses.replace(base, optimizer=optimizer,
                                         constrain=constrain)
            result = run_training(config, dataset)
            labels.append(label)
            curves.append([row.mean_train_loss for row in result.rows])
            updates.append(result.update_seconds)
            print(f"{label}: final loss "
                  f"{result.rows[-1].mean_train_loss if result.rows else float('nan'):.6f}, "
                  f"update time {result.update_seconds:.2f}s")
        stage = "write-artifacts"
        os.makedirs(base.output_dir, exist_ok=True)
        write_comparison_csv(os.path.join(base.output_dir, "comparison.csv"),
                             labels, curves, updates)
        write_config_echo(os.path.join(base.output_dir, "config.echo"),
                          base.as_dict())
        render_comparison_figure(os.path.join(base.output_dir, "comparison.png"),
                                 labels, curves)
    except Exception as exc:
        print(f"stiefelopt compare failed during {stage}: {exc}", file=sys.stderr)
        return 1
    print(f"comparison artifacts in {base.output_dir}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    from .verify import CorruptionHooks, run_all

    hooks = CorruptionHooks(reskew=not args.disable_velocity_reskew,
                            section_scrub=not args.corrupt_sections)
    results = run_all(precision=args.precision, seed=args.seed, hooks=hooks)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failures += not r.passed
        line = f"{status} {r.name:34s} residual={r.residual:10.3e} tol={r.tolerance:9.3e}"
        if r.detail:
            line += f"  ({r.detail})"
        print(line)
    print(f"{len(results) - failures}/{len(results)} checks passed "
          f"({args.precision} precision)")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stiefelopt",
        description="optimizers on the Stiefel manifold with a toy attention model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training configuration")
    _add_run_arguments(train)
    train.set_defaults(func=cmd_train)

    compare = sub.add_parser("compare", help="run the four-scenario comparison")
    _add_run_arguments(compare)
    compare.set_defaults(func=cmd_compare)

    verify = sub.add_parser("verify", help="run the property suite")
    verify.add_argument("--precision", choices=["single", "double"],
                        default="double")
    verify.add_argument("--seed", type=int, default=0)
    # Corruption hooks for negative controls.
    verify.add_argument("--disable-velocity-reskew", action="store_true",
                        help=argparse.SUPPRESS)
    verify.add_argument("--corrupt-sections", action="store_true",
                        help=argparse.SUPPRESS)
    verify.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
