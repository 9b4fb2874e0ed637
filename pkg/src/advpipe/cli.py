"""Command-line entry point.

Subcommands:
  train     train the recognizer and save its weights
  attack    run the attack benchmark and write report CSVs + images
  selftest  run the built-in oracle/property checks

Exit codes: 0 success, 1 bad config or failed gate/selftest, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import sys

from . import harness, nn, selftest
from .attacks import AttackConfig
from .errors import ConfigInvalid, GateFailed, IOFailure
from .harness import ExperimentConfig


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="advpipe")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the recognizer")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=harness.DEFAULT_EPOCHS)
    t.add_argument("--lr", type=float, default=harness.DEFAULT_LR)
    t.add_argument("--out", default="params.kosn")

    a = sub.add_parser("attack", help="run the attack benchmark")
    a.add_argument("--method", choices=["baseline", "eot", "kos", "hsj", "all"], default=None)
    a.add_argument("--trials", type=int, default=None)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--epsilon", type=float, default=None)
    a.add_argument("--step", type=float, default=None)
    a.add_argument("--k", type=int, default=None)
    a.add_argument("--max-iters", type=int, default=None)
    a.add_argument("--max-restarts", type=int, default=None)
    a.add_argument("--eot-crops", type=int, default=None)
    a.add_argument("--eot-margin", type=int, default=None)
    a.add_argument("--hsj-queries", type=int, default=None)
    a.add_argument("--out", default=None)
    a.add_argument("--params", default=None)
    a.add_argument("--config", default=None, help="flat key=value file with the same keys")

    sub.add_parser("selftest", help="run oracle/property checks")
    return p


def load_config_file(path) -> dict:
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigInvalid(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    return values


_INT_KEYS = {"trials", "seed", "k", "max_iters", "max_restarts",
             "eot_crops", "eot_margin", "hsj_queries"}
_FLOAT_KEYS = {"epsilon", "step"}


def _effective(args, filecfg: dict, key: str, default):
    cli_value = getattr(args, key)
    if cli_value is not None:
        return cli_value
    if key in filecfg:
        raw = filecfg[key]
        try:
            if key in _INT_KEYS:
                return int(raw)
            if key in _FLOAT_KEYS:
                return float(raw)
        except ValueError:
            raise ConfigInvalid(f"config key {key}={raw!r} is not a number") from None
        return raw
    return default


def _cmd_train(args) -> int:
    losses = []
    print(f"training recognizer (seed={args.seed}, epochs={args.epochs}, lr={args.lr})")
    params = harness.train_recognizer(seed=args.seed, epochs=args.epochs,
                                      lr=args.lr, loss_history=losses)
    acc = harness.check_gate(params)
    nn.save_params(params, args.out)
    print(f"held-out accuracy {acc:.4f}; final epoch loss {losses[-1]:.4f}")
    print(f"saved params to {args.out}")
    return 0


def _cmd_attack(args) -> int:
    filecfg = load_config_file(args.config) if args.config else {}
    base = AttackConfig()
    method = _effective(args, filecfg, "method", "all")
    methods = harness.METHOD_ORDER if method == "all" else (method,)
    attack_cfg = AttackConfig(
        epsilon=_effective(args, filecfg, "epsilon", base.epsilon),
        step_size=_effective(args, filecfg, "step", base.step_size),
        k=_effective(args, filecfg, "k", base.k),
        max_iterations=_effective(args, filecfg, "max_iters", base.max_iterations),
        max_restarts=_effective(args, filecfg, "max_restarts", base.max_restarts),
        eot_crops=_effective(args, filecfg, "eot_crops", base.eot_crops),
        eot_margin=_effective(args, filecfg, "eot_margin", base.eot_margin),
        hsj_queries=_effective(args, filecfg, "hsj_queries", base.hsj_queries),
    )
    cfg = ExperimentConfig(
        n_trials=_effective(args, filecfg, "trials", 20),
        root_seed=_effective(args, filecfg, "seed", 0),
        attack=attack_cfg,
        methods=methods,
        out_dir=_effective(args, filecfg, "out", "out"),
        params_path=_effective(args, filecfg, "params", None),
    )
    result = harness.run_experiment(cfg)
    print(f"\nwrote {result.trials_csv} and {result.summary_csv}")
    if result.skipped:
        print(f"skipped trials (clean pipeline misread): {result.skipped}")
    harness.print_summaries(result.summaries)
    return 0


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "attack":
            return _cmd_attack(args)
        if args.command == "selftest":
            return 0 if selftest.run_all() else 1
    except (ConfigInvalid, GateFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
