"""``todi`` command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .errors import InvalidParameterError, TodiError
from .gradients import GRADCHECK_SPECS, gradcheck
from .harness import CONFIG_KEYS, load_config, run_config, sweep, trace_rows
from .reports import (
    COMPARE_COLUMNS,
    compare_tables,
    csv_text,
    read_sweep_csv,
    sweep_csv,
    trace_csv,
    write_manifest,
    write_text,
)
from .toy import TOY_KINDS, dominance_violations, gradient_profile, make_toy, profile_to_csv

SUBCOMMANDS = ("toy", "gradcheck", "train", "sweep", "compare")
DEFAULT_SWEEP_SEEDS = "10,20,30,40,50"
SEED_ENV = "TODI_SEED"

CONFIG_HELP = (
    "config file: flat key=value lines ('#' comments); accepted keys: "
    + ", ".join(CONFIG_KEYS)
    + ". Seed precedence: --seed > $TODI_SEED > config."
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="todi",
        description="Token-wise distillation divergences: toy analysis, gradient checks, training and sweeps.",
        epilog=CONFIG_HELP,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)

    p = sub.add_parser("toy", help="per-index FKL/RKL gradient magnitudes on a toy pair")
    p.add_argument("--kind", choices=TOY_KINDS, required=True)
    p.add_argument("--vocab", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (stdout when omitted)")

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference logit gradients for every kind")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--T", type=int, default=8)
    p.add_argument("--V", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON report path (stdout when omitted)")

    p = sub.add_parser("train", help="train one student", epilog=CONFIG_HELP)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sweep", help="train every *.cfg in a directory over several seeds", epilog=CONFIG_HELP)
    p.add_argument("--configs", required=True, help="directory of *.cfg files")
    p.add_argument("--seeds", default=DEFAULT_SWEEP_SEEDS, help="comma-separated replicate seeds")
    p.add_argument("--out", required=True, help="comparison table CSV path")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("compare", help="join two sweep tables and report the winner per metric")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    return parser


def _emit(text: str, out) -> None:
    if out:
        write_text(out, text)
    else:
        sys.stdout.write(text)


def _resolve_seed(flag, file_seed: int) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise InvalidParameterError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return file_seed


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def cmd_toy(args) -> int:
    s = make_toy(args.kind, args.vocab, args.seed)
    rows = gradient_profile(s)
    _emit(profile_to_csv(rows), args.out)
    if args.out:
        resolved = f"kind={args.kind}\nseed={args.seed}\nvocab={args.vocab}\n"
        write_manifest("toy", resolved, args.seed, [args.out])
    bad = dominance_violations(rows)
    print(f"toy {args.kind} V={args.vocab} seed={args.seed}: {len(bad)} dominance violations", file=sys.stderr)
    return 0 if not bad else 2


def cmd_gradcheck(args) -> int:
    reports = gradcheck(GRADCHECK_SPECS, args.instances, args.T, args.V, args.seed)
    text = json.dumps(reports, indent=2) + "\n"
    _emit(text, args.out)
    if args.out:
        resolved = f"T={args.T}\nV={args.V}\ninstances={args.instances}\nseed={args.seed}\n"
        write_manifest("gradcheck", resolved, args.seed, [args.out])
    return 0 if all(r["pass"] for r in reports) else 2


def cmd_train(args) -> int:
    config = load_config(_read(args.config))
    config = config.replace(seed=_resolve_seed(args.seed, config.seed))
    run = run_config(config)
    write_text(args.out, trace_csv(trace_rows(run)))
    write_manifest("train", config.to_text(), config.seed, [args.out])
    return 0


def cmd_sweep(args) -> int:
    folder = Path(args.configs)
    if not folder.is_dir():
        raise UsageError(f"{folder} is not a directory")
    paths = sorted(folder.glob("*.cfg"))
    if not paths:
        raise UsageError(f"no *.cfg files in {folder}")
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    configs = [load_config(_read(p)) for p in paths]
    names = [p.stem for p in paths]
    rows = sweep(configs, seeds, names=names, jobs=args.jobs)
    write_text(args.out, sweep_csv(rows))
    resolved = "".join(f"[{n}]\n{c.to_text()}" for n, c in zip(names, configs))
    resolved += f"seeds={','.join(map(str, seeds))}\n"
    write_manifest("sweep", resolved, None, [args.out])
    return 0


def cmd_compare(args) -> int:
    try:
        a = read_sweep_csv(_read(args.a))
        b = read_sweep_csv(_read(args.b))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = csv_text(COMPARE_COLUMNS, compare_tables(a, b))
    _emit(text, args.out)
    if args.out:
        write_manifest("compare", f"a={args.a}\nb={args.b}\n", None, [args.out])
    return 0


HANDLERS = {
    "toy": cmd_toy,
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def dispatch(argv) -> int:
    parser = build_parser()
    argv = list(argv)
    if not argv:
        sys.stderr.write(parser.format_help())
        return 1
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand; choose one of {', '.join(SUBCOMMANDS)}")
        return HANDLERS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except InvalidParameterError as exc:
        print(f"todi: error: {exc}", file=sys.stderr)
        return 1
    except (TodiError, OSError, ArithmeticError) as exc:
        print(f"todi: runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
