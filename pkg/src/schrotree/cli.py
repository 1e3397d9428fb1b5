"""``schrotree`` command line: one subcommand per experiment, plus ``all``.

Parameters resolve as built-in defaults < TOML config < command-line flags.
Every run writes its CSV tables and a ``manifest.json`` holding the resolved
config, the library version, the calibration constants and the check results.

Exit codes: 0 ok, 2 verification failure (strict mode), 3 config error,
4 budget exceeded.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import os
import sys
import time
from pathlib import Path

import tomli

from . import __version__
from .counterexamples import CLUSTER_TOL, COMPACT_THRESHOLD, DEFAULT_EVEN_DEGREE
from .errors import BudgetExceeded, ConfigError, SchroTreeError, TaintedError
from .experiments import DEFAULTS, HELP, RUNNERS, Check
from .io import write_json
from .propagation import DENSE_BUDGET
from .spectral.green import CONDITION_LIMIT, GREEN_DENOMINATOR_FLOOR
from .tree_core import DEFAULT_VERTEX_BUDGET

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BUDGET = 0, 2, 3, 4
OUTPUT_ENV = "SCHROTREE_OUTPUT"
GLOBAL_KEYS = {"strict": False, "plot": False, "output": None, "seed": None}

CONSTANTS = {
    "dense_budget": DENSE_BUDGET,
    "vertex_budget": DEFAULT_VERTEX_BUDGET,
    "green_denominator_floor": GREEN_DENOMINATOR_FLOOR,
    "deformed_condition_limit": CONDITION_LIMIT,
    "compact_threshold": COMPACT_THRESHOLD,
    "eigenvalue_cluster_tol": CLUSTER_TOL,
    "even_degree_default": DEFAULT_EVEN_DEGREE,
    "taint_alarm": 1e-8,
}


# ---------------------------------------------------------------- config


def _coerce(path: str, default, value):
    """Convert ``value`` to the type of ``default``; ``path`` names the key in errors."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("1", "true", "yes", "0", "false", "no"):
            return value.lower() in ("1", "true", "yes")
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        try:
            out = int(value) if not isinstance(value, float) or value.is_integer() else None
        except (TypeError, ValueError):
            out = None
        if out is None or isinstance(value, bool):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return out
    if isinstance(default, float):
        try:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{path}: expected a non-empty list, got {value!r}")
        proto = default[0]
        return [_coerce(f"{path}[{i}]", proto, v) for i, v in enumerate(value)]
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _merge(path: str, base: dict, updates: dict) -> dict:
    out = dict(base)
    for key, value in updates.items():
        if key not in base:
            raise ConfigError(f"{path}.{key}: unknown parameter")
        out[key] = _coerce(f"{path}.{key}", base[key], value)
    return out


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for key, value in data.items():
        if key not in GLOBAL_KEYS and key not in DEFAULTS:
            raise ConfigError(f"{key}: unknown config section")
        if key in DEFAULTS and not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a table")
    return data


def resolve(command: str, file_cfg: dict, flags: dict) -> dict:
    """Full parameter set for ``command`` (a dict of dicts for ``all``)."""
    names = list(DEFAULTS) if command == "all" else [command]
    seed = flags.get("seed", file_cfg.get("seed")) if command == "all" else None
    out = {}
    for name in names:
        params = _merge(name, copy.deepcopy(DEFAULTS[name]), file_cfg.get(name, {}))
        if command != "all":
            params = _merge(name, params, {k: v for k, v in flags.items() if v is not None})
        elif seed is not None and "seed" in params:
            params["seed"] = _coerce("seed", 0, seed)
        out[name] = params
    return out


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _flag_type(default):
    if isinstance(default, (bool, list)):
        return str
    return type(default)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="schrotree", description="Schrödinger evolutions on trees: experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def common(p):
        p.add_argument("--config", help="TOML file; one table per subcommand")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV}/<command> or ./runs/<command>)")
        p.add_argument("--strict", action="store_true", default=None, help="exit 2 if any check fails")
        p.add_argument("--plot", action="store_true", default=None, help="also write SVG plots")

    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        common(p)
        for key, default in defaults.items():
            shown = ",".join(map(str, default)) if isinstance(default, list) else default
            p.add_argument(f"--{key}", dest=f"param_{key}", type=_flag_type(default), default=None,
                           help=f"default {shown}")
    p = sub.add_parser("all", help="run every experiment", description="run every experiment")
    common(p)
    p.add_argument("--seed", dest="param_seed", type=int, default=None, help="override every seed")
    return parser


# ---------------------------------------------------------------- run


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(name: str, params: dict, out: Path, plot: bool) -> list:
    out.mkdir(parents=True, exist_ok=True)
    try:
        return RUNNERS[name](params, out, plot)
    except TaintedError as exc:
        return [Check(f"{name}: untainted", False, float("nan"), str(exc))]


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k[len("param_"):]: v for k, v in vars(args).items() if k.startswith("param_")}
    try:
        file_cfg = load_config(args.config) if args.config else {}
        resolved = resolve(args.command, file_cfg, flags)
        strict = args.strict if args.strict is not None else _coerce("strict", False, file_cfg.get("strict", False))
        plot = args.plot if args.plot is not None else _coerce("plot", False, file_cfg.get("plot", False))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    root = Path(args.out or file_cfg.get("output") or Path(os.environ.get(OUTPUT_ENV, "runs")) / args.command)

    started = time.perf_counter()
    results = {}
    try:
        for name, params in resolved.items():
            out = root / name if args.command == "all" else root
            checks = run_experiment(name, params, out, plot)
            results[name] = checks
            for c in checks:
                print(f"[{name}] {c.line()}")
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SchroTreeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL

    passed = all(c.passed for checks in results.values() for c in checks)
    csvs = sorted(root.rglob("*.csv"))
    manifest = {
        "command": args.command,
        "version": __version__,
        "config": resolved,
        "strict": strict,
        "plot": plot,
        "constants": CONSTANTS,
        "checks": {name: [{"name": c.name, "passed": c.passed, "value": c.value, "limit": c.limit}
                          for c in checks] for name, checks in results.items()},
        "passed": passed,
        "artifacts": {str(p.relative_to(root)): _digest(p) for p in csvs},
        "runtime_seconds": round(time.perf_counter() - started, 3),
    }
    write_json(root / "manifest.json", manifest)
    print(f"{'all checks passed' if passed else 'some checks FAILED'}; artifacts in {root}")
    if strict and not passed:
        return EXIT_FAIL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
