"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O
error. Errors are also reported on stderr as one JSON line
``{"error": <category>, "message": <text>}``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .config import Mode, load_config
from .errors import ConfigurationError, DomainError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

_FORCED_MODE = {
    "cut": Mode.CUT,
    "phase-diagram": Mode.PHASE_DIAGRAM,
    "lyapunov": Mode.LYAPUNOV,
    "compare": Mode.COMPARE,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dickesim",
                                     description="Dicke-model dynamics: MF, TWA and exact solvers")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run the mode given in the config"),
                        ("cut", "sweep a preset cut"),
                        ("phase-diagram", "mean-field phase diagram on a ratio grid"),
                        ("lyapunov", "maximal Lyapunov exponent"),
                        ("compare", "exact oracle versus TWA report"),
                        ("validate-config", "validate a config and print the resolved form")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="YAML run configuration")
        if name == "validate-config":
            continue
        p.add_argument("--seed", type=int, help="64-bit master seed (overrides config)")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--format", choices=("csv", "json"), help="results table format")
    return parser


def _fail(category: str, code: int, message: str) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate-config":
            from .config import dump_config
            print(dump_config(cfg), end="")
            return EXIT_OK
        updates = {}
        if args.command in _FORCED_MODE:
            updates["mode"] = _FORCED_MODE[args.command]
        if updates or args.seed is not None:
            data = cfg.model_dump()
            data.update(updates)
            if args.seed is not None:
                if not 0 <= args.seed < 2 ** 64:
                    raise ConfigurationError("--seed must be an unsigned 64-bit integer")
                data["sim"]["seed"] = args.seed
            from .config import parse_config
            cfg = parse_config(_jsonable(data))
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        from .harness import run
        workers = args.threads or os.cpu_count() or 1
        paths = run(cfg, args.out, args.format, workers)
        print(json.dumps({k: str(v) for k, v in paths.items()}))
        return EXIT_OK
    except (ConfigurationError, DomainError) as exc:
        return _fail("config", EXIT_CONFIG, str(exc))
    except NumericalError as exc:
        return _fail("numeric", EXIT_NUMERIC, str(exc))
    except OSError as exc:
        return _fail("io", EXIT_IO, str(exc))


def _jsonable(data):
    return json.loads(json.dumps(data, default=lambda o: getattr(o, "value", str(o))))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
