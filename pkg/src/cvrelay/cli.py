"""Command-line front end.

Exit codes: 0 success, 2 unphysical environment, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .environment import BELL_CONVENTIONS, UnphysicalEnvironmentError
from .scan import (
    FORMATS,
    ConfigError,
    ScanConfig,
    env_check,
    eval_point,
    scan_noise,
    scan_plane,
    to_json,
    write_result,
)

EXIT_OK = 0
EXIT_UNPHYSICAL = 2
EXIT_CONFIG = 3

# config-file key -> (ScanConfig field, parser)
_FLOAT_KEYS = {
    "tau": "tau", "omega": "omega", "g": "g", "gprime": "g_prime", "n": "n",
    "c": "c", "cprime": "c_prime", "mu": "mu", "mu-qkd": "mu_qkd", "xi": "xi",
    "gain": "gain",
}
_OTHER_KEYS = {"grid": "grid", "range": "range", "bell": "bell", "out": "out",
               "format": "format", "jobs": "jobs"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parse_range(text: str) -> tuple[float, float]:
    parts = text.replace(",", " ").replace(":", " ").split()
    if len(parts) != 2:
        raise ConfigError(f"range needs two numbers, got {text!r}")
    return float(parts[0]), float(parts[1])


def read_config_file(path: str) -> dict:
    """Parse a flat ``key = value`` file into ScanConfig keyword arguments."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("_", "-")
        try:
            if key in _FLOAT_KEYS:
                out[_FLOAT_KEYS[key]] = float(val)
            elif key in ("grid", "jobs"):
                out[key] = int(val)
            elif key == "range":
                out["range"] = _parse_range(val)
            elif key in _OTHER_KEYS:
                out[_OTHER_KEYS[key]] = val
            else:
                raise ConfigError(f"{path}:{num}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}:{num}: bad value for {key}: {val!r}") from exc
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    env = common.add_argument_group("environment")
    env.add_argument("--tau", type=float, help="link transmissivity in (0, 1)")
    env.add_argument("--omega", type=float, help="thermal noise variance (>= 1)")
    env.add_argument("--g", type=float, help="q-correlation of the environment")
    env.add_argument("--gprime", type=float, dest="g_prime", help="p-correlation")
    env.add_argument("--n", type=float, help="additive noise variance (additive model)")
    env.add_argument("--c", type=float, help="additive q-correlation in [-1, 1]")
    env.add_argument("--cprime", type=float, dest="c_prime", help="additive p-correlation")
    proto = common.add_argument_group("protocols")
    proto.add_argument("--mu", type=float, help="EPR variance for the entanglement protocols")
    proto.add_argument("--mu-qkd", type=float, dest="mu_qkd",
                       help="modulation variance + 1 for practical QKD (default: --mu)")
    proto.add_argument("--xi", type=float, help="reconciliation efficiency in [0, 1]")
    proto.add_argument("--gain", type=float, help="teleportation feed-forward gain")
    proto.add_argument("--bell", choices=BELL_CONVENTIONS, help="Bell detection convention")
    run = common.add_argument_group("output")
    run.add_argument("--grid", type=int, help="points per axis (default 201)")
    run.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"),
                     help="g range for scan-plane, n range for scan-noise")
    run.add_argument("--out", help="output path (default: stdout)")
    run.add_argument("--format", choices=FORMATS, help="output format")
    run.add_argument("--config", help="flat 'key = value' file; flags override it")
    run.add_argument("--jobs", type=int, help="worker processes (env RELAY_JOBS)")

    parser = _Parser(prog="cvrelay", description="Continuous-variable relay in a correlated "
                     "Gaussian environment: entanglement structure and protocol rates.")
    sub = parser.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    sub.add_parser("eval", parents=[common], help="evaluate one parameter point")
    sub.add_parser("scan-plane", parents=[common], help="sweep the (g, g') plane")
    sub.add_parser("scan-noise", parents=[common], help="sweep the additive noise n")
    sub.add_parser("env-check", parents=[common], help="classify an environment")
    return parser


def config_from_args(args: argparse.Namespace) -> ScanConfig:
    values = read_config_file(args.config) if args.config else {}
    for name in ("tau", "omega", "g", "g_prime", "n", "c", "c_prime", "mu", "mu_qkd",
                 "xi", "gain", "grid", "bell", "out", "format", "jobs"):
        val = getattr(args, name)
        if val is not None:
            values[name] = val
    if args.range is not None:
        values["range"] = tuple(args.range)
    if "jobs" not in values and os.environ.get("RELAY_JOBS"):
        try:
            values["jobs"] = int(os.environ["RELAY_JOBS"])
        except ValueError as exc:
            raise ConfigError("RELAY_JOBS must be an integer") from exc
    if "format" not in values and args.mode != "eval" and values.get("out", "").endswith(".csv"):
        values["format"] = "csv"
    return replace(ScanConfig(), mode=args.mode, **values).validate()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        if cfg.mode == "eval":
            _emit(to_json(eval_point(cfg)), cfg.out)
        elif cfg.mode == "env-check":
            report = env_check(cfg)
            _emit(to_json(report), cfg.out)
            if not report["physical"]:
                print(f"cvrelay: unphysical environment: {report['violation']}", file=sys.stderr)
                return EXIT_UNPHYSICAL
        else:
            result = scan_plane(cfg) if cfg.mode == "scan-plane" else scan_noise(cfg)
            text = write_result(result, cfg.format, cfg.out)
            if text is not None:
                sys.stdout.write(text)
    except UnphysicalEnvironmentError as exc:
        print(f"cvrelay: {exc}", file=sys.stderr)
        return EXIT_UNPHYSICAL
    except ConfigError as exc:
        print(f"cvrelay: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cvrelay: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
