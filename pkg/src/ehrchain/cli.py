"""Command-line entry point for scenarios and benchmarks.

Every flag can also come from a config file of ``key = value`` lines
(``#`` comments allowed); keys match the long flag names with underscores,
e.g. ``seal_latency_ms = 250``. Explicit flags win over the file.

Exit status is 0 only when every in-run assertion held.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .errors import EhrChainError

MB = 1024 * 1024
DEFAULT_ENC_SIZES = [MB, 2 * MB, 4 * MB, 8 * MB, 16 * MB, 32 * MB, 64 * MB]


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def load_config_file(path: str) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise EhrChainError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    if not getattr(args, "config", None):
        return
    file_values = load_config_file(args.config)
    cli_keys = {a.lstrip("-").split("=", 1)[0].replace("-", "_") for a in argv if a.startswith("--")}
    for key, value in file_values.items():
        if not hasattr(args, key):
            raise EhrChainError(f"unknown config key {key!r}")
        if key in cli_keys:
            continue  # explicit flag wins
        current = getattr(args, key)
        if isinstance(current, bool):
            setattr(args, key, value.lower() in ("1", "true", "yes", "on"))
        elif isinstance(current, int):
            setattr(args, key, int(value))
        elif isinstance(current, float):
            setattr(args, key, float(value))
        elif isinstance(current, list):
            setattr(args, key, _int_list(value))
        else:
            setattr(args, key, value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ehrchain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--out", default=None, help="write the result to this path")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--config", default=None, help="key = value config file; flags override")

    p = sub.add_parser("scenario", help="run a full protocol scenario")
    common(p)
    p.add_argument("--hospitals", type=int, default=1)
    p.add_argument("--doctors", type=int, default=2)
    p.add_argument("--patients", type=int, default=1)
    p.add_argument("--size", type=int, default=1024, help="record size in bytes")
    p.add_argument("--seal-latency-ms", type=float, default=0.0)
    p.add_argument("--concurrent", type=int, default=1)
    p.add_argument("--tamper", action="store_true", help="inject ciphertext corruption (run must fail)")

    p = sub.add_parser("bench-enc", help="encrypt/decrypt timing vs record size")
    common(p)
    p.add_argument("--sizes", type=_int_list, default=DEFAULT_ENC_SIZES, help="comma-separated byte sizes, ascending")
    p.add_argument("--reps", type=int, default=3)

    p = sub.add_parser("bench-comm", help="communication bytes vs granted doctors")
    common(p)
    p.add_argument("--doctors", type=_int_list, default=[1, 2, 4, 8])

    p = sub.add_parser("bench-latency", help="consult latency vs concurrent patients")
    common(p)
    p.add_argument("--patients", type=_int_list, default=[1, 2, 5, 10])
    p.add_argument("--seal-latency-ms", type=float, default=0.0)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, argv)
        if args.command == "scenario":
            config = harness.ScenarioConfig(
                seed=args.seed,
                n_hospitals=args.hospitals,
                n_doctors=args.doctors,
                n_patients=args.patients,
                record_size_bytes=args.size,
                n_concurrent=args.concurrent,
                block_seal_latency_ms=args.seal_latency_ms,
                tamper=args.tamper,
                output_path=args.out,
            )
            report = harness.run_scenario(config)
            print(harness.emit(report, args.out, args.format), end="")
            print(f"scenario ok: {report.recoveries_ok}/{report.n_patients} recoveries, chain verified", file=sys.stderr)
        elif args.command == "bench-enc":
            rows = harness.bench_encryption(args.sizes, args.reps)
            print(harness.emit(rows, args.out, args.format), end="")
        elif args.command == "bench-comm":
            rows = harness.bench_communication(args.doctors, seed=args.seed)
            print(harness.emit(rows, args.out, args.format), end="")
        elif args.command == "bench-latency":
            rows = harness.bench_latency(args.patients, args.seal_latency_ms, seed=args.seed)
            print(harness.emit(rows, args.out, args.format), end="")
        return 0
    except EhrChainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
