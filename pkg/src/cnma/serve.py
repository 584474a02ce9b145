"""Serve a builtin blackbox over the line protocol on stdin/stdout.

Usage:
    python -m cnma.serve <builtin> [json-params]

Reads requests of the form ``EVAL v1 <n> <x1> ... <xn>`` and answers with
``OK <m> <y1> ... <ym>`` or ``FAIL <message>``.  One response per request,
flushed immediately.  Exits on EOF.  This is both a working example of the
external-blackbox contract and the far end of the round-trip tests.
"""
from __future__ import annotations

import json
import sys

from .benchmarks import UnknownBuiltinError, get_builtin


def respond_to(line: str, fn, arity: int, params: dict) -> str:
    parts = line.split()
    if len(parts) < 3 or parts[0] != "EVAL" or parts[1] != "v1":
        return "FAIL malformed request"
    try:
        n = int(parts[2])
    except ValueError:
        return "FAIL malformed count"
    values = parts[3:]
    if n != arity or len(values) != n:
        return f"FAIL expected {arity} inputs"
    try:
        x = [float(tok) for tok in values]
    except ValueError:
        return "FAIL malformed number"
    try:
        y = fn(x, **params)
    except Exception as exc:  # noqa: BLE001 - report, do not crash the server
        return f"FAIL {exc}"
    return "OK " + str(len(y)) + " " + " ".join(repr(float(v)) for v in y)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv or len(argv) > 2:
        print("usage: python -m cnma.serve <builtin> [json-params]", file=sys.stderr)
        return 2
    try:
        builtin = get_builtin(argv[0])
    except UnknownBuiltinError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    params = {}
    if len(argv) == 2:
        try:
            params = json.loads(argv[1])
        except json.JSONDecodeError as exc:
            print(f"bad params: {exc}", file=sys.stderr)
            return 2
        if not isinstance(params, dict):
            print("params must be a JSON object", file=sys.stderr)
            return 2
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        sys.stdout.write(
            respond_to(line, builtin.fn, builtin.in_arity, params) + "\n"
        )
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
