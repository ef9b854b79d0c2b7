"""Command-line front end.

    fibervm run <file> [flags]    run a program (a corpus name also works)
    fibervm trace <file> [flags]  same as run --trace
    fibervm examples              list the shipped corpus
    fibervm serve [--host --port] start the HTTP service

Exit codes: 0 on a value, 1 on a fatal error, 2 on usage or parse errors,
3 when the step budget runs out.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from . import corpus as corpus_pkg
from .diagnostics import backtrace, continuation_backtrace, format_backtrace, format_trace
from .machine import RunResult, run_source
from .runtime import RuntimeMode
from .syntax import ParseError
from .values import Kont, value_repr

EXIT_DONE = 0
EXIT_FATAL = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3


def _onoff(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("file", help="program path or corpus example name")
    sub.add_argument("--mode", choices=["oneshot", "multishot"], default="oneshot")
    sub.add_argument("--opt-exn", type=_onoff, default=True, metavar="on|off")
    sub.add_argument("--trace", action="store_true")
    sub.add_argument("--metrics", action="store_true")
    sub.add_argument("--metrics-json", action="store_true")
    sub.add_argument("--max-steps", type=int, default=10_000_000)
    sub.add_argument("--stack-init", type=int, default=16)
    sub.add_argument("--red-zone", type=int, default=16)
    sub.add_argument("--cache-cap", type=int, default=64)
    sub.add_argument("--backtrace-on-error", type=_onoff, default=True, metavar="on|off")


def _resolve_source(spec: str) -> str:
    try:
        with open(spec, "r", encoding="utf-8") as fh:
            return fh.read()
    except FileNotFoundError:
        pass
    name = spec[:-4] if spec.endswith(".fib") else spec
    try:
        path = corpus_pkg.corpus_path(name)
    except KeyError:
        raise FileNotFoundError(spec) from None
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _print_leaks(result: RunResult, out) -> None:
    if not result.leaks:
        return
    print(f"leaked continuations: {len(result.leaks)}", file=out)
    for leak in result.leaks:
        print(f"  continuation {leak.kid} captured at:", file=out)
        entries = continuation_backtrace(Kont(leak.fibers, leak.kid))
        for line in format_backtrace(entries):
            print(f"    {line}", file=out)


def _emit(result: RunResult, args, out) -> int:
    if args.trace and result.trace is not None:
        for line in format_trace(result.trace):
            print(line, file=out)

    if result.status == "done":
        code = EXIT_DONE
        print(f"=> {value_repr(result.value)}", file=out)
    elif result.status == "fatal":
        code = EXIT_FATAL
        print(f"fatal: {result.fatal.describe()}", file=out)
        if args.backtrace_on_error:
            for line in format_backtrace(backtrace(result.fatal.config)):
                print(line, file=out)
    else:
        code = EXIT_BUDGET
        print(f"error: step budget exceeded after {result.steps} steps", file=out)

    for line in result.output:
        print(line, file=out)

    if args.metrics:
        for key, value in result.metrics.items():
            print(f"{key}={value}", file=out)
    if args.metrics_json:
        print(json.dumps(result.metrics, sort_keys=True), file=out)

    _print_leaks(result, out)
    return code


def _cmd_run(args, out) -> int:
    try:
        source = _resolve_source(args.file)
    except FileNotFoundError:
        print(f"error: no such file or example: {args.file}", file=sys.stderr)
        return EXIT_USAGE
    if args.max_steps <= 0:
        print("error: --max-steps must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        result = run_source(
            source,
            mode=RuntimeMode(args.mode),
            opt_exn=args.opt_exn,
            trace=args.trace,
            max_steps=args.max_steps,
            stack_init=args.stack_init,
            red_zone=args.red_zone,
            cache_cap=args.cache_cap,
        )
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return _emit(result, args, out)


def _cmd_examples(out) -> int:
    for entry in corpus_pkg.corpus():
        print(f"{entry.name:20s} {entry.description}", file=out)
    return EXIT_DONE


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_DONE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fibervm", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    run_p = subs.add_parser("run", help="run a program")
    _add_run_flags(run_p)

    trace_p = subs.add_parser("trace", help="run a program with rule tracing")
    _add_run_flags(trace_p)

    subs.add_parser("examples", help="list the shipped example programs")

    serve_p = subs.add_parser("serve", help="start the HTTP service")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8000)

    return parser


def main(argv: Optional[list[str]] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_DONE
    if args.command == "examples":
        return _cmd_examples(out)
    if args.command == "serve":
        return _cmd_serve(args)
    if args.command == "trace":
        args.trace = True
    return _cmd_run(args, out)


if __name__ == "__main__":
    sys.exit(main())
