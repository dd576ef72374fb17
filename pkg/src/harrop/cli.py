"""Command-line front end.

    harrop run FILE... --query "G." [flags]
    harrop repl FILE... [flags]
    harrop check FILE... --query "G." [flags]
    harrop compile FILE... --emit-bytecode [--query "G."]

Exit status: 0 answers found (or engines agree), 1 no answer, 2 error,
3 a limit was hit, 4 the engines disagree.
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from dataclasses import dataclass

from . import syntax as syn
from .compiler import CompileError, compile_program, format_listing
from .interpreter import DepthLimitExceeded, Interpreter, SolverConfig
from .machine import Machine, MachineError, StepLimitExceeded

EXIT_YES, EXIT_NO, EXIT_ERROR, EXIT_LIMIT, EXIT_DISAGREE = 0, 1, 2, 3, 4


class LimitHit(Exception):
    pass


class UsageError(Exception):
    pass


@dataclass
class SessionConfig:
    engine: str = "wam"
    all_solutions: bool = False
    max_solutions: int | None = None
    max_depth: int | None = None
    max_steps: int | None = None
    trace: bool = False
    show_tags: bool = False
    emit_bytecode: bool = False

    def __post_init__(self):
        if self.engine not in ("wam", "interp"):
            raise UsageError(f"unknown engine {self.engine!r}")
        for name in ("max_solutions", "max_depth", "max_steps"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise UsageError(f"{name.replace('_', '-')} must be positive")


# ---------------------------------------------------------------- loading


def load_program(paths):
    clauses = []
    for path in paths:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"{path}: {exc.strerror or exc}") from exc
        try:
            clauses.extend(syn.parse_program(text).clauses)
        except syn.HarropSyntaxError as exc:
            raise UsageError(f"{path}:{exc.line}:{exc.column}: {exc.message}") from exc
    return syn.Program(tuple(clauses))


def parse_query_text(text):
    try:
        return syn.parse_query(text)
    except syn.HarropSyntaxError as exc:
        raise UsageError(f"query:{exc.line}:{exc.column}: {exc.message}") from exc


# ---------------------------------------------------------------- engines


def answers(program, query, cfg, out=None, engine=None):
    """Lazily produce answers with the chosen engine; ``LimitHit`` on limits."""
    engine = engine or cfg.engine
    tracer = (lambda line: print(line, file=out)) if cfg.trace else None
    limit = cfg.max_solutions
    count = 0
    if engine == "interp":
        interp = Interpreter(program, SolverConfig(max_depth=cfg.max_depth), tracer=tracer)
        stream = iter(interp.solve(query))
    else:
        hooks = {"trace": tracer} if tracer else None
        stream = Machine(compile_program(program, query), hooks).solutions(cfg.max_steps)
    while limit is None or count < limit:
        try:
            a = next(stream)
        except StopIteration:
            return
        except DepthLimitExceeded as exc:
            raise LimitHit(str(exc)) from exc
        except StepLimitExceeded as exc:
            raise LimitHit(f"step limit {cfg.max_steps} reached") from exc
        count += 1
        yield a


def _print_answer(a, cfg, out):
    lines = a.lines(cfg.show_tags)
    print("\n".join(lines) if lines else "true", file=out)


def run_file(paths, query_text, cfg, out=None, err=None):
    out, err = out or sys.stdout, err or sys.stderr
    try:
        program = load_program(paths)
        query = parse_query_text(query_text)
        if cfg.emit_bytecode:
            print(format_listing(compile_program(program, query)), end="", file=out)
        found = 0
        try:
            for a in answers(program, query, cfg, out):
                if found:
                    print(";", file=out)
                _print_answer(a, cfg, out)
                found += 1
                if not cfg.all_solutions and cfg.max_solutions is None:
                    break
        except LimitHit as exc:
            if found:
                print("yes", file=out)
            print(f"limit: {exc}", file=err)
            return EXIT_LIMIT
        print("yes" if found else "no", file=out)
        return EXIT_YES if found else EXIT_NO
    except (UsageError, CompileError, MachineError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_ERROR


def cross_check(paths, query_text, cfg, out=None, err=None):
    out, err = out or sys.stdout, err or sys.stderr
    """Run both engines and compare answer multisets up to renaming."""
    try:
        program = load_program(paths)
        query = parse_query_text(query_text)
        results = {}
        quiet = SessionConfig(**{**cfg.__dict__, "trace": False, "all_solutions": True})
        for engine in ("interp", "wam"):
            try:
                results[engine] = [a.key(cfg.show_tags) for a in answers(program, query, quiet, engine=engine)]
            except LimitHit as exc:
                print(f"INCONCLUSIVE ({engine}: {exc})", file=out)
                return EXIT_LIMIT
    except (UsageError, CompileError, MachineError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_ERROR
    left, right = Counter(results["interp"]), Counter(results["wam"])
    if left == right:
        print(f"AGREE ({sum(left.values())} answers)", file=out)
        return EXIT_YES
    print("DISAGREE", file=out)
    only_i = sorted((left - right).elements(), key=lambda k: (len(k), k))
    only_w = sorted((right - left).elements(), key=lambda k: (len(k), k))
    if only_i:
        print(f"interp only: {only_i[0] or 'true'}", file=out)
    if only_w:
        print(f"wam only: {only_w[0] or 'true'}", file=out)
    return EXIT_DISAGREE


def compile_file(paths, query_text, cfg, out=None, err=None):
    out, err = out or sys.stdout, err or sys.stderr
    try:
        program = load_program(paths)
        query = parse_query_text(query_text) if query_text else None
        print(format_listing(compile_program(program, query)), end="", file=out)
        return EXIT_YES
    except (UsageError, CompileError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_ERROR


# ---------------------------------------------------------------- repl


def repl(paths, cfg, inp=None, out=None, err=None):
    inp, out, err = inp or sys.stdin, out or sys.stdout, err or sys.stderr
    try:
        program = load_program(paths)
    except UsageError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_ERROR
    lines = iter(inp)
    prompt = "?- "
    while True:
        print(prompt, end="", file=out, flush=True)
        line = next(lines, None)
        if line is None:
            print(file=out)
            return EXIT_YES
        line = line.strip()
        if not line:
            continue
        if line.startswith(":"):
            cmd, _, arg = line[1:].partition(" ")
            if cmd == "quit":
                return EXIT_YES
            if cmd == "engine" and arg.strip() in ("wam", "interp"):
                cfg.engine = arg.strip()
                print(f"engine {cfg.engine}", file=out)
            elif cmd == "trace":
                cfg.trace = not cfg.trace
                print(f"trace {'on' if cfg.trace else 'off'}", file=out)
            else:
                print(f"error: unknown directive {line!r}", file=err)
            continue
        try:
            query = parse_query_text(line)
            stream = answers(program, query, SessionConfig(**{**cfg.__dict__, "all_solutions": True}), out)
            found = False
            for a in stream:
                found = True
                _print_answer(a, cfg, out)
                print("more? ", end="", file=out, flush=True)
                reply = next(lines, "").strip()
                if reply != ";":
                    print("yes", file=out)
                    break
            else:
                print("no", file=out)
        except LimitHit as exc:
            print(f"limit: {exc}", file=err)
        except (UsageError, CompileError, MachineError) as exc:
            print(f"error: {exc}", file=err)


# ---------------------------------------------------------------- argument parsing


def _positive(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="harrop", description="Hereditary Harrop formula interpreter and abstract machine")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--engine", choices=("wam", "interp"), default="wam")
    common.add_argument("--all", dest="all_solutions", action="store_true", help="enumerate every answer")
    common.add_argument("--max-solutions", type=_positive)
    common.add_argument("--max-depth", type=_positive, help="interpreter expansion depth limit")
    common.add_argument("--max-steps", type=_positive, help="machine instruction limit")
    common.add_argument("--trace", action="store_true")
    common.add_argument("--show-tags", action="store_true")
    common.add_argument("--emit-bytecode", action="store_true")
    for name, needs_query in (("run", True), ("check", True), ("repl", False), ("compile", False)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("files", nargs="+" if name != "repl" else "*", metavar="FILE")
        if name != "repl":
            p.add_argument("--query", required=needs_query)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_YES
    cfg = SessionConfig(args.engine, args.all_solutions, args.max_solutions, args.max_depth,
                        args.max_steps, args.trace, args.show_tags, args.emit_bytecode)
    if args.command == "run":
        return run_file(args.files, args.query, cfg)
    if args.command == "check":
        return cross_check(args.files, args.query, cfg)
    if args.command == "compile":
        return compile_file(args.files, args.query, cfg)
    return repl(args.files, cfg)


if __name__ == "__main__":
    sys.exit(main())
