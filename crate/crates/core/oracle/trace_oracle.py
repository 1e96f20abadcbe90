#!/usr/bin/env python3
"""Run a Python test script under line tracing.

Writes a JSON report with the executed corpus lines, the outcome, the
captured output (plus a traceback on failure) and, per corpus file, the raw
numbers of its non-blank lines.
"""
import argparse
import ast
import builtins
import contextlib
import io
import json
import os
import runpy
import signal
import sys
import traceback

HERE = os.path.realpath(__file__)


class OracleTimeout(BaseException):
    pass


def corpus_files(corpus):
    out = {}
    for root, dirs, names in os.walk(corpus):
        dirs.sort()
        for n in sorted(names):
            if n.endswith(".py"):
                p = os.path.realpath(os.path.join(root, n))
                out[p] = os.path.relpath(p, corpus).replace(os.sep, "/")
    return out


def nonblank_lines(path):
    with open(path, encoding="utf-8") as f:
        return [i + 1 for i, l in enumerate(f.read().splitlines()) if l.strip()]


def def_lines(path):
    """First line of every def/class header, decorators included."""
    with open(path, encoding="utf-8") as f:
        try:
            tree = ast.parse(f.read())
        except SyntaxError:
            return set()
    lines = set()
    for node in ast.walk(tree):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            lines.add(node.lineno)
            lines.update(d.lineno for d in node.decorator_list)
    return lines


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--entry", required=True)
    ap.add_argument("--corpus", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--timeout", type=float, default=10.0)
    ap.add_argument("--path", action="append", default=[], help="extra import directory")
    ap.add_argument("--inject", help="script whose public names become builtins")
    ap.add_argument("--call", help="function to call after the entry script ran")
    args = ap.parse_args()

    corpus = os.path.realpath(args.corpus)
    files = corpus_files(corpus)
    defs = {rel: def_lines(p) for p, rel in files.items()}
    executed = set()
    real = {}

    def rel_of(code):
        fn = code.co_filename
        if fn not in real:
            real[fn] = None if fn.startswith("<") else files.get(os.path.realpath(fn))
        return real[fn]

    def local(frame, event, arg):
        if event == "line":
            rel = rel_of(frame.f_code)
            line = frame.f_lineno
            if frame.f_code.co_name == "<module>" and line in defs[rel]:
                return local
            executed.add((rel, line))
        return local

    def tracer(frame, event, arg):
        rel = rel_of(frame.f_code)
        if rel is None:
            return None
        if event == "call" and frame.f_code.co_name != "<module>":
            executed.add((rel, frame.f_code.co_firstlineno))
        return local

    sys.path[:0] = [corpus] + [os.path.realpath(p) for p in args.path]
    if args.inject:
        ns = runpy.run_path(args.inject)
        for k, v in ns.items():
            if not k.startswith("_"):
                setattr(builtins, k, v)

    def on_alarm(signum, frm):
        raise OracleTimeout()

    if args.timeout > 0:
        signal.signal(signal.SIGALRM, on_alarm)
        signal.setitimer(signal.ITIMER_REAL, args.timeout)

    buf = io.StringIO()
    status, exc_name, exc_msg = "passed", None, None
    try:
        with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(buf):
            sys.settrace(tracer)
            try:
                ns = runpy.run_path(args.entry, run_name="__main__")
                if args.call:
                    ns[args.call]()
            finally:
                sys.settrace(None)
    except OracleTimeout:
        status = "timeout"
    except SystemExit as e:
        if e.code not in (0, None):
            status, exc_name, exc_msg = "failed", "SystemExit", str(e.code)
    except BaseException as e:  # noqa: B902
        signal.setitimer(signal.ITIMER_REAL, 0)
        exc_name, exc_msg = type(e).__name__, str(e)
        frames, in_corpus = [], False
        for fs in traceback.extract_tb(e.__traceback__):
            p = os.path.realpath(fs.filename)
            if p == HERE or p == os.path.realpath(runpy.__file__) or fs.filename.startswith("<frozen"):
                continue
            name = files.get(p, fs.filename)
            in_corpus = in_corpus or p in files
            frames.append(traceback.FrameSummary(name, fs.lineno, fs.name, line=fs.line))
        status = "failed" if in_corpus else "crash"
        buf.write("Traceback (most recent call last):\n")
        buf.write("".join(traceback.format_list(frames)))
        buf.write("".join(traceback.format_exception_only(type(e), e)))
    signal.setitimer(signal.ITIMER_REAL, 0)

    report = {
        "executed": [{"file": f, "line": l} for f, l in sorted(executed)],
        "status": status,
        "exception": exc_name,
        "message": exc_msg,
        "log": buf.getvalue(),
        "line_map": {rel: nonblank_lines(p) for p, rel in files.items()},
    }
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(report, f)


if __name__ == "__main__":
    main()
