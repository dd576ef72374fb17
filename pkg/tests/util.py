"""Shared helpers for the test suite."""

from collections import Counter
from pathlib import Path

from harrop import interpreter, machine
from harrop.interpreter import SolverConfig

CORPUS = Path(__file__).parent / "corpus"

# criterion number -> (passed, title); filled by test_acceptance
ACCEPTANCE = {}


def corpus(name):
    return (CORPUS / name).read_text()


def interp_answers(program, query, max_depth=None, show_tags=False, **kw):
    cfg = SolverConfig(max_depth=max_depth)
    return [a.key(show_tags) or "true" for a in interpreter.solve(query, program, cfg, **kw)]


def wam_answers(program, query, max_steps=10**6, show_tags=False, hooks=None):
    return [a.key(show_tags) or "true" for a in machine.solve(program, query, max_steps=max_steps, hooks=hooks)]


def same_multiset(a, b):
    return Counter(a) == Counter(b)
