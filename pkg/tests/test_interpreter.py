import re

import pytest

from harrop import interpreter as interp
from harrop.interpreter import EXHAUSTED, DepthLimitExceeded, SolverConfig

import oracles
from util import corpus, interp_answers, same_multiset

TRACE_LINE = re.compile(r"(RULE \d+|FAIL [a-z-]+)  I=\d+  goal=\S.*")


def test_facts_in_order():
    assert interp_answers("p(a). p(b). q(X) :- p(X).", "q(X).") == ["X = a", "X = b"]


def test_disjunction_and_true():
    assert interp_answers("", "(true ; true).") == ["true", "true"]


def test_implication_adds_clause_temporarily():
    assert interp_answers("", "p => p.") == ["true"]
    assert interp_answers("", "(p => true), p.") == []


def test_forall_constant_cannot_escape():
    assert interp_answers("", "exists X forall Y (p(Y) => p(X)).") == []
    assert interp_answers("", "forall Y exists X (p(Y) => p(X)).") == ["true"]


def test_lists_corpus():
    lists = corpus("lists.hh")
    assert interp_answers(lists, "append(X, Y, [1,2]).") == [
        "X = []; Y = [1,2]", "X = [1]; Y = [2]", "X = [1,2]; Y = []"]
    assert interp_answers(lists, "mem(X, [a,b]).") == ["X = a", "X = b"]


def test_store_abstraction():
    text = corpus("store.hh")
    template = ("forall Emp forall Stk ((empty(Emp), (forall X forall S remove(X, stk(Stk,X,S), S)), "
                "(forall X forall S add(X, S, stk(Stk,X,S)))) => {goal}).")
    assert interp_answers(text, template.format(goal="search(Sol)")) == ["Sol = b"]
    assert interp_answers(text, template.format(goal="leak(Sol)")) == []
    assert interp_answers(text, template.format(goal="exists S leak(S)")) == ["true"]


def test_next_solution_is_idempotent_after_exhaustion():
    stream = interp.solve("p(X).", "p(a).")
    assert str(interp.next_solution(stream)) == "X = a"
    assert interp.next_solution(stream) is EXHAUSTED
    assert interp.next_solution(stream) is EXHAUSTED


def test_max_solutions():
    stream = interp.solve("p(X).", "p(a). p(b).", SolverConfig(max_solutions=1))
    assert len(list(stream)) == 1


def test_depth_limit():
    with pytest.raises(DepthLimitExceeded):
        interp_answers("p :- p.", "p.", max_depth=20)
    # the limit does not fire on short proofs
    assert interp_answers("p :- q. q.", "p.", max_depth=2) == ["true"]


def test_trace_format():
    lines = []
    interp_answers("p(a). q(X) :- p(X).", "q(X).", tracer=lines.append)
    assert lines and all(TRACE_LINE.fullmatch(ln) for ln in lines)


def test_show_tags():
    answers = interp_answers("p(X, X).", "p(A, B).", show_tags=True)
    assert answers == ["A = _G1^1; B = _G1^1"]


def test_shared_variables_across_bindings():
    assert interp_answers("p(X, g(X)).", "p(A, B).") == ["A = _G1; B = g(_G1)"]


def test_listener_events():
    events = []
    interp_answers("p :- (q => q).", "p.", listener=lambda e, *a: events.append(e))
    assert events.count("push") == 1 and events[-1] == "answer"
    assert "lookup" in events and "try" in events


@pytest.mark.parametrize("name,query", [
    ("lists.hh", "append(X, Y, [a,b,c])."),
    ("lists.hh", "len([a,b,c], N)."),
    ("rev_local.hh", "rev([1,2,3], L)."),
    ("rev_shared.hh", "rev([a,b], L)."),
    ("type_of.hh", "type_of(abst(v, app(plus, v)), T)."),
    ("implication_tree.hh", "p."),
    ("worked.hh", "exists X forall Y (q(Y) => p(X))."),
])
def test_agrees_with_prover(name, query):
    program = corpus(name)
    assert same_multiset(interp_answers(program, query, max_depth=200),
                         oracles.prover_answers(program, query, max_depth=200))
