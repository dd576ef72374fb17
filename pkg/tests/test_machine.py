import pytest

from harrop import machine
from harrop.compiler import CodeImage, compile_program, parse_listing
from harrop.machine import Machine, MachineError, Outcome, StepLimitExceeded
from harrop.store import Const, GenConst

from util import corpus, wam_answers

STORE_QUERY = ("forall Emp forall Stk ((empty(Emp), (forall X forall S remove(X, stk(Stk,X,S), S)), "
               "(forall X forall S add(X, S, stk(Stk,X,S)))) => {goal}).")

CASES = [
    ("lists.hh", "append(X, Y, [a,b,c])."),
    ("rev_local.hh", "rev([1,2,3], L)."),
    ("rev_shared.hh", "rev([1,2,3], L)."),
    ("type_of.hh", "type_of(abst(v, abst(v, app(app(plus, v), app(v, v)))), T)."),
    ("implication_tree.hh", "p."),
    ("worked.hh", "exists X forall Y (q(Y) => p(X))."),
    ("mixed.hh", "forall Y exists X p(X, Y)."),
    ("store.hh", STORE_QUERY.format(goal="search(Sol)")),
]


def machine_for(listing):
    return Machine(parse_listing(listing))


def test_initial_registers():
    m = Machine(compile_program("p.", "p."))
    assert m.UI == 1 and m.B is None and m.E is None and m.state is Outcome.RUNNING
    assert m.I is m.CI and m.I.is_root


def test_universe_instructions():
    m = machine_for("""
.query $query
$query: allocate 1
    incr_universe
    set_univ_tag Y1
    answer
""")
    assert m.run() is Outcome.SUCCEEDED
    assert m.UI == 2
    c = m.query_env.slots[1]
    assert isinstance(c, GenConst) and c.tag == 2


def test_get_constant_against_generated_constant_fails():
    m = machine_for("""
.query $query
$query: allocate 1
    incr_universe
    set_univ_tag Y1
    put_value Y1,A1
    get_constant a,A1
    answer
""")
    assert m.run() is Outcome.FAILED


def test_set_exist_tag_uses_current_universe():
    m = machine_for("""
.query $query
$query: allocate 2
    incr_universe
    incr_universe
    set_exist_tag Y2
    answer
""")
    m.run()
    assert m.query_env.slots[2].tag == 3


def test_step_limit_and_resume():
    m = Machine(compile_program("p(a). p(b).", "p(X)."))
    assert m.run(max_steps=1) is Outcome.STEP_LIMIT
    with pytest.raises(MachineError):
        m.current_answer()
    assert m.run() is Outcome.SUCCEEDED
    assert str(m.current_answer()) == "X = a"
    assert m.run() is Outcome.SUCCEEDED
    assert m.run() is Outcome.FAILED
    assert m.run() is Outcome.FAILED


def test_solutions_budget_is_total():
    m = Machine(compile_program(corpus("lists.hh"), "append(X, Y, [a,b,c,d])."))
    with pytest.raises(StepLimitExceeded):
        list(m.solutions(max_steps=30))


def test_invalid_opcode_is_a_fault():
    image = CodeImage(code=[("bogus",)], labels={"$query": 0}, query="$query")
    with pytest.raises(MachineError, match="fault"):
        Machine(image).run()


def test_running_off_the_code_is_a_fault():
    image = CodeImage(code=[("true",)], labels={"$query": 0}, query="$query")
    with pytest.raises(MachineError, match="outside the code"):
        Machine(image).run()


def test_image_without_query():
    with pytest.raises(MachineError):
        Machine(compile_program("p."))


def test_trust_ext_walks_outward():
    program = "q(0).\n"
    query = "q(1) => (r(5) => (q(2) => q(X)))."
    assert wam_answers(program, query) == ["X = 2", "X = 1", "X = 0"]


def test_trace_hook():
    lines = []
    wam_answers("p(a).", "p(X).", hooks={"trace": lines.append})
    assert lines[0].startswith("step=1 P=")
    assert any(" call p/1,1 " in ln for ln in lines)


# ---------------------------------------------------------------- invariants


def _body(snapshot):
    return snapshot.split("\n", 1)[1]


@pytest.mark.parametrize("name,query", CASES)
def test_choice_point_restores_state(name, query):
    """Every retry or trust brings store and argument registers back to
    their state when the choice point was created."""
    saved = {}  # choice point -> state at creation; keeps the objects alive
    pending = []

    def step(m):
        if pending:
            cp = pending.pop()
            store_then, regs_then = saved[cp]
            assert _body(m.store.snapshot()) == store_then
            assert m.regs == regs_then
        if m.B is not None and m.B not in saved:
            saved[m.B] = (_body(m.store.snapshot()), m.B.regs[:])
        if m.code[m.P][0] in ("retry_me_else", "trust_me", "trust_ext", "retry", "trust"):
            pending.append(m.B)

    m = machine.run_query(corpus(name), query, hooks={"step": step})
    list(m.solutions(10**6))
    assert saved or name == "mixed.hh"


@pytest.mark.parametrize("name,query", CASES)
def test_universe_balance(name, query):
    def step(m):
        op = m.code[m.P][0]
        if op == "answer":
            assert m.UI == 1
        if op == "decr_universe":
            assert m.UI > 1
        assert m.UI >= 1

    wam_answers(corpus(name), query, hooks={"step": step})


@pytest.mark.parametrize("name,query", CASES)
def test_exhausted_search_leaves_store_clean(name, query):
    m = machine.run_query(corpus(name), query)
    list(m.solutions(10**6))
    assert m.store.trail == []
    assert m.B is None


def test_bound_constants_are_shared():
    m = Machine(compile_program("p(a).", "p(X)."))
    m.run()
    assert m.current_answer().bindings["X"] == Const("a")


def test_escaped_constant_is_detected_on_universe_exit():
    m = machine.run_query("", "exists X forall Y true, true.")
    outer = m.store.fresh_var(1)

    def corrupt(machine_):
        if machine_.code[machine_.P][0] == "decr_universe":
            machine_.store.bind_raw(outer, machine_.store.fresh_gen_const(machine_.UI))

    m.hooks["step"] = corrupt
    with pytest.raises(MachineError, match="escaped"):
        m.run()
