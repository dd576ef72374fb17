"""Reference interpreter over decorated goals.

A goal on the agenda is a frame ``<G, env, I, P, depth>``: the goal AST,
the bindings of its free variable names, the universe index, the
implication point record giving the program, and the number of atomic
expansions above it.  Frames carry their own program and universe, so
leaving an implication or a universal goal needs no bookkeeping.

Search is depth-first with leftmost selection.  Choice points record a
store mark; backtracking undoes bindings and tag changes to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import context as ctx
from . import syntax as syn
from .store import Const, Failure, Store, Struct, resolve
from .syntax import print_term


class DepthLimitExceeded(Exception):
    pass


@dataclass
class SolverConfig:
    max_depth: int | None = None
    max_solutions: int | None = None
    trace: bool = False


@dataclass
class Answer:
    names: tuple
    bindings: dict = field(default_factory=dict)

    def lines(self, show_tags=False):
        names = {}
        return [f"{n} = {print_term(self.bindings[n], names, show_tags)}" for n in self.names]

    def key(self, show_tags=False):
        """Canonical text, equal for answers equal up to variable renaming."""
        return "; ".join(self.lines(show_tags))

    def __str__(self):
        return "\n".join(self.lines()) or "true"


def build_term(t, env, consts):
    if isinstance(t, syn.Var):
        return env[t.name]
    if isinstance(t, syn.Const):
        c = consts.get(t.name)
        if c is None:
            c = consts[t.name] = Const(t.name, 1)
        return c
    return Struct(t.functor, [build_term(a, env, consts) for a in t.args])


def show_goal(goal, env, show_tags=False):
    """Print a goal with its environment substituted in (for traces)."""

    def var(name):
        if name in env:
            return print_term(env[name], "serial", show_tags)
        return syn._show_var(name)

    return syn.format_goal(goal, lambda t: syn.format_ast_term(t, var))


def unit_table(clauses):
    """Group antecedent clauses by predicate, first occurrence first."""
    groups = {}
    for c in clauses:
        groups.setdefault(c.key, []).append(c)
    return ctx.ImplTable([(k, tuple(v)) for k, v in groups.items()])


def global_table(program):
    groups = {}
    for c in program.clauses:
        groups.setdefault(c.key, []).append(c)
    return ctx.GlobalTable([(k, tuple(v)) for k, v in groups.items()])


_NONE = object()  # "no alternative left", distinct from the empty agenda


class _Choice:
    __slots__ = ("mark", "kind", "data")

    def __init__(self, mark, kind, data):
        self.mark = mark
        self.kind = kind
        self.data = data


class Interpreter:
    def __init__(self, program, config=None, listener=None, tracer=None):
        self.program = program
        self.config = config or SolverConfig()
        self.root = ctx.make_root(global_table(program), {})
        self.listener = listener
        self.tracer = tracer
        self.store = Store()
        self._tables = {}
        self._consts = {}
        self.expansions = 0

    # -- helpers
    def _emit(self, *event):
        if self.listener is not None:
            self.listener(*event)

    def _trace(self, line):
        if self.tracer is not None:
            self.tracer(line)
        elif self.config.trace:
            print(line)

    def _tracing(self):
        return self.tracer is not None or self.config.trace

    def _table(self, goal):
        entry = self._tables.get(id(goal))
        if entry is None or entry[0] is not goal:
            entry = self._tables[id(goal)] = (goal, unit_table(goal.clauses))
        return entry[1]

    def tagged_version(self, query):
        """Tag-1 variables for the free variables of a query."""
        return {n: self.store.fresh_var(1) for n in syn.goal_free_vars(query.goal)}

    def new_tagged_instance(self, clause, env, universe):
        env = dict(env)
        for v in clause.quantified:
            env[v] = self.store.fresh_var(universe)
        return build_term(clause.head, env, self._consts), env

    # -- search
    def solve(self, query):
        if isinstance(query, str):
            query = syn.parse_query(query)
        return Solutions(self._search(query), self.config.max_solutions)

    def _search(self, query):
        store = self.store
        env = self.tagged_version(query)
        answer_names = query.answer_vars
        goals = ((query.goal, env, 1, self.root, 0), None)
        choices = []
        tracing = self._tracing()

        def push_choice(kind, data):
            choices.append(_Choice(store.mark(), kind, data))
            store.boundary = store.top

        def backtrack():
            # resume the most recent alternative; _NONE when exhausted
            while choices:
                cp = choices[-1]
                store.undo_to(cp.mark)
                if cp.kind == "or":
                    choices.pop()
                    store.boundary = choices[-1].mark[1] if choices else 0
                    return cp.data
                result = self._next_clause(cp, choices, tracing)
                if result is not _NONE:
                    return result
            return _NONE

        while True:
            if goals is None:
                self._emit("answer")
                shared = {}
                yield Answer(answer_names, {n: resolve(env[n], shared) for n in answer_names})
                goals = backtrack()
                if goals is _NONE:
                    return
                continue
            (goal, genv, universe, record, depth), rest = goals
            if isinstance(goal, syn.Atom):
                if self.config.max_depth is not None and depth >= self.config.max_depth:
                    raise DepthLimitExceeded(f"depth limit {self.config.max_depth} reached")
                atom = build_term(goal.term, genv, self._consts)
                key = syn.term_key(goal.term)
                code, defining = ctx.find(key, record)
                self._emit("lookup", key, record, defining)
                if code is ctx.FAIL:
                    if tracing:
                        self._trace(f"FAIL undefined  I={universe}  goal={show_goal(goal, genv)}")
                    goals = backtrack()
                else:
                    push_choice("clauses", [atom, key, universe, record, depth, rest, code, 0, defining, goal, genv])
                    goals = self._next_clause(choices[-1], choices, tracing)
                    if goals is _NONE:
                        goals = backtrack()
                if goals is _NONE:
                    return
                continue
            if tracing:
                rule = _RULES[type(goal)]
                self._trace(f"RULE {rule}  I={universe}  goal={show_goal(goal, genv)}")
            if isinstance(goal, syn.And):
                goals = ((goal.left, genv, universe, record, depth),
                         ((goal.right, genv, universe, record, depth), rest))
            elif isinstance(goal, syn.Or):
                push_choice("or", ((goal.right, genv, universe, record, depth), rest))
                goals = ((goal.left, genv, universe, record, depth), rest)
            elif isinstance(goal, syn.Exists):
                inner = dict(genv)
                inner[goal.var] = store.fresh_var(universe)
                goals = ((goal.body, inner, universe, record, depth), rest)
            elif isinstance(goal, syn.Forall):
                inner = dict(genv)
                inner[goal.var] = store.fresh_gen_const(universe + 1)
                goals = ((goal.body, inner, universe + 1, record, depth), rest)
            elif isinstance(goal, syn.Implies):
                pushed = ctx.push_impl_point(self._table(goal), genv, record, record.addr + 1)
                self._emit("push", pushed)
                goals = ((goal.body, genv, universe, pushed, depth), rest)
            elif isinstance(goal, syn.TrueGoal):
                goals = rest
            else:
                raise TypeError(f"not a goal: {goal!r}")

    def _next_clause(self, cp, choices, tracing):
        """Try the remaining clauses recorded in ``cp``; new agenda or _NONE."""
        store = self.store
        atom, key, universe, record, depth, rest, code, index, defining, goal, genv = cp.data
        while True:
            if index >= len(code):
                if defining.parent is None:
                    code = ctx.FAIL
                else:
                    code, defining = ctx.next_clause_entry(defining, defining.table.offsets[key])
                index = 0
                if code is ctx.FAIL:
                    choices.pop()
                    store.boundary = choices[-1].mark[1] if choices else 0
                    return _NONE
            clause = code[index]
            index += 1
            cp.data[6:9] = [code, index, defining]
            last = index >= len(code) and (defining.parent is None or
                                           ctx.next_clause_entry(defining, defining.table.offsets[key])[0] is ctx.FAIL)
            if last:
                choices.pop()
                store.boundary = choices[-1].mark[1] if choices else 0
            self._emit("try", key, defining, record)
            head, cenv = self.new_tagged_instance(clause, defining.env, universe)
            self.expansions += 1
            outcome = store.unify(atom, head)
            if outcome:
                if tracing:
                    rule = 6 if clause.body is not None else 7
                    self._trace(f"RULE {rule}  I={universe}  goal={show_goal(goal, genv)}")
                if clause.body is None:
                    return rest
                return ((clause.body, cenv, universe, record, depth + 1), rest)
            if tracing:
                self._trace(_failure_line(outcome, universe, goal, genv))
            if last:
                return _NONE
            store.undo_to(cp.mark)


_RULES = {syn.And: 1, syn.Or: 2, syn.Exists: 3, syn.Implies: 4, syn.Forall: 5, syn.TrueGoal: 0}


def _failure_line(failure: Failure, universe, goal, genv):
    left = print_term(failure.left, "serial", True) if failure.left is not None else "?"
    right = print_term(failure.right, "serial", True) if failure.right is not None else "?"
    return (f"FAIL {failure.reason}  I={universe}  goal={show_goal(goal, genv, True)}"
            f"  {left} vs {right}")


class _Exhausted:
    def __repr__(self):
        return "Exhausted"


EXHAUSTED = _Exhausted()


class Solutions:
    """Lazy answer stream; ``next_solution`` returns ``EXHAUSTED`` at the end."""

    def __init__(self, gen, max_solutions=None):
        self._gen = gen
        self._left = max_solutions
        self.done = False

    def next_solution(self):
        if self.done:
            return EXHAUSTED
        if self._left is not None:
            if self._left <= 0:
                self.done = True
                return EXHAUSTED
            self._left -= 1
        try:
            return next(self._gen)
        except StopIteration:
            self.done = True
            return EXHAUSTED
        except BaseException:
            self.done = True
            raise

    def __iter__(self):
        while True:
            a = self.next_solution()
            if a is EXHAUSTED:
                return
            yield a


def solve(goal, program, config=None, **kw):
    if isinstance(program, str):
        program = syn.parse_program(program)
    if isinstance(goal, str):
        goal = syn.parse_query(goal)
    elif not isinstance(goal, syn.Query):
        goal = syn.Query(goal, tuple(n for n in syn.goal_free_vars(goal) if not n.startswith("_")))
    return Interpreter(program, config, **kw).solve(goal)


def next_solution(stream):
    return stream.next_solution()
