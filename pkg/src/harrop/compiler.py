"""Compile clause and goal ASTs into abstract machine code.

Each clause (global, or one of the clauses of an implication goal's
antecedent) is compiled on its own.  Its variables are first classified
as permanent (environment slots ``Yn``) or temporary (registers), then
code is emitted with symbolic temporaries that a small interval-based
allocator maps onto registers.

Classification of a clause's own variables:

* universally quantified in the body, or occurring in the antecedent of
  an implication goal: permanent;
* existential or clause-level variables occurring inside a universal goal
  within their scope: permanent;
* variables free in the clause (imported from the enclosing clause):
  temporary iff they occur only in the head and the first goal;
* the rest follow the classic WAM rule: temporary iff the first
  occurrence is in the head, in a structure, or in the last goal, and
  the variable occurs in at most one goal (the head going with the first
  goal).  A goal inside an implication or universal goal is never last.

"Goals" here are the atomic goals left after dropping quantifiers and
replacing implications by their consequents.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import syntax as syn
from .syntax import _quote

QUERY_LABEL = "$query"


# ---------------------------------------------------------------- operands


@dataclass(frozen=True)
class Reg:
    kind: str  # "A", "X" or "Y"
    n: int

    def __str__(self):
        return f"{self.kind}{self.n}"


@dataclass(frozen=True)
class Functor:
    name: object
    arity: int

    def __str__(self):
        return f"{_quote(self.name)}/{self.arity}"


@dataclass(frozen=True)
class Atomic:
    name: object

    def __str__(self):
        return _quote(self.name)


@dataclass(frozen=True)
class Label:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class TableRef:
    name: str

    def __str__(self):
        return self.name


class _Tmp:
    """Symbolic temporary register, fixed by the allocator."""

    __slots__ = ("name", "reg")

    def __init__(self, name):
        self.name = name
        self.reg = None

    def __repr__(self):
        return f"<tmp {self.name}>"


# operand signatures: R register, C constant, F functor, L label, T table, N int
SIGNATURES = {
    "put_variable": "RR", "put_value": "RR", "put_unsafe_value": "RR",
    "put_constant": "CR", "put_structure": "FR", "put_list": "R",
    "set_variable": "R", "set_value": "R", "set_local_value": "R",
    "set_constant": "C", "set_void": "N",
    "get_variable": "RR", "get_value": "RR", "get_constant": "CR",
    "get_structure": "FR", "get_list": "R",
    "unify_variable": "R", "unify_value": "R", "unify_local_value": "R",
    "unify_constant": "C", "unify_void": "N",
    "allocate": "N", "deallocate": "", "call": "FN", "execute": "F", "proceed": "",
    "try_me_else": "L", "retry_me_else": "L", "trust_me": "",
    "try": "L", "retry": "L", "trust": "L", "jump": "L",
    "incr_universe": "", "decr_universe": "", "set_univ_tag": "R", "set_exist_tag": "R",
    "push_impl_point": "TN", "pop_impl_point": "", "initialize": "RN", "trust_ext": "N",
    "true": "", "answer": "",
}


class CompileError(Exception):
    pass


# ---------------------------------------------------------------- image


@dataclass
class CodeImage:
    """Flat instruction array with labels, tables and the global directory."""

    code: list = field(default_factory=list)  # tuples (op, *operands)
    labels: dict = field(default_factory=dict)  # name -> address
    tables: dict = field(default_factory=dict)  # name -> [(key, label)]
    directory: list = field(default_factory=list)  # [(key, label)]
    query: str | None = None
    answers: list = field(default_factory=list)  # [(name, slot)]

    def labels_at(self):
        at = {}
        for name, addr in self.labels.items():
            at.setdefault(addr, []).append(name)
        return at

    def max_register(self):
        top = 0
        for instr in self.code:
            for op in instr[1:]:
                if isinstance(op, Reg) and op.kind != "Y":
                    top = max(top, op.n)
        return top


class _Emitter:
    def __init__(self):
        self.code = []  # instructions and ("label", name) markers

    def emit(self, *instr):
        self.code.append(instr)

    def label(self, name):
        self.code.append(("label", name))


# ---------------------------------------------------------------- renaming


class _Renamer:
    """Give every binder in a top-level clause a distinct name."""

    def __init__(self):
        self.used = set()

    def fresh(self, name):
        if name not in self.used:
            self.used.add(name)
            return name
        k = 2
        while f"{name}#{k}" in self.used:
            k += 1
        self.used.add(f"{name}#{k}")
        return f"{name}#{k}"

    def term(self, t, m):
        if isinstance(t, syn.Var):
            return syn.Var(m.get(t.name, t.name))
        if isinstance(t, syn.Struct):
            return syn.Struct(t.functor, tuple(self.term(a, m) for a in t.args))
        return t

    def goal(self, g, m):
        if isinstance(g, syn.Atom):
            return syn.Atom(self.term(g.term, m))
        if isinstance(g, (syn.And, syn.Or)):
            return type(g)(self.goal(g.left, m), self.goal(g.right, m))
        if isinstance(g, (syn.Exists, syn.Forall)):
            new = self.fresh(g.var)
            return type(g)(new, self.goal(g.body, {**m, g.var: new}))
        if isinstance(g, syn.Implies):
            return syn.Implies(tuple(self.clause(c, m) for c in g.clauses), self.goal(g.body, m))
        return g

    def clause(self, c, m):
        inner = dict(m)
        explicit = []
        for v in c.explicit:
            inner[v] = self.fresh(v)
            explicit.append(inner[v])
        implicit = []
        for v in c.implicit:
            inner[v] = self.fresh(v)
            implicit.append(inner[v])
        body = self.goal(c.body, inner) if c.body is not None else None
        free = tuple(m.get(v, v) for v in c.free)
        return syn.Clause(self.term(c.head, inner), body, tuple(explicit), tuple(implicit), free)


def rename_clause(clause, outer=()):
    r = _Renamer()
    r.used.update(outer)
    return r.clause(clause, {})


# ---------------------------------------------------------------- analysis


@dataclass
class VarInfo:
    name: str
    origin: str  # "free", "clause" or "body"
    binder: str | None = None  # "exists" / "forall" for body binders
    kind: str = "temp"
    slot: int | None = None
    occurrences: int = 0
    in_antecedent: bool = False
    in_universal: bool = False
    chunks: set = field(default_factory=set)
    first: str | None = None  # "head", "struct", "goal", "last"

    @property
    def needs_univ_tag(self):
        return self.binder == "forall"

    @property
    def needs_exist_tag(self):
        return self.binder == "exists" and self.kind == "perm"


class _Goals:
    """Atomic goals of the reduced body, in textual order."""

    def __init__(self, body):
        self.atoms = []  # (atom goal, embedded flag)
        self.last = None
        if body is not None:
            self._walk(body, False)
            self.last = _last_goal(body)

    def _walk(self, g, embedded):
        if isinstance(g, syn.Atom):
            self.atoms.append((g, embedded))
        elif isinstance(g, (syn.And, syn.Or)):
            self._walk(g.left, embedded)
            self._walk(g.right, embedded)
        elif isinstance(g, syn.Exists):
            self._walk(g.body, embedded)
        elif isinstance(g, (syn.Forall, syn.Implies)):
            self._walk(g.body, True)


def _last_goal(g):
    while True:
        if isinstance(g, syn.Atom):
            return g
        if isinstance(g, syn.And):
            g = g.right
        elif isinstance(g, syn.Exists):
            g = g.body
        else:
            return None


def classify_variables(clause, force_permanent=(), is_query=False):
    """Classify the clause's own variables; returns ``{name: VarInfo}``.

    The clause must already have distinct binder names (``rename_clause``).
    """
    info = {}
    for v in clause.free:
        info[v] = VarInfo(v, "free")
    for v in clause.quantified:
        info[v] = VarInfo(v, "clause")
    order = []  # first textual appearance, binders included

    def see(name):
        if name in info and name not in order:
            order.append(name)

    goals = _Goals(clause.body)
    goal_index = {id(g): i for i, (g, _) in enumerate(goals.atoms)}

    def term_occ(t, where, chunk, nested):
        if isinstance(t, syn.Var):
            vi = info.get(t.name)
            if vi is None:
                return
            see(t.name)
            vi.occurrences += 1
            vi.chunks.add(chunk)
            if vi.first is None:
                vi.first = "struct" if nested else where
        elif isinstance(t, syn.Struct):
            for a in t.args:
                term_occ(a, where, chunk, True)

    if isinstance(clause.head, syn.Struct):
        for a in clause.head.args:
            term_occ(a, "head", 0, False)

    def walk(g, universals):
        # universals: names of variables whose scope contains the current
        # position and that have since entered a universal goal
        if isinstance(g, syn.Atom):
            idx = goal_index[id(g)]
            where = "last" if g is goals.last else "goal"
            if isinstance(g.term, syn.Struct):
                for a in g.term.args:
                    term_occ(a, where, idx, False)
            for n in syn.term_vars(g.term):
                if n in universals:
                    info[n].in_universal = True
        elif isinstance(g, (syn.And, syn.Or)):
            walk(g.left, universals)
            walk(g.right, universals)
        elif isinstance(g, syn.Exists):
            info[g.var] = VarInfo(g.var, "body", "exists")
            see(g.var)
            walk(g.body, universals)
        elif isinstance(g, syn.Forall):
            info[g.var] = VarInfo(g.var, "body", "forall")
            see(g.var)
            walk(g.body, set(info))
        elif isinstance(g, syn.Implies):
            for c in g.clauses:
                for n in syn.clause_free_vars(c):
                    if n in info:
                        see(n)
                        info[n].in_antecedent = True
                        info[n].occurrences += 1
                        if n in universals:
                            info[n].in_universal = True
            walk(g.body, universals)

    if clause.body is not None:
        walk(clause.body, set())

    for vi in info.values():
        if vi.binder == "forall" or vi.in_antecedent or vi.name in force_permanent:
            vi.kind = "perm"
        elif vi.origin == "free":
            vi.kind = "perm" if vi.chunks - {0} else "temp"
        elif vi.in_universal:
            vi.kind = "perm"
        elif len(vi.chunks) > 1:
            vi.kind = "perm"
        elif vi.first == "goal":
            vi.kind = "perm"
        else:
            vi.kind = "temp"
    slot = 0
    for name in order + [n for n in info if n not in order]:
        vi = info[name]
        if vi.kind == "perm":
            slot += 1
            vi.slot = slot
    return info


# ---------------------------------------------------------------- clause compiler


class _ClauseCompiler:
    def __init__(self, compiler, clause, imports=None, force_permanent=(), is_query=False):
        self.c = compiler
        self.clause = clause
        self.imports = imports or {}  # free var -> slot in the closing environment
        self.is_query = is_query
        self.info = classify_variables(clause, force_permanent, is_query)
        self.nperm = sum(1 for v in self.info.values() if v.kind == "perm")
        self.goals = _Goals(clause.body)
        self.e = _Emitter()
        self.tmps = {}
        self.seen = set()
        self.maybe_local = set()  # may still point at a stack cell
        self.unsafe = set()  # may be an unbound cell of this very environment
        self.env = self._needs_env()
        self.arity_base = self._max_arity()
        self.counter = 0

    # -- helpers
    def _needs_env(self):
        if self.nperm or self.is_query:
            return True
        body = self.clause.body
        if body is None:
            return False
        if any(isinstance(g, (syn.Or, syn.Forall, syn.Implies)) for g in _subgoals(body)):
            return True
        atoms = self.goals.atoms
        return len(atoms) > 1 or (len(atoms) == 1 and atoms[0][0] is not self.goals.last)

    def _max_arity(self):
        arities = [len(self.clause.head.args) if isinstance(self.clause.head, syn.Struct) else 0]
        arities += [len(g.term.args) if isinstance(g.term, syn.Struct) else 0 for g, _ in self.goals.atoms]
        return max(arities)

    def reg(self, name):
        vi = self.info[name]
        if vi.kind == "perm":
            return Reg("Y", vi.slot)
        if name not in self.tmps:
            self.tmps[name] = _Tmp(name)
        return self.tmps[name]

    def new_tmp(self):
        self.counter += 1
        return _Tmp(f"$t{self.counter}")

    def singleton(self, name):
        vi = self.info[name]
        return vi.kind == "temp" and vi.occurrences == 1 and vi.origin != "free"

    # -- top level
    def compile(self, sequencing=()):
        for instr in sequencing:
            self.e.emit(*instr)
        if self.env:
            self.e.emit("allocate", self.nperm)
            for vi in self.info.values():
                if vi.kind == "perm" and vi.origin != "free":
                    self.unsafe.add(vi.name)
                    self.maybe_local.add(vi.name)
        for name, m in self.imports.items():
            if name in self.info and self.info[name].occurrences:
                self.e.emit("initialize", self.reg(name), m)
                self.seen.add(name)
                self.maybe_local.add(name)
                self.unsafe.discard(name)
        self.head()
        tail = False
        if self.clause.body is not None:
            tail = self.goal(self.clause.body, not self.is_query)
        if self.is_query:
            self.e.emit("answer")
        elif not tail:
            if self.env:
                self.e.emit("deallocate")
            self.e.emit("proceed")
        return _allocate(self.e.code, self.arity_base)

    # -- head
    def head(self):
        h = self.clause.head
        if not isinstance(h, syn.Struct):
            return
        for i, a in enumerate(h.args, 1):
            ai = Reg("A", i)
            if isinstance(a, syn.Var):
                if self.singleton(a.name):
                    continue
                if a.name in self.seen:
                    self.e.emit("get_value", self.reg(a.name), ai)
                else:
                    self.e.emit("get_variable", self.reg(a.name), ai)
                    self.seen.add(a.name)
                    self.maybe_local.add(a.name)
                    self.unsafe.discard(a.name)
            elif isinstance(a, syn.Const):
                self.e.emit("get_constant", Atomic(a.name), ai)
            else:
                self.head_struct(a, ai)

    def head_struct(self, t, target):
        queue = [(t, target)]
        while queue:
            t, target = queue.pop(0)
            if t.functor == syn.CONS and len(t.args) == 2:
                self.e.emit("get_list", target)
            else:
                self.e.emit("get_structure", Functor(t.functor, len(t.args)), target)
            voids = 0
            for a in t.args:
                if isinstance(a, syn.Var) and self.singleton(a.name):
                    voids += 1
                    continue
                if voids:
                    self.e.emit("unify_void", voids)
                    voids = 0
                if isinstance(a, syn.Var):
                    r = self.reg(a.name)
                    if a.name not in self.seen:
                        self.e.emit("unify_variable", r)
                        self.seen.add(a.name)
                        self.maybe_local.discard(a.name)
                        self.unsafe.discard(a.name)
                    elif a.name in self.maybe_local:
                        self.e.emit("unify_local_value", r)
                    else:
                        self.e.emit("unify_value", r)
                elif isinstance(a, syn.Const):
                    self.e.emit("unify_constant", Atomic(a.name))
                else:
                    tmp = self.new_tmp()
                    self.e.emit("unify_variable", tmp)
                    queue.append((a, tmp))
            if voids:
                self.e.emit("unify_void", voids)

    # -- body
    def goal(self, g, last):
        """Emit code for ``g``; returns True if it ended in ``execute``."""
        if isinstance(g, syn.Atom):
            return self.atom(g, last and g is self.goals.last)
        if isinstance(g, syn.TrueGoal):
            return False
        if isinstance(g, syn.And):
            self.goal(g.left, False)
            return self.goal(g.right, last)
        if isinstance(g, syn.Or):
            self.disjunction(g)
            return False
        if isinstance(g, syn.Exists):
            if self.info[g.var].kind == "perm":
                self.e.emit("set_exist_tag", self.reg(g.var))
            self.seen.add(g.var)
            return self.goal(g.body, last)
        if isinstance(g, syn.Forall):
            self.e.emit("incr_universe")
            self.e.emit("set_univ_tag", self.reg(g.var))
            self.seen.add(g.var)
            self.maybe_local.discard(g.var)
            self.unsafe.discard(g.var)
            self.goal(g.body, False)
            self.e.emit("decr_universe")
            return False
        if isinstance(g, syn.Implies):
            table = self.c.unit(g.clauses, {n: vi.slot for n, vi in self.info.items() if vi.kind == "perm"})
            self.e.emit("push_impl_point", TableRef(table), self.nperm)
            self.goal(g.body, False)
            self.e.emit("pop_impl_point")
            return False
        raise CompileError(f"not a goal: {g!r}")

    def disjunction(self, g):
        branches = []
        while isinstance(g, syn.Or):
            branches.append(g.left)
            g = g.right
        branches.append(g)
        end = self.c.new_label()
        saved = (set(self.seen), set(self.maybe_local), set(self.unsafe))
        after = None
        for k, branch in enumerate(branches):
            self.seen, self.maybe_local, self.unsafe = (set(s) for s in saved)
            nxt = self.c.new_label() if k < len(branches) - 1 else None
            if k == 0:
                self.e.emit("try_me_else", Label(nxt))
            elif nxt is not None:
                self.e.emit("retry_me_else", Label(nxt))
            else:
                self.e.emit("trust_me")
            self.goal(branch, False)
            if nxt is not None:
                self.e.emit("jump", Label(end))
                self.e.label(nxt)
            # a variable is initialized after the disjunction only if every
            # branch initialized it
            after = (self.seen, self.maybe_local, self.unsafe) if after is None else (
                after[0] & self.seen, after[1] | self.maybe_local, after[2] | self.unsafe)
        self.e.label(end)
        self.seen, self.maybe_local, self.unsafe = after

    def atom(self, g, last):
        t = g.term
        args = t.args if isinstance(t, syn.Struct) else ()
        for i, a in enumerate(args, 1):
            self.put_arg(a, Reg("A", i), last)
        key = Functor(*syn.term_key(t))
        if last:
            if self.env:
                self.e.emit("deallocate")
            self.e.emit("execute", key)
            return True
        self.e.emit("call", key, self.nperm)
        return False

    def put_arg(self, a, ai, last):
        if isinstance(a, syn.Var):
            if self.singleton(a.name):
                self.e.emit("put_variable", self.new_tmp(), ai)
                return
            r = self.reg(a.name)
            vi = self.info[a.name]
            if vi.kind == "temp" and a.name not in self.seen:
                self.e.emit("put_variable", r, ai)
                self.seen.add(a.name)
                self.maybe_local.discard(a.name)
            elif vi.kind == "perm" and last and a.name in self.unsafe:
                self.e.emit("put_unsafe_value", r, ai)
                self.unsafe.discard(a.name)
                self.maybe_local.discard(a.name)
            else:
                self.e.emit("put_value", r, ai)
                self.seen.add(a.name)
        elif isinstance(a, syn.Const):
            self.e.emit("put_constant", Atomic(a.name), ai)
        else:
            self.build(a, ai)

    def build(self, t, target):
        # inner structures first, each into its own temporary
        inner = {}
        for k, a in enumerate(t.args):
            if isinstance(a, syn.Struct):
                tmp = self.new_tmp()
                self.build(a, tmp)
                inner[k] = tmp
        if t.functor == syn.CONS and len(t.args) == 2:
            self.e.emit("put_list", target)
        else:
            self.e.emit("put_structure", Functor(t.functor, len(t.args)), target)
        voids = 0
        for k, a in enumerate(t.args):
            if isinstance(a, syn.Var) and self.singleton(a.name):
                voids += 1
                continue
            if voids:
                self.e.emit("set_void", voids)
                voids = 0
            if k in inner:
                self.e.emit("set_value", inner[k])
            elif isinstance(a, syn.Const):
                self.e.emit("set_constant", Atomic(a.name))
            else:
                r = self.reg(a.name)
                vi = self.info[a.name]
                if vi.kind == "temp" and a.name not in self.seen:
                    self.e.emit("set_variable", r)
                    self.seen.add(a.name)
                    self.maybe_local.discard(a.name)
                elif a.name in self.maybe_local:
                    self.e.emit("set_local_value", r)
                    self.seen.add(a.name)
                    self.maybe_local.discard(a.name)
                    self.unsafe.discard(a.name)
                else:
                    self.e.emit("set_value", r)
        if voids:
            self.e.emit("set_void", voids)


def _subgoals(g):
    yield g
    if isinstance(g, (syn.And, syn.Or)):
        yield from _subgoals(g.left)
        yield from _subgoals(g.right)
    elif isinstance(g, (syn.Exists, syn.Forall, syn.Implies)):
        yield from _subgoals(g.body)


# ---------------------------------------------------------------- register allocation

_CLOBBERS = {"call", "execute", "proceed", "answer"}


def _allocate(code, base):
    """Map symbolic temporaries to registers; drop self-moves."""
    instrs = [ins for ins in code]
    positions = {}
    for idx, ins in enumerate(instrs):
        if ins[0] == "label":
            continue
        for op in ins[1:]:
            if isinstance(op, _Tmp):
                lo, hi = positions.get(op, (idx, idx))
                positions[op] = (min(lo, idx), max(hi, idx))

    # argument register occupancy: head arguments until consumed, goal
    # arguments from their put until the call
    busy = {}  # register number -> list of (start, end, kind, detail)
    consumed = {}
    calls = [i for i, ins in enumerate(instrs) if ins[0] in _CLOBBERS]
    first_call = calls[0] if calls else len(instrs)
    for idx, ins in enumerate(instrs[:first_call]):
        if ins[0] == "label":
            continue
        if ins[0].startswith("get_"):
            ai = ins[-1]
            if isinstance(ai, Reg) and ai.kind == "A" and ai.n not in consumed:
                consumed[ai.n] = idx
    for n, idx in consumed.items():
        busy.setdefault(n, []).append((-1, idx, "head", n))
    for idx, ins in enumerate(instrs):
        if ins[0].startswith("put_") and isinstance(ins[-1], Reg) and ins[-1].kind == "A":
            end = next((c for c in calls if c > idx), len(instrs))
            busy.setdefault(ins[-1].n, []).append((idx, end, "goal", ins))

    for c in calls:
        for tmp, (lo, hi) in positions.items():
            if lo < c < hi:
                raise CompileError(f"temporary {tmp.name} live across a call")

    def prefs(tmp):
        out = []
        lo, hi = positions[tmp]
        for idx in range(lo, hi + 1):
            ins = instrs[idx]
            if ins[0] == "get_variable" and ins[1] is tmp:
                out.append(ins[2].n)
            if ins[0] == "put_value" and ins[1] is tmp:
                out.append(ins[2].n)
        return out

    def fits(tmp, n):
        lo, hi = positions[tmp]
        for start, end, kind, detail in busy.get(n, ()):
            if kind == "head":
                if lo < end or (lo == end and not (instrs[lo][0] == "get_variable" and instrs[lo][1] is tmp)):
                    return False
            elif kind == "goal":
                if lo > end or hi < start:
                    continue
                if hi == start and detail[0] == "put_value" and detail[1] is tmp:
                    continue
                return False
            else:
                if not (hi < start or end < lo):
                    return False
        return True

    for tmp in sorted(positions, key=lambda t: positions[t][0]):
        choice = None
        for n in prefs(tmp):
            if fits(tmp, n):
                choice = n
                break
        if choice is None:
            n = base + 1
            while not fits(tmp, n):
                n += 1
            choice = n
        tmp.reg = choice
        lo, hi = positions[tmp]
        busy.setdefault(choice, []).append((lo, hi, "tmp", tmp))

    def phys(op):
        if isinstance(op, _Tmp):
            return Reg("A" if op.reg <= base else "X", op.reg)
        return op

    out = []
    for ins in instrs:
        if ins[0] == "label":
            out.append(ins)
            continue
        ins = (ins[0],) + tuple(phys(op) for op in ins[1:])
        if ins[0] in ("get_variable", "put_value") and ins[1].kind != "Y" and ins[1].n == ins[2].n:
            continue
        out.append(ins)
    return out


# ---------------------------------------------------------------- program compiler


class Compiler:
    def __init__(self):
        self.labels = 0
        self.tables = {}
        self.table_count = 0
        self.deferred = []  # unit code blocks, emitted after the main code

    def new_label(self):
        self.labels += 1
        return f"L{self.labels}"

    def unit(self, clauses, slots):
        """Compile the antecedent of an implication goal; returns table name."""
        self.table_count += 1
        name = f"t{self.table_count}"
        groups = {}
        for c in clauses:
            groups.setdefault(c.key, []).append(c)
        entries = []
        for key, group in groups.items():
            label = f"{name}.{_quote(key[0])}/{key[1]}"
            entries.append((key, label))
            offset = len(entries)
            block = [("label", label)]
            for k, c in enumerate(group):
                nxt = self.new_label()
                seq = [("try_me_else" if k == 0 else "retry_me_else", Label(nxt))]
                missing = [v for v in c.free if v not in slots]
                if missing:
                    raise CompileError(f"free variable not in scope: {', '.join(missing)}")
                imports = {v: slots[v] for v in c.free}
                block += _ClauseCompiler(self, c, imports).compile(seq)
                block.append(("label", nxt))
            block.append(("trust_ext", offset))
            self.deferred.append(block)
        self.tables[name] = entries
        return name

    def predicate(self, key, clauses):
        label = f"{_quote(key[0])}/{key[1]}"
        block = [("label", label)]
        for k, c in enumerate(clauses):
            seq = ()
            nxt = None
            if len(clauses) > 1:
                if k < len(clauses) - 1:
                    nxt = self.new_label()
                    seq = (("try_me_else" if k == 0 else "retry_me_else", Label(nxt)),)
                else:
                    seq = (("trust_me",),)
            block += _ClauseCompiler(self, rename_clause(c)).compile(seq)
            if nxt is not None:
                block.append(("label", nxt))
        return label, block

    def query(self, query):
        clause = syn.Clause(syn.Const(QUERY_LABEL), query.goal, (), tuple(syn.goal_free_vars(query.goal)))
        clause = rename_clause(clause)
        cc = _ClauseCompiler(self, clause, force_permanent=set(query.answer_vars), is_query=True)
        block = [("label", QUERY_LABEL)] + cc.compile()
        answers = [(n, cc.info[n].slot) for n in query.answer_vars]
        return block, answers


def compile_program(program, query=None):
    """Compile a program (and optionally a query) into a ``CodeImage``."""
    if isinstance(program, str):
        program = syn.parse_program(program)
    if isinstance(query, str):
        query = syn.parse_query(query)
    comp = Compiler()
    groups = {}
    for c in program.clauses:
        groups.setdefault(c.key, []).append(c)
    blocks = []
    directory = []
    for key, clauses in groups.items():
        label, block = comp.predicate(key, clauses)
        directory.append((key, label))
        blocks.append(block)
    answers = []
    if query is not None:
        block, answers = comp.query(query)
        blocks.append(block)
    while comp.deferred:
        blocks.append(comp.deferred.pop(0))
    image = CodeImage(tables=comp.tables, directory=directory,
                      query=QUERY_LABEL if query is not None else None, answers=answers)
    for block in blocks:
        for ins in block:
            if ins[0] == "label":
                if ins[1] in image.labels:
                    raise CompileError(f"duplicate label {ins[1]}")
                image.labels[ins[1]] = len(image.code)
            else:
                image.code.append(ins)
    return image


def compile_clause(clause, imports=None):
    """Code for a single clause plus the code of the units it introduces.

    Returns ``(clause_code, unit_blocks)`` as lists of instruction tuples
    interleaved with ``("label", name)`` markers.
    """
    if isinstance(clause, str):
        clause = syn.parse_program(clause).clauses[0]
    comp = Compiler()
    label, block = comp.predicate(clause.key, [clause])
    units = []
    while comp.deferred:
        units.append(comp.deferred.pop(0))
    return block, units


# ---------------------------------------------------------------- listings


def format_instr(ins):
    op = ins[0]
    if len(ins) == 1:
        return op
    return f"{op} " + ",".join(str(o) for o in ins[1:])


def format_block(block):
    """Listing lines for a block of instructions and label markers."""
    lines = []
    pending = None
    for ins in block:
        if ins[0] == "label":
            if pending is not None:
                lines.append(f"{pending}:")
            pending = ins[1]
            continue
        text = format_instr(ins)
        lines.append(f"{pending}: {text}" if pending is not None else f"    {text}")
        pending = None
    if pending is not None:
        lines.append(f"{pending}:")
    return lines


def format_listing(image):
    at = image.labels_at()
    lines = []
    for key, label in image.directory:
        lines.append(f".global {_quote(key[0])}/{key[1]}={label}")
    for name, entries in image.tables.items():
        body = " ".join(f"{_quote(k[0])}/{k[1]}={label}" for k, label in entries)
        lines.append(f".table {name} {body}".rstrip())
    if image.query is not None:
        lines.append(f".query {image.query}")
        if image.answers:
            lines.append(".answers " + " ".join(f"{n}=Y{s}" for n, s in image.answers))
    for addr, ins in enumerate(image.code):
        names = sorted(at.get(addr, ()), key=lambda n: image.labels[n])
        for extra in names[:-1]:
            lines.append(f"{extra}:")
        text = format_instr(ins)
        lines.append(f"{names[-1]}: {text}" if names else f"    {text}")
    for name, addr in image.labels.items():
        if addr == len(image.code):
            lines.append(f"{name}:")
    return "\n".join(lines) + "\n"


_SPLIT = re.compile(r"'(?:[^'\\]|\\.)*'|[^,]+")


def _split_operands(text):
    return [m.group().strip() for m in _SPLIT.finditer(text) if m.group().strip()]


def _unquote(text):
    if text.startswith("'"):
        return re.sub(r"\\(.)", r"\1", text[1:-1])
    if re.fullmatch(r"\d+", text):
        return int(text)
    return text


def _parse_functor(text):
    name, _, arity = text.rpartition("/")
    return Functor(_unquote(name), int(arity))


def _parse_operand(kind, text):
    if kind == "R":
        m = re.fullmatch(r"([AXY])(\d+)", text)
        if not m:
            raise CompileError(f"bad register {text!r}")
        return Reg(m.group(1), int(m.group(2)))
    if kind == "C":
        return Atomic(_unquote(text))
    if kind == "F":
        return _parse_functor(text)
    if kind == "L":
        return Label(text)
    if kind == "T":
        return TableRef(text)
    return int(text)


def parse_instr(text):
    op, _, rest = text.strip().partition(" ")
    if op not in SIGNATURES:
        raise CompileError(f"unknown opcode {op!r}")
    sig = SIGNATURES[op]
    ops = _split_operands(rest)
    if len(ops) != len(sig):
        raise CompileError(f"{op} expects {len(sig)} operands, got {len(ops)}")
    return (op,) + tuple(_parse_operand(k, o) for k, o in zip(sig, ops))


_LABEL_LINE = re.compile(r"^(\S+?):(?:\s+(.*))?$")


def parse_listing(text):
    """Assemble a listing produced by ``format_listing``."""
    image = CodeImage()
    for raw in text.splitlines():
        line = raw.rstrip()
        if not line.strip():
            continue
        if line.startswith(".global "):
            key, label = line[8:].rsplit("=", 1)
            f = _parse_functor(key)
            image.directory.append(((f.name, f.arity), label))
        elif line.startswith(".table "):
            parts = line[7:].split(" ")
            entries = []
            for item in parts[1:]:
                key, label = item.rsplit("=", 1)
                f = _parse_functor(key)
                entries.append(((f.name, f.arity), label))
            image.tables[parts[0]] = entries
        elif line.startswith(".query "):
            image.query = line[7:].strip()
        elif line.startswith(".answers"):
            for item in line[8:].split():
                name, slot = item.split("=")
                image.answers.append((name, int(slot[1:])))
        elif line.startswith(" "):
            image.code.append(parse_instr(line))
        else:
            m = _LABEL_LINE.match(line)
            if not m:
                raise CompileError(f"bad listing line {line!r}")
            image.labels[m.group(1)] = len(image.code)
            if m.group(2):
                image.code.append(parse_instr(m.group(2)))
    return image


# ---------------------------------------------------------------- golden comparison


def normalize_listing(lines):
    """Rename a listing so that hand-written and generated code compare.

    * predicate labels lose their unit prefix and arity (``t1.rev_aux/2``
      and ``rev_aux`` both become ``rev_aux``), as do ``call``/``execute``
      operands;
    * other labels become ``C1, C2, ...`` and table names ``T1, T2, ...``
      in order of first appearance;
    * ``X`` registers are renumbered ``X1, X2, ...`` by first appearance;
      ``A`` and ``Y`` registers are kept.
    """
    labels, tables, xregs = {}, {}, {}
    out = []
    first = True

    def label(name, defining):
        nonlocal first
        if "/" in name or (defining and first):
            first = False
            return name.rpartition("/")[0].rpartition(".")[2] if "/" in name else name
        if name not in labels:
            labels[name] = f"C{len(labels) + 1}"
        return labels[name]

    def operand(op, text):
        if re.fullmatch(r"X\d+", text):
            xregs.setdefault(text, f"X{len(xregs) + 1}")
            return xregs[text]
        if op in ("call", "execute") and "/" in text:
            return text.rpartition("/")[0]
        if op in ("try_me_else", "retry_me_else", "try", "retry", "trust", "jump"):
            return label(text, False)
        if op == "push_impl_point" and not text.isdigit():
            tables.setdefault(text, f"T{len(tables) + 1}")
            return tables[text]
        return text

    for raw in lines:
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue
        name = None
        m = re.match(r"^(\S+?):(?:\s+(.*))?$", line)
        if m and m.group(1).split(" ")[0] not in SIGNATURES:
            name, line = m.group(1), (m.group(2) or "")
        name = label(name, True) if name is not None else None
        first = False
        op, _, rest = line.partition(" ")
        ops = [operand(op, o) for o in _split_operands(rest)]
        text = op + (" " + ",".join(ops) if ops else "")
        out.append(f"{name}: {text}" if name else text)
    return out
