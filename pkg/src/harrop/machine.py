"""Abstract machine executing compiled code.

The WAM core is extended with a universe index register ``UI``, a
current-implication register ``I`` and the pair ``CI``/``CE`` naming the
implication point record (and its environment) in which the procedure
being executed was found.

Stack objects (environments, choice points, implication point records)
are Python objects, each given an address so that the top of the local
stack can be computed as it would be in a flat layout.  Heap cells are
the variables of the shared ``Store``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from . import context as ctx
from . import syntax as syn
from .compiler import Atomic, CodeImage, Functor, Label, Reg, TableRef, compile_program
from .interpreter import Answer
from .store import Const, Struct, Var, deref, resolve, Store


class MachineError(Exception):
    pass


class Outcome(enum.Enum):
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    STEP_LIMIT = "step-limit"
    RUNNING = "running"


class Env:
    __slots__ = ("slots", "prev", "cp", "addr")

    def __init__(self, slots, prev, cp, addr):
        self.slots = slots  # index 0 unused
        self.prev = prev
        self.cp = cp
        self.addr = addr


class ChoicePoint:
    """Saved machine state; ``mark`` is the (trail, heap) position."""

    __slots__ = ("regs", "e", "cp", "prev", "bp", "mark", "uip", "ip", "cip", "cep", "nargs", "addr")

    def __init__(self, m, bp, addr):
        self.regs = m.regs[:]
        self.e = m.E
        self.cp = m.CP
        self.prev = m.B
        self.bp = bp
        self.mark = m.store.mark()
        self.uip = m.UI
        self.ip = m.I
        self.cip = m.CI
        self.cep = m.CE
        self.nargs = m.nargs
        self.addr = addr


@dataclass
class LinkedImage:
    code: list
    image: CodeImage
    root: ctx.ImplicationPointRecord
    nregs: int


def link(image):
    """Resolve labels, tables and constants of a ``CodeImage`` for execution."""
    labels = image.labels
    consts = {}

    def addr(label):
        if label not in labels:
            raise MachineError(f"undefined label {label}")
        return labels[label]

    tables = {name: ctx.ImplTable([(k, addr(lab)) for k, lab in entries], name)
              for name, entries in image.tables.items()}

    def operand(op):
        if isinstance(op, Label):
            return addr(op.name)
        if isinstance(op, TableRef):
            return tables[op.name]
        if isinstance(op, Atomic):
            c = consts.get(op.name)
            if c is None:
                c = consts[op.name] = Const(op.name, 1)
            return c
        if isinstance(op, Functor):
            return (op.name, op.arity)
        return op

    code = [(ins[0],) + tuple(operand(o) for o in ins[1:]) for ins in image.code]
    root = ctx.make_root(ctx.GlobalTable([(k, addr(lab)) for k, lab in image.directory]))
    return LinkedImage(code, image, root, image.max_register() + 1)


class Machine:
    """Registers, stacks and the instruction loop.

    ``hooks`` may contain ``"step"`` (called with the machine before each
    instruction), ``"call"`` (predicate key, found record or None) and
    ``"trace"`` (a line of text per instruction).
    """

    def __init__(self, image, hooks=None):
        if not isinstance(image, LinkedImage):
            image = link(image)
        self.linked = image
        self.code = image.code
        self.hooks = hooks or {}
        self.store = Store()
        self.reset()

    # ------------------------------------------------------------ setup
    def reset(self):
        img = self.linked.image
        if img.query is None:
            raise MachineError("image has no query")
        self.regs = [None] * max(self.linked.nregs, 1)
        self.nargs = 0
        self.P = img.labels[img.query]
        self.CP = None
        self.E = None
        self.B = None
        self.UI = 1
        self.UT = 1
        self.I = self.linked.root
        self.CI = self.linked.root
        self.CE = None
        self.S = None  # structure being read or written
        self.SI = 0
        self.mode = "read"
        self.steps = 0
        self.state = Outcome.RUNNING
        self.query_env = None
        self._next_addr = 1

    def top(self):
        """First free local stack address (above E, B and I)."""
        tops = [self._frame_top(self.E), self._frame_top(self.B), self._frame_top(self.I)]
        return max(tops)

    @staticmethod
    def _frame_top(frame):
        if frame is None:
            return 1
        return frame.addr + 1

    # ------------------------------------------------------------ registers
    def get(self, r):
        if r.kind == "Y":
            return self.E.slots[r.n]
        return self.regs[r.n]

    def set(self, r, value):
        if r.kind == "Y":
            self.E.slots[r.n] = value
        else:
            self.regs[r.n] = value

    # ------------------------------------------------------------ running
    def run(self, max_steps=None):
        """Run until success, final failure or the step limit."""
        if self.state is Outcome.SUCCEEDED:
            self.backtrack()
            if self.state is Outcome.FAILED:
                return self.state
            self.state = Outcome.RUNNING
        elif self.state is Outcome.FAILED:
            return self.state
        elif self.state is Outcome.STEP_LIMIT:
            self.state = Outcome.RUNNING
        budget = max_steps
        handlers = _HANDLERS
        code = self.code
        step_hook = self.hooks.get("step")
        trace = self.hooks.get("trace")
        while self.state is Outcome.RUNNING:
            if budget is not None:
                if budget <= 0:
                    self.state = Outcome.STEP_LIMIT
                    break
                budget -= 1
            if not isinstance(self.P, int) or not 0 <= self.P < len(code):
                raise MachineError(f"fault: P={self.P} outside the code area\n{self.dump()}")
            ins = code[self.P]
            if step_hook is not None:
                step_hook(self)
            if trace is not None:
                trace(self.trace_line(ins))
            self.steps += 1
            self.P += 1
            try:
                handlers[ins[0]](self, *ins[1:])
            except (KeyError, IndexError, AttributeError, TypeError, ctx.ContextError) as exc:
                raise MachineError(f"fault at {self.P - 1}: {exc}\n{self.dump()}") from exc
        return self.state

    def dump(self):
        lines = [f"P={self.P} CP={self.CP} UI={self.UI} UT={self.UT} steps={self.steps}",
                 f"E={self.E.addr if self.E else None} B={self.B.addr if self.B else None} "
                 f"I={self.I.addr} CI={self.CI.addr}",
                 "regs " + " ".join(f"{i}:{syn.print_term(r, 'serial', True)}"
                                    for i, r in enumerate(self.regs) if r is not None)]
        return "\n".join(lines)

    def trace_line(self, ins):
        text = ins[0]
        if len(ins) > 1:
            text += " " + ",".join(_show_operand(o) for o in ins[1:])
        b = self.B.addr if self.B is not None else 0
        return f"step={self.steps + 1} P={self.P} {text} UI={self.UI} I={self.I.addr} CI={self.CI.addr} B={b}"

    def current_answer(self):
        """Bindings of the query's answer variables at the last success."""
        if self.state is not Outcome.SUCCEEDED:
            raise MachineError(f"no current answer (machine is {self.state.value})")
        img = self.linked.image
        mapping = {}
        env = self.query_env
        return Answer(tuple(n for n, _ in img.answers),
                      {n: resolve(env.slots[s], mapping) for n, s in img.answers})

    def solutions(self, max_steps=None):
        """Generate answers; ``max_steps`` bounds the whole enumeration."""
        while True:
            state = self.run(None if max_steps is None else max_steps - self.steps)
            if state is Outcome.SUCCEEDED:
                yield self.current_answer()
            elif state is Outcome.STEP_LIMIT:
                raise StepLimitExceeded(self.steps)
            else:
                return

    # ------------------------------------------------------------ control
    def backtrack(self):
        b = self.B
        if b is None:
            self.state = Outcome.FAILED
            return
        self.UI, self.I, self.CI, self.CE = b.uip, b.ip, b.cip, b.cep
        self.P = b.bp

    def _restore(self, b):
        self.store.undo_to(b.mark)
        self.regs = b.regs[:]
        self.E = b.e
        self.CP = b.cp
        self.UI = b.uip
        self.I = b.ip
        self.CE = b.cep
        self.nargs = b.nargs

    def _pop_choice(self):
        self.B = self.B.prev
        self.store.boundary = self.B.mark[1] if self.B is not None else 0

    def _push_choice(self, alt):
        self.B = ChoicePoint(self, alt, self.top())
        self.store.boundary = self.store.top

    def _enter(self, key, continuation):
        self.CI = self.I
        code, rec = ctx.find(key, self.CI)
        hook = self.hooks.get("call")
        if hook is not None:
            hook(key, rec)
        if code is ctx.FAIL:
            return self.backtrack()
        if continuation is not None:
            self.CP = continuation
        self.nargs = key[1]
        self.CI = rec
        self.CE = rec.env
        self.P = code

    # ------------------------------------------------------------ unification helpers
    def _bind_const(self, t, c):
        t = deref(t)
        if isinstance(t, Var):
            self.store.bind_raw(t, c)
            return True
        return t == c

    def _globalize(self, t):
        t = deref(t)
        if isinstance(t, Var) and t.local:
            h = self.store.fresh_var(t.tag)
            self.store.bind_raw(t, h)
            return h
        return t

    def _start_struct(self, functor, arity, target):
        t = deref(target)
        if isinstance(t, Var):
            s = Struct(functor, [None] * arity)
            self.store.bind_raw(t, s)
            self.UT = t.tag
            self.S, self.SI, self.mode = s, 0, "write"
            return
        if isinstance(t, Struct) and t.functor == functor and len(t.args) == arity:
            self.S, self.SI, self.mode = t, 0, "read"
            return
        self.backtrack()

    def _next_arg(self):
        i = self.SI
        self.SI += 1
        return i


class StepLimitExceeded(Exception):
    pass


def _show_operand(op):
    if isinstance(op, tuple) and len(op) == 2:
        return f"{syn._quote(op[0])}/{op[1]}"
    if isinstance(op, Const):
        return syn._quote(op.name)
    if isinstance(op, ctx.ImplTable):
        return op.name
    return str(op)


# ---------------------------------------------------------------- instructions


def _put_variable(m, x, a):
    v = m.store.fresh_var(m.UI)
    m.set(x, v)
    m.regs[a.n] = v


def _put_value(m, v, a):
    m.regs[a.n] = m.get(v)


def _put_unsafe_value(m, y, a):
    m.regs[a.n] = m._globalize(m.get(y))


def _put_constant(m, c, a):
    m.regs[a.n] = c


def _put_structure(m, f, a):
    s = Struct(f[0], [None] * f[1])
    m.regs[a.n] = s
    m.S, m.SI, m.mode = s, 0, "write"


def _put_list(m, a):
    _put_structure(m, (syn.CONS, 2), a)


def _set_variable(m, x):
    v = m.store.fresh_var(m.UI)
    m.S.args[m._next_arg()] = v
    m.set(x, v)


def _set_value(m, v):
    m.S.args[m._next_arg()] = m.get(v)


def _set_local_value(m, v):
    t = m._globalize(m.get(v))
    m.S.args[m._next_arg()] = t


def _set_constant(m, c):
    m.S.args[m._next_arg()] = c


def _set_void(m, n):
    for _ in range(n):
        m.S.args[m._next_arg()] = m.store.fresh_var(m.UI)


def _get_variable(m, v, a):
    m.set(v, m.regs[a.n])


def _get_value(m, v, a):
    if not m.store.unify(m.get(v), m.regs[a.n]):
        m.backtrack()


def _get_constant(m, c, a):
    if not m._bind_const(m.regs[a.n], c):
        m.backtrack()


def _get_structure(m, f, r):
    m._start_struct(f[0], f[1], m.get(r))


def _get_list(m, a):
    _get_structure(m, (syn.CONS, 2), a)


def _unify_variable(m, v):
    i = m._next_arg()
    if m.mode == "read":
        m.set(v, m.S.args[i])
    else:
        w = m.store.fresh_var(m.UT)
        m.S.args[i] = w
        m.set(v, w)


def _unify_value(m, v, local=False):
    i = m._next_arg()
    if m.mode == "read":
        if not m.store.unify(m.get(v), m.S.args[i]):
            m.backtrack()
        return
    t = m._globalize(m.get(v)) if local else m.get(v)
    # any cycle would have to pass through the structure being filled
    if not m.store.admit(t, m.UT, occurs=m.S):
        m.backtrack()
        return
    m.S.args[i] = t


def _unify_local_value(m, v):
    _unify_value(m, v, local=True)


def _unify_constant(m, c):
    i = m._next_arg()
    if m.mode == "read":
        if not m._bind_const(m.S.args[i], c):
            m.backtrack()
    else:
        m.S.args[i] = c


def _unify_void(m, n):
    for _ in range(n):
        i = m._next_arg()
        if m.mode == "write":
            m.S.args[i] = m.store.fresh_var(m.UT)


def _allocate(m, n):
    store = m.store
    slots = [None] + [store.fresh_var(m.UI, local=True) for _ in range(n)]
    m.E = Env(slots, m.E, m.CP, m.top())
    if m.query_env is None:
        m.query_env = m.E


def _deallocate(m):
    m.CP = m.E.cp
    m.E = m.E.prev


def _call(m, key, n):
    m._enter(key, m.P)


def _execute(m, key):
    m._enter(key, None)


def _proceed(m):
    m.P = m.CP


def _try_me_else(m, alt):
    m._push_choice(alt)


def _retry_me_else(m, alt):
    m._restore(m.B)
    m.B.bp = alt


def _trust_me(m):
    m._restore(m.B)
    m._pop_choice()


def _try(m, target):
    m._push_choice(m.P)
    m.P = target


def _retry(m, target):
    m._restore(m.B)
    m.B.bp = m.P
    m.P = target


def _trust(m, target):
    m._restore(m.B)
    m._pop_choice()
    m.P = target


def _trust_ext(m, offset):
    b = m.B
    m._restore(b)
    m.CI = b.cip
    m._pop_choice()
    code, rec = ctx.next_clause_entry(m.CI, offset)
    if code is ctx.FAIL:
        return m.backtrack()
    m.CI = rec
    m.CE = rec.env
    m.P = code


def _jump(m, target):
    m.P = target


def _incr_universe(m):
    m.UI += 1


def _decr_universe(m):
    if __debug__:
        _check_universe_closed(m)
    m.UI -= 1


def _check_universe_closed(m):
    # by tag discipline no variable of an outer universe can have been bound
    # to a constant of the universe being left
    store = m.store
    for v in store.cells:
        if v.ref is not None and v.tag < m.UI:
            lower = store.check_tags(v.tag, v.ref)
            if not isinstance(lower, list):
                raise MachineError(f"universe {m.UI} constant escaped into #{v.serial}^{v.tag}")


def _set_univ_tag(m, y):
    m.set(y, m.store.fresh_gen_const(m.UI))


def _set_exist_tag(m, y):
    m.set(y, m.store.fresh_var(m.UI, local=True))


def _push_impl_point(m, table, n):
    m.I = ctx.push_impl_point(table, m.E, m.I, m.top())


def _pop_impl_point(m):
    m.I = ctx.pop_impl_point(m.I)


def _initialize(m, v, slot):
    m.set(v, m.CE.slots[slot])


def _true(m):
    pass


def _answer(m):
    m.state = Outcome.SUCCEEDED


_HANDLERS = {
    "put_variable": _put_variable, "put_value": _put_value, "put_unsafe_value": _put_unsafe_value,
    "put_constant": _put_constant, "put_structure": _put_structure, "put_list": _put_list,
    "set_variable": _set_variable, "set_value": _set_value, "set_local_value": _set_local_value,
    "set_constant": _set_constant, "set_void": _set_void,
    "get_variable": _get_variable, "get_value": _get_value, "get_constant": _get_constant,
    "get_structure": _get_structure, "get_list": _get_list,
    "unify_variable": _unify_variable, "unify_value": _unify_value,
    "unify_local_value": _unify_local_value, "unify_constant": _unify_constant,
    "unify_void": _unify_void,
    "allocate": _allocate, "deallocate": _deallocate, "call": _call, "execute": _execute,
    "proceed": _proceed,
    "try_me_else": _try_me_else, "retry_me_else": _retry_me_else, "trust_me": _trust_me,
    "try": _try, "retry": _retry, "trust": _trust, "jump": _jump,
    "incr_universe": _incr_universe, "decr_universe": _decr_universe,
    "set_univ_tag": _set_univ_tag, "set_exist_tag": _set_exist_tag,
    "push_impl_point": _push_impl_point, "pop_impl_point": _pop_impl_point,
    "initialize": _initialize, "trust_ext": _trust_ext, "true": _true, "answer": _answer,
}


def run_query(program, query, max_steps=None, hooks=None):
    """Compile ``program`` with ``query`` and return a machine ready to run."""
    if isinstance(query, str):
        query = syn.parse_query(query)
    image = compile_program(program, query)
    return Machine(image, hooks)


def solve(program, query, max_steps=None, hooks=None):
    return list(run_query(program, query, hooks=hooks).solutions(max_steps))
