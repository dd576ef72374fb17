"""Runtime terms and the tagged binding store.

Every variable and constant carries a universe tag.  A variable tagged
``i`` may only be bound to a term whose constants all have tags ``<= i``;
binding it also lowers any variable in that term whose tag exceeds ``i``.
Both bindings and tag changes are trailed, so backtracking restores the
exact earlier state.

Variable cells live in ``Store.cells`` in creation order; the length of
that list plays the role of the heap top.  A mark is ``(trail length,
heap top)``.
"""

from __future__ import annotations

from dataclasses import dataclass


class Var:
    __slots__ = ("ref", "tag", "serial", "local")

    def __init__(self, tag, serial, local=False):
        self.ref = None
        self.tag = tag
        self.serial = serial
        self.local = local

    def __repr__(self):
        state = "unbound" if self.ref is None else "bound"
        return f"Var(#{self.serial}^{self.tag} {state})"


@dataclass(frozen=True)
class Const:
    name: object
    tag: int = 1


@dataclass(frozen=True)
class GenConst:
    serial: int
    tag: int


class Struct:
    __slots__ = ("functor", "args")

    def __init__(self, functor, args):
        self.functor = functor
        self.args = args  # a list; filled in place while being built

    def __repr__(self):
        return f"Struct({self.functor!r}, {self.args!r})"


NIL = Const("[]")


def deref(t):
    while isinstance(t, Var) and t.ref is not None:
        t = t.ref
    return t


# failure reasons
OCCURS = "occurs-check"
TAG = "tag-conflict"
CLASH = "clash"


@dataclass
class Success:
    mark: tuple

    def __bool__(self):
        return True


@dataclass
class Failure:
    reason: str
    left: object = None
    right: object = None

    def __bool__(self):
        return False


class Store:
    def __init__(self):
        self.cells = []
        self.trail = []
        self.gen_serial = 0
        # cells at or above this heap position were created after the most
        # recent choice point and need no trailing
        self.boundary = 0
        self.listener = None

    # -- creation
    def fresh_var(self, tag, local=False):
        assert tag >= 1
        v = Var(tag, len(self.cells), local)
        self.cells.append(v)
        return v

    def fresh_gen_const(self, tag):
        self.gen_serial += 1
        return GenConst(self.gen_serial, tag)

    # -- marks
    def mark(self):
        return (len(self.trail), len(self.cells))

    @property
    def top(self):
        return len(self.cells)

    def undo_to(self, mark):
        trail_len, heap_top = mark if isinstance(mark, tuple) else (mark, None)
        trail = self.trail
        while len(trail) > trail_len:
            entry = trail.pop()
            if entry[0] == "bind":
                entry[1].ref = None
            else:
                entry[1].tag = entry[2]
        if heap_top is not None:
            del self.cells[heap_top:]

    # -- primitive mutations
    def _needs_trail(self, v):
        return v.serial < self.boundary

    def bind_raw(self, v, t, log=None):
        """Bind ``v`` to ``t`` without any checks."""
        v.ref = t
        if log is not None:
            log.append(("bind", v))
        elif self._needs_trail(v):
            self.trail.append(("bind", v))

    def set_tag(self, v, tag, log=None):
        if log is not None:
            log.append(("tag", v, v.tag))
        elif self._needs_trail(v):
            self.trail.append(("tag", v, v.tag))
        v.tag = tag

    def _commit(self, log):
        for entry in log:
            if self._needs_trail(entry[1]):
                self.trail.append(entry)

    @staticmethod
    def _revert(log):
        for entry in reversed(log):
            if entry[0] == "bind":
                entry[1].ref = None
            else:
                entry[1].tag = entry[2]

    # -- tag discipline
    def check_tags(self, tag, t, occurs=None):
        """Check that ``t`` may instantiate a variable tagged ``tag``.

        Returns the list of unbound variables in ``t`` whose tag must be
        lowered, or a ``Failure`` if ``t`` contains ``occurs`` (the cell
        being bound) or a constant tagged above ``tag``.
        """
        lower = []
        seen = set()
        stack = [t]
        while stack:
            x = deref(stack.pop())
            if x is None:
                continue
            if x is occurs:
                return Failure(OCCURS, occurs, t)
            if isinstance(x, Var):
                if x.tag > tag and id(x) not in seen:
                    seen.add(id(x))
                    lower.append(x)
            elif isinstance(x, (Const, GenConst)):
                if x.tag > tag:
                    return Failure(TAG, x, t)
            elif isinstance(x, Struct):
                stack.extend(reversed(x.args))
        return lower

    def bind(self, v, t, lower=(), log=None):
        self.bind_raw(v, t, log)
        for w in lower:
            self.set_tag(w, v.tag, log)

    def admit(self, t, tag, occurs=None):
        """Check ``t`` against ``tag`` and lower its variables; True on success."""
        lower = self.check_tags(tag, t, occurs)
        if isinstance(lower, Failure):
            self._report(lower)
            return False
        for w in lower:
            self.set_tag(w, tag)
        return True

    def _report(self, failure):
        if self.listener is not None:
            self.listener(failure)

    # -- unification
    def unify(self, a, b):
        mark = self.mark()
        log = []
        failure = self._unify(a, b, log)
        if failure is not None:
            self._revert(log)
            self._report(failure)
            return failure
        self._commit(log)
        return Success(mark)

    def _unify(self, a, b, log):
        stack = [(a, b)]
        while stack:
            x, y = stack.pop()
            x, y = deref(x), deref(y)
            if x is y:
                continue
            if isinstance(x, Var) and isinstance(y, Var):
                # the less constrained variable points at the more constrained
                # one; equal tags: younger points at older
                if (x.tag, x.serial) < (y.tag, y.serial):
                    x, y = y, x
                self.bind_raw(x, y, log)
            elif isinstance(x, Var) or isinstance(y, Var):
                if not isinstance(x, Var):
                    x, y = y, x
                lower = self.check_tags(x.tag, y, occurs=x)
                if isinstance(lower, Failure):
                    lower.left, lower.right = (x, lower.left) if lower.reason == TAG else (x, y)
                    return lower
                self.bind(x, y, lower, log)
            elif isinstance(x, Struct) and isinstance(y, Struct):
                if x.functor != y.functor or len(x.args) != len(y.args):
                    return Failure(CLASH, x, y)
                stack.extend(zip(reversed(x.args), reversed(y.args)))
            elif x != y:
                return Failure(CLASH, x, y)
        return None

    # -- inspection
    def snapshot(self):
        """Deterministic text dump of cells, tags and trail."""
        lines = [f"cells {len(self.cells)} gen {self.gen_serial} boundary {self.boundary}"]
        for v in self.cells:
            target = "unbound" if v.ref is None else "-> " + describe(v.ref)
            lines.append(f"#{v.serial} ^{v.tag}{' local' if v.local else ''} {target}")
        lines.append(f"trail {len(self.trail)}")
        for entry in self.trail:
            if entry[0] == "bind":
                lines.append(f"bind #{entry[1].serial}")
            else:
                lines.append(f"tag #{entry[1].serial} {entry[2]}")
        return "\n".join(lines)


def describe(t, depth=0):
    """Shallow structural description used by snapshots (no deref)."""
    if isinstance(t, Var):
        return f"#{t.serial}"
    if isinstance(t, Const):
        return f"{t.name}^{t.tag}"
    if isinstance(t, GenConst):
        return f"c!{t.tag}!{t.serial}"
    if isinstance(t, Struct):
        inner = ",".join("_" if a is None else describe(a, depth + 1) for a in t.args)
        return f"{t.functor}({inner})"
    return repr(t)


def resolve(t, mapping=None):
    """Detached deep copy of ``t``; unbound cells become fresh detached vars.

    The copy does not live in any store, so it survives backtracking.
    """
    mapping = {} if mapping is None else mapping
    t = deref(t)
    if isinstance(t, Var):
        if id(t) not in mapping:
            mapping[id(t)] = Var(t.tag, -1 - len(mapping))
        return mapping[id(t)]
    if isinstance(t, Struct):
        return Struct(t.functor, [resolve(a, mapping) for a in t.args])
    return t


def make_list(items, tail=NIL):
    out = tail
    for item in reversed(items):
        out = Struct(".", [item, out])
    return out
