"""The dynamic clause database.

The program in force at any moment is a chain of implication point
records.  Each record adds one unit of clauses (the antecedent of an
implication goal) in front of the program represented by its parent;
the root record holds the global program.

A record keeps, for every predicate its unit defines, the place to
continue once the unit's own clauses for that predicate are exhausted
(the ``nc`` access vector).  That vector is filled in when the record is
created, by searching the parent chain.

``code`` is opaque here: the interpreter stores tuples of clause ASTs,
the abstract machine stores code addresses.
"""

from __future__ import annotations

LINEAR_LOOKUP_LIMIT = 8


class _Fail:
    def __repr__(self):
        return "FAIL"


FAIL = _Fail()


class ContextError(Exception):
    pass


class ImplTable:
    """Static description of one unit: size, lookup, offset numbers."""

    def __init__(self, entries, name=None):
        entries = list(entries)
        keys = [k for k, _ in entries]
        if len(set(keys)) != len(keys):
            raise ContextError("duplicate predicate in implication table")
        self.name = name
        self.entries = entries
        self.offsets = {k: i + 1 for i, k in enumerate(keys)}
        self._hash = dict(entries) if len(entries) > LINEAR_LOOKUP_LIMIT else None

    @property
    def size(self):
        return len(self.entries)

    @property
    def strategy(self):
        return "hash" if self._hash is not None else "linear"

    def keys(self):
        return [k for k, _ in self.entries]

    def lookup(self, key):
        if self._hash is not None:
            return self._hash.get(key)
        for k, code in self.entries:
            if k == key:
                return code
        return None

    def with_code(self, mapping):
        """Copy of this table with code values passed through ``mapping``."""
        return ImplTable([(k, mapping(c)) for k, c in self.entries], self.name)

    def __repr__(self):
        return f"ImplTable({self.name or ''} {self.keys()})"


class GlobalTable(ImplTable):
    """The global program: always looked up through a hash map."""

    def __init__(self, entries, name="global"):
        super().__init__(entries, name)
        self._hash = dict(self.entries)


class ImplicationPointRecord:
    __slots__ = ("table", "env", "parent", "nc", "addr", "depth")

    def __init__(self, table, env, parent, addr=0):
        self.table = table  # IC
        self.env = env  # E'
        self.parent = parent  # IP
        self.addr = addr
        self.depth = 0 if parent is None else parent.depth + 1
        self.nc = [] if parent is None else [find(k, parent) for k in table.keys()]

    @property
    def is_root(self):
        return self.parent is None

    def __repr__(self):
        return f"<record {self.addr} {self.table!r}>"


def make_root(global_table, env=None):
    return ImplicationPointRecord(global_table, env, None)


def find(key, record):
    """Nearest definition of ``key`` along the chain from ``record``."""
    while record is not None:
        code = record.table.lookup(key)
        if code is not None:
            return (code, record)
        record = record.parent
    return (FAIL, None)


def push_impl_point(table, env, current, addr=0):
    return ImplicationPointRecord(table, env, current, addr)


def pop_impl_point(current):
    if current.parent is None:
        raise ContextError("pop_impl_point on the root record")
    return current.parent


def lookup_procedure(key, current):
    """``(code, record, E')`` of the nearest definition, or None."""
    code, record = find(key, current)
    if code is FAIL:
        return None
    return (code, record, record.env)


def next_clause_entry(record, offset):
    if not 1 <= offset <= len(record.nc):
        raise ContextError(f"offset {offset} out of range for {record!r}")
    return record.nc[offset - 1]


def chain(key, current):
    """All ``(code, record)`` pairs for ``key``, nearest first, via ``nc``."""
    out = []
    code, record = find(key, current)
    while code is not FAIL:
        out.append((code, record))
        if record.parent is None:
            break
        code, record = next_clause_entry(record, record.table.offsets[key])
    return out


def records(current):
    out = []
    while current is not None:
        out.append(current)
        current = current.parent
    return out


class Context:
    """A movable handle on the record chain with optional event hooks."""

    def __init__(self, global_table, listener=None):
        self.root = make_root(global_table)
        self.current = self.root
        self.listener = listener
        self.pushes = 0

    def _emit(self, event, *args):
        if self.listener is not None:
            self.listener(event, *args)

    def push(self, table, env=None):
        self.pushes += 1
        self.current = push_impl_point(table, env, self.current, self.pushes)
        self._emit("push", self.current)
        return self.current

    def pop(self):
        old = self.current
        self.current = pop_impl_point(old)
        self._emit("pop", old)
        return self.current

    def lookup(self, key):
        found = lookup_procedure(key, self.current)
        self._emit("lookup", key, found)
        return found

    def save(self):
        return self.current

    def restore(self, saved):
        self.current = saved
        self._emit("restore", saved)
        return saved
