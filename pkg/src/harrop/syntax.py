"""Surface syntax for first-order hereditary Harrop programs.

Goals and clauses are parsed into small immutable ASTs.  The grammar is
Prolog-like, extended with ``forall X G``, ``exists X G`` and the
implication goal ``(D1, ..., Dn) => G``.  Operator precedence, loosest
first: ``:-``, ``;``, ``=>`` (right associative), ``,``.  A quantifier
takes everything to its right up to the enclosing parenthesis.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

NIL = "[]"
CONS = "."


class HarropSyntaxError(Exception):
    def __init__(self, message, line=0, column=0):
        super().__init__(f"{line}:{column}: {message}")
        self.message = message
        self.line = line
        self.column = column


# ---------------------------------------------------------------- terms


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    name: object  # str or int


@dataclass(frozen=True)
class Struct:
    functor: str
    args: tuple

    @property
    def arity(self):
        return len(self.args)


def make_list(items, tail=None):
    out = tail if tail is not None else Const(NIL)
    for item in reversed(items):
        out = Struct(CONS, (item, out))
    return out


def term_key(term):
    """Predicate key ``(name, arity)`` of an atom."""
    if isinstance(term, Struct):
        return (term.functor, len(term.args))
    return (term.name, 0)


def term_vars(term, acc=None):
    acc = [] if acc is None else acc
    if isinstance(term, Var):
        if term.name not in acc:
            acc.append(term.name)
    elif isinstance(term, Struct):
        for a in term.args:
            term_vars(a, acc)
    return acc


# ---------------------------------------------------------------- goals


@dataclass(frozen=True)
class Atom:
    term: object


@dataclass(frozen=True)
class And:
    left: object
    right: object


@dataclass(frozen=True)
class Or:
    left: object
    right: object


@dataclass(frozen=True)
class Exists:
    var: str
    body: object


@dataclass(frozen=True)
class Forall:
    var: str
    body: object


@dataclass(frozen=True)
class Implies:
    clauses: tuple
    body: object


@dataclass(frozen=True)
class TrueGoal:
    pass


@dataclass(frozen=True)
class Clause:
    """A program clause ``forall xs (body => head)``.

    ``explicit`` is the written quantifier prefix, ``implicit`` the
    clause-level quantification added for top-level clauses, ``free``
    the variables left to the enclosing scope.
    """

    head: object
    body: object = None
    explicit: tuple = ()
    implicit: tuple = ()
    free: tuple = ()

    @property
    def quantified(self):
        return self.explicit + self.implicit

    @property
    def key(self):
        return term_key(self.head)


@dataclass(frozen=True)
class Program:
    clauses: tuple = ()


@dataclass(frozen=True)
class Query:
    goal: object
    answer_vars: tuple = ()


def goal_free_vars(goal, bound=frozenset(), acc=None):
    """Free variables of a goal in order of first occurrence."""
    acc = [] if acc is None else acc

    def add(names):
        for n in names:
            if n not in bound and n not in acc:
                acc.append(n)

    if isinstance(goal, Atom):
        add(term_vars(goal.term))
    elif isinstance(goal, (And, Or)):
        goal_free_vars(goal.left, bound, acc)
        goal_free_vars(goal.right, bound, acc)
    elif isinstance(goal, (Exists, Forall)):
        goal_free_vars(goal.body, bound | {goal.var}, acc)
    elif isinstance(goal, Implies):
        for c in goal.clauses:
            clause_free_vars(c, bound, acc)
        goal_free_vars(goal.body, bound, acc)
    return acc


def clause_free_vars(clause, bound=frozenset(), acc=None):
    acc = [] if acc is None else acc
    inner = bound | set(clause.quantified)
    for n in term_vars(clause.head):
        if n not in inner and n not in acc:
            acc.append(n)
    if clause.body is not None:
        goal_free_vars(clause.body, inner, acc)
    return acc


# ---------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>%[^\n]*)
  | (?P<neck>:-)
  | (?P<arrow>=>)
  | (?P<int>\d+)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<name>[a-z][A-Za-z0-9_]*)
  | (?P<quoted>'(?:[^'\\\n]|\\.|'')*')
  | (?P<punct>[()\[\],;|.])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str
    value: object
    line: int
    column: int
    start: int = 0
    end: int = 0


def tokenize(text):
    tokens = []
    pos, line, col = 0, 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise HarropSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        raw = m.group()
        span = (m.start(), m.end())
        if kind == "int":
            tokens.append(Token("int", int(raw), line, col, *span))
        elif kind == "quoted":
            body = re.sub(r"\\(.)|''", lambda g: g.group(1) or "'", raw[1:-1])
            tokens.append(Token("name", body, line, col, *span))
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind if kind != "punct" else raw, raw, line, col, *span))
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            col = len(raw) - raw.rfind("\n")
        else:
            col += len(raw)
        pos = m.end()
    tokens.append(Token("eof", None, line, col, len(text) + 1, len(text) + 1))
    return tokens


# ---------------------------------------------------------------- parser
#
# The parser first builds a neutral operator tree, then converts it into
# a goal or a clause depending on where it occurs.


@dataclass(frozen=True)
class _Op:
    op: str
    left: object
    right: object
    pos: tuple = field(compare=False)


@dataclass(frozen=True)
class _Quant:
    kind: str
    var: str
    body: object
    pos: tuple = field(compare=False)


@dataclass(frozen=True)
class _Leaf:
    term: object  # a term, or None for ``true``
    pos: tuple = field(compare=False)


class _Parser:
    def __init__(self, text):
        self.tokens = tokenize(text)
        self.i = 0
        self.anon = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def error(self, message, tok=None):
        tok = tok or self.tok
        return HarropSyntaxError(message, tok.line, tok.column)

    def peek(self):
        # the token after the current one; eof repeats at the end
        return self.tokens[min(self.i + 1, len(self.tokens) - 1)]

    def advance(self):
        tok = self.tok
        self.i += 1
        return tok

    def expect(self, kind):
        if self.tok.kind != kind:
            found = "end of input" if self.tok.kind == "eof" else repr(self.tok.value)
            raise self.error(f"expected {kind!r}, found {found}")
        return self.advance()

    def at_eof(self):
        return self.tok.kind == "eof"

    # operator layer
    def expr(self):
        left = self.disj()
        if self.tok.kind == "neck":
            tok = self.advance()
            right = self.disj()
            if self.tok.kind == "neck":
                raise self.error("':-' is not associative")
            return _Op(":-", left, right, (tok.line, tok.column))
        return left

    def disj(self):
        left = self.impl()
        if self.tok.kind == ";":
            tok = self.advance()
            return _Op(";", left, self.disj(), (tok.line, tok.column))
        return left

    def impl(self):
        left = self.conj()
        if self.tok.kind == "arrow":
            tok = self.advance()
            return _Op("=>", left, self.impl(), (tok.line, tok.column))
        return left

    def conj(self):
        left = self.unary()
        if self.tok.kind == ",":
            tok = self.advance()
            return _Op(",", left, self.conj(), (tok.line, tok.column))
        return left

    def unary(self):
        tok = self.tok
        if tok.kind == "name" and tok.value in ("forall", "exists") and self.peek().kind == "var":
            self.advance()
            var = self.advance()
            if var.value == "_":
                raise self.error("cannot quantify the anonymous variable", var)
            return _Quant(tok.value, var.value, self.expr(), (tok.line, tok.column))
        if tok.kind == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        nxt = self.peek()
        if tok.kind == "name" and tok.value == "true" and not (nxt.kind == "(" and nxt.start == tok.end):
            self.advance()
            return _Leaf(None, (tok.line, tok.column))
        return _Leaf(self.term(), (tok.line, tok.column))

    # term layer
    def term(self):
        tok = self.tok
        if tok.kind == "var":
            self.advance()
            if tok.value == "_":
                self.anon += 1
                return Var(f"_#{self.anon}")
            return Var(tok.value)
        if tok.kind == "int":
            self.advance()
            return Const(tok.value)
        if tok.kind == "name":
            self.advance()
            if self.tok.kind == "(" and self.tok.start == tok.end:
                self.advance()
                args = [self.term()]
                while self.tok.kind == ",":
                    self.advance()
                    args.append(self.term())
                self.expect(")")
                return Struct(tok.value, tuple(args))
            return Const(tok.value)
        if tok.kind == "[":
            self.advance()
            if self.tok.kind == "]":
                self.advance()
                return Const(NIL)
            items = [self.term()]
            while self.tok.kind == ",":
                self.advance()
                items.append(self.term())
            tail = None
            if self.tok.kind == "|":
                self.advance()
                tail = self.term()
            self.expect("]")
            return make_list(items, tail)
        found = "end of input" if tok.kind == "eof" else repr(tok.value)
        raise self.error(f"expected a term, found {found}")


# ---------------------------------------------------------------- conversion


def _err(message, node):
    line, col = node.pos
    return HarropSyntaxError(message, line, col)


def _to_goal(node):
    if isinstance(node, _Leaf):
        t = node.term
        if t is None:
            return TrueGoal()
        if isinstance(t, Var):
            raise _err(f"a variable ({_show_var(t.name)}) is not a goal", node)
        if isinstance(t, Const) and isinstance(t.name, int):
            raise _err(f"an integer ({t.name}) is not a goal", node)
        return Atom(t)
    if isinstance(node, _Quant):
        cls = Forall if node.kind == "forall" else Exists
        return cls(node.var, _to_goal(node.body))
    if node.op == ",":
        return And(_to_goal(node.left), _to_goal(node.right))
    if node.op == ";":
        return Or(_to_goal(node.left), _to_goal(node.right))
    if node.op == "=>":
        return Implies(tuple(_to_clauses(node.left)), _to_goal(node.right))
    raise _err("clause syntax in query position", node)


def _to_clauses(node):
    if isinstance(node, _Op) and node.op == ",":
        return _to_clauses(node.left) + _to_clauses(node.right)
    return [_to_clause(node)]


def _to_clause(node):
    prefix = []
    while isinstance(node, _Quant):
        if node.kind != "forall":
            raise _err("an existential quantifier cannot govern a clause", node)
        prefix.append(node.var)
        node = node.body
    if isinstance(node, _Op) and node.op == ":-":
        head, body = _to_head(node.left), _to_goal(node.right)
    elif isinstance(node, _Op):
        raise _err(f"'{node.op}' cannot form a program clause", node)
    else:
        head, body = _to_head(node), None
    if isinstance(body, TrueGoal):
        body = None
    return Clause(head, body, tuple(prefix))


def _to_head(node):
    if isinstance(node, _Leaf) and node.term is not None:
        t = node.term
        if isinstance(t, Var):
            raise _err("non-rigid clause head", node)
        if isinstance(t, Const) and isinstance(t.name, int):
            raise _err("an integer cannot head a clause", node)
        return t
    if isinstance(node, _Leaf):
        raise _err("'true' cannot head a clause", node)
    raise _err("clause head must be an atom", node)


def _close(clause, bound, toplevel):
    """Fill in free variables (and implicit quantifiers at top level)."""
    body = _close_goal(clause.body, bound | set(clause.explicit)) if clause.body is not None else None
    clause = Clause(clause.head, body, clause.explicit)
    free = tuple(clause_free_vars(clause))
    if toplevel:
        return Clause(clause.head, body, clause.explicit, free, ())
    return Clause(clause.head, body, clause.explicit, (), free)


def _close_goal(goal, bound):
    if isinstance(goal, (And, Or)):
        return type(goal)(_close_goal(goal.left, bound), _close_goal(goal.right, bound))
    if isinstance(goal, (Exists, Forall)):
        return type(goal)(goal.var, _close_goal(goal.body, bound | {goal.var}))
    if isinstance(goal, Implies):
        clauses = tuple(_close(c, bound, False) for c in goal.clauses)
        return Implies(clauses, _close_goal(goal.body, bound))
    return goal


def _check_closed(clause, line, col):
    if clause.free:
        names = ", ".join(_show_var(n) for n in clause.free)
        raise HarropSyntaxError(f"open top-level clause (free: {names})", line, col)


def parse_program(text):
    p = _Parser(text)
    clauses = []
    while not p.at_eof():
        start = p.tok
        p.anon = 0
        node = p.expr()
        p.expect(".")
        clause = _close(_to_clause(node), frozenset(), True)
        _check_closed(clause, start.line, start.column)
        clauses.append(clause)
    return Program(tuple(clauses))


def parse_query(text):
    p = _Parser(text)
    if p.at_eof():
        raise p.error("empty query")
    node = p.expr()
    # the final period is optional in queries
    if not p.at_eof():
        p.expect(".")
    if not p.at_eof():
        raise p.error("extra input after the query")
    goal = _close_goal(_to_goal(node), frozenset())
    answer = tuple(n for n in goal_free_vars(goal) if not n.startswith("_"))
    return Query(goal, answer)


def parse_goal(text):
    return parse_query(text).goal


def check_program(program):
    """Validate a programmatically built program (parsed ones already are)."""
    for clause in program.clauses:
        if isinstance(clause.head, Var):
            raise HarropSyntaxError("non-rigid clause head")
        missing = [n for n in clause_free_vars(clause) if n not in clause.implicit]
        if missing:
            raise HarropSyntaxError("open top-level clause (free: %s)" % ", ".join(missing))
    return program


# ---------------------------------------------------------------- printing

_PLAIN_NAME = re.compile(r"[a-z][A-Za-z0-9_]*\Z")


def _quote(name):
    if isinstance(name, int) or name == NIL or _PLAIN_NAME.match(name):
        return str(name)
    return "'" + name.replace("\\", "\\\\").replace("'", "\\'") + "'"


def _show_var(name):
    return "_" if name.startswith("_#") else name


def format_ast_term(term, var_fmt=None):
    """Print an AST term; ``var_fmt`` may override how variables print."""
    if isinstance(term, Var):
        return var_fmt(term.name) if var_fmt else _show_var(term.name)
    if isinstance(term, Const):
        return _quote(term.name)
    if term.functor == CONS and len(term.args) == 2:
        items, tail = [], term
        while isinstance(tail, Struct) and tail.functor == CONS and len(tail.args) == 2:
            items.append(format_ast_term(tail.args[0], var_fmt))
            tail = tail.args[1]
        body = ",".join(items)
        if isinstance(tail, Const) and tail.name == NIL:
            return f"[{body}]"
        return f"[{body}|{format_ast_term(tail, var_fmt)}]"
    return f"{_quote(term.functor)}({', '.join(format_ast_term(a, var_fmt) for a in term.args)})"


def format_goal(goal, term_fmt=format_ast_term):
    if isinstance(goal, Atom):
        return term_fmt(goal.term)
    if isinstance(goal, TrueGoal):
        return "true"
    if isinstance(goal, And):
        return f"({format_goal(goal.left, term_fmt)}, {format_goal(goal.right, term_fmt)})"
    if isinstance(goal, Or):
        return f"({format_goal(goal.left, term_fmt)} ; {format_goal(goal.right, term_fmt)})"
    if isinstance(goal, (Exists, Forall)):
        kw = "forall" if isinstance(goal, Forall) else "exists"
        return f"({kw} {goal.var} {format_goal(goal.body, term_fmt)})"
    if isinstance(goal, Implies):
        ds = ", ".join(f"({format_clause(c, term_fmt)})" for c in goal.clauses)
        return f"(({ds}) => {format_goal(goal.body, term_fmt)})"
    raise TypeError(f"not a goal: {goal!r}")


def format_clause(clause, term_fmt=format_ast_term):
    text = term_fmt(clause.head)
    if clause.body is not None:
        text = f"{text} :- {format_goal(clause.body, term_fmt)}"
    if clause.explicit:
        if clause.body is not None:
            text = f"({text})"
        prefix = "".join(f"forall {v} " for v in clause.explicit)
        text = prefix + text
    return text


def format_program(program):
    return "".join(format_clause(c) + ".\n" for c in program.clauses)


def print_term(term, names=None, show_tags=False):
    """Print a runtime term (see ``harrop.store``) after dereferencing.

    ``names`` maps unbound variable cells to their ``_Gn`` numbers; pass
    the same dict for every binding of one answer to keep numbering stable.
    Passing ``names="serial"`` numbers variables by their store serial.
    """
    from .store import GenConst, Struct as RStruct, Var as RVar, deref
    from .store import Const as RConst

    by_serial = names == "serial"
    names = {} if names is None or by_serial else names

    def show(t):
        t = deref(t)
        if isinstance(t, RVar):
            if by_serial:
                text = f"_G{t.serial}"
            else:
                if id(t) not in names:
                    names[id(t)] = len(names) + 1
                text = f"_G{names[id(t)]}"
            return f"{text}^{t.tag}" if show_tags else text
        if isinstance(t, RConst):
            text = _quote(t.name)
            return f"{text}^{t.tag}" if show_tags else text
        if isinstance(t, GenConst):
            text = f"c!{t.tag}!{t.serial}"
            return f"{text}^{t.tag}" if show_tags else text
        if isinstance(t, RStruct):
            if t.functor == CONS and len(t.args) == 2:
                items, tail = [], t
                while isinstance(tail, RStruct) and tail.functor == CONS and len(tail.args) == 2:
                    items.append(show(tail.args[0]))
                    tail = deref(tail.args[1])
                body = ",".join(items)
                if isinstance(tail, RConst) and tail.name == NIL:
                    return f"[{body}]"
                return f"[{body}|{show(tail)}]"
            return f"{_quote(t.functor)}({', '.join(show(a) for a in t.args)})"
        return "<?>"

    return show(term)
