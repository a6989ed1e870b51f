"""Reader for rule files.

Grammar (operator precedence as in standard logic languages)::

    program  := { clause }
    clause   := term(1200) "."
    term     := primary { infix-op term }
    primary  := number | Variable | atom [ "(" term(999) {"," term(999)} ")" ]
              | "(" term(1200) ")" | "[" [ term(999) {"," term(999)} ["|" term(999)] ] "]"
              | prefix-op term

Operators: ``:-`` (1200 xfx), ``;`` (1100 xfy), ``,`` (1000 xfy),
``\\+`` (900 fy), ``= \\= is < > =< >= =:= =\\=`` (700 xfx), ``+ -`` (500 yfx),
``* /`` (400 yfx), ``**`` (200 xfx), unary ``-`` (200 fy).
``%`` starts a comment running to end of line. Variables start with an
uppercase letter or ``_``; a lone ``_`` is a fresh variable at every
occurrence. Numbers are decimal, optionally with fraction and exponent.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .terms import NIL, ArityError, Atom, Compound, LogicError, Num, Term, Var

# builtin name -> accepted arities; user clauses may not define these names
BUILTINS: Dict[str, Tuple[int, ...]] = {
    "=": (2,),
    "\\=": (2,),
    "is": (2,),
    "<": (2,),
    ">": (2,),
    "=<": (2,),
    ">=": (2,),
    "=:=": (2,),
    "=\\=": (2,),
    "true": (0,),
    "fail": (0,),
    "not": (1,),
    "\\+": (1,),
    "findall": (3,),
    ",": (2,),
    ";": (2,),
}

INFIX = {
    ":-": (1200, "xfx"),
    ";": (1100, "xfy"),
    ",": (1000, "xfy"),
    "=": (700, "xfx"),
    "\\=": (700, "xfx"),
    "is": (700, "xfx"),
    "<": (700, "xfx"),
    ">": (700, "xfx"),
    "=<": (700, "xfx"),
    ">=": (700, "xfx"),
    "=:=": (700, "xfx"),
    "=\\=": (700, "xfx"),
    "+": (500, "yfx"),
    "-": (500, "yfx"),
    "*": (400, "yfx"),
    "/": (400, "yfx"),
    "**": (200, "xfx"),
}

PREFIX = {
    "-": (200, "fy"),
    "\\+": (900, "fy"),
}


class RuleSyntaxError(LogicError, SyntaxError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.msg = message
        self.lineno = line
        self.offset = column
        self.line = line
        self.column = column


@dataclass(frozen=True, slots=True)
class Literal:
    goal: Term
    negated: bool = False

    def __str__(self) -> str:
        return f"not({self.goal})" if self.negated else str(self.goal)


@dataclass(frozen=True)
class Clause:
    head: Term
    body: Tuple[Literal, ...] = ()

    def __post_init__(self):
        if not isinstance(self.head, (Atom, Compound)):
            raise ValueError(f"clause head must be an atom or compound, got {self.head}")

    @property
    def key(self) -> Tuple[str, int]:
        if isinstance(self.head, Atom):
            return (self.head.name, 0)
        return self.head.key

    @property
    def is_fact(self) -> bool:
        return not self.body

    def __str__(self) -> str:
        if not self.body:
            return f"{self.head}."
        return f"{self.head} :- {', '.join(str(lit) for lit in self.body)}."


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|%[^\n]*)
  | (?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<atom>[a-z][A-Za-z0-9_]*)
  | (?P<qatom>'(?:[^'\\]|\\.)*')
  | (?P<end>\.(?=\s|%|$))
  | (?P<punct>[(),|\[\]!;])
  | (?P<sym>[+\-*/\\^<>=~:?@#&$]+)
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int
    # True when the token immediately follows the previous one (no whitespace)
    glued: bool


def tokenize(text: str) -> List[_Tok]:
    toks: List[_Tok] = []
    pos, line, line_start = 0, 1, 0
    glued = False
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise RuleSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind == "ws":
            glued = False
        else:
            if kind == "qatom":
                kind, chunk_val = "atom", chunk[1:-1].replace("\\'", "'")
            else:
                chunk_val = chunk
            toks.append(_Tok(kind, chunk_val, line, pos - line_start + 1, glued))
            glued = True
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1, False))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.varmap: Dict[str, Var] = {}
        self.anon = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: Optional[_Tok] = None):
        tok = tok or self.tok
        return RuleSyntaxError(msg, tok.line, tok.col)

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text or self.tok.kind not in ("punct", "end"):
            raise self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def _op_name(self, tok: _Tok) -> Optional[str]:
        if tok.kind in ("sym", "atom") or (tok.kind == "punct" and tok.text in (",", ";")):
            return tok.text
        return None

    def parse_clause_term(self) -> Term:
        self.varmap = {}
        t = self.parse(1200)
        if self.tok.kind != "end":
            raise self.error(f"expected '.' at end of clause, found {self.tok.text or 'end of input'!r}")
        self.advance()
        return t

    def parse(self, max_prec: int) -> Term:
        left, left_prec = self.parse_primary(max_prec)
        while True:
            name = self._op_name(self.tok)
            if name is None or name not in INFIX:
                break
            prec, kind = INFIX[name]
            if prec > max_prec:
                break
            left_max = prec if kind == "yfx" else prec - 1
            if left_prec > left_max:
                break
            right_max = prec if kind == "xfy" else prec - 1
            self.advance()
            right = self.parse(right_max)
            left, left_prec = Compound(name, (left, right)), prec
        return left

    def parse_arglist(self) -> Tuple[Term, ...]:
        self.expect("(")
        args = [self.parse(999)]
        while self.tok.kind == "punct" and self.tok.text == ",":
            self.advance()
            args.append(self.parse(999))
        self.expect(")")
        return tuple(args)

    def parse_primary(self, max_prec: int) -> Tuple[Term, int]:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text)), 0
        if tok.kind == "var":
            self.advance()
            if tok.text == "_":
                self.anon += 1
                return Var(f"_G{self.anon}"), 0
            v = self.varmap.get(tok.text)
            if v is None:
                v = self.varmap[tok.text] = Var(tok.text)
            return v, 0
        if tok.kind == "punct" and tok.text == "(":
            self.advance()
            t = self.parse(1200)
            self.expect(")")
            return t, 0
        if tok.kind == "punct" and tok.text == "[":
            return self.parse_list(), 0
        if tok.kind in ("atom", "sym") or (tok.kind == "punct" and tok.text in ("!", ";")):
            self.advance()
            name = tok.text
            nxt = self.tok
            if nxt.kind == "punct" and nxt.text == "(" and nxt.glued:
                return Compound(name, self.parse_arglist()), 0
            if name in PREFIX and self._starts_term(nxt):
                prec, kind = PREFIX[name]
                if prec > max_prec:
                    prec = 999
                arg_max = prec if kind == "fy" else prec - 1
                if name == "-" and nxt.kind == "num" and nxt.glued:
                    self.advance()
                    return Num(-float(nxt.text)), 0
                arg = self.parse(arg_max)
                return Compound(name, (arg,)), prec
            prec = INFIX.get(name, (0, ""))[0]
            return Atom(name), (prec if prec <= max_prec else 0)
        raise self.error(f"unexpected {tok.text or 'end of input'!r}")

    def _starts_term(self, tok: _Tok) -> bool:
        if tok.kind in ("num", "var", "atom"):
            return True
        if tok.kind == "punct" and tok.text in ("(", "["):
            return True
        if tok.kind == "sym" and tok.text not in INFIX:
            return True
        return tok.kind == "sym" and tok.text in PREFIX

    def parse_list(self) -> Term:
        self.expect("[")
        if self.tok.kind == "punct" and self.tok.text == "]":
            self.advance()
            return NIL
        items = [self.parse(999)]
        while self.tok.kind == "punct" and self.tok.text == ",":
            self.advance()
            items.append(self.parse(999))
        tail: Term = NIL
        if self.tok.kind == "punct" and self.tok.text == "|":
            self.advance()
            tail = self.parse(999)
        self.expect("]")
        for item in reversed(items):
            tail = Compound(".", (item, tail))
        return tail


def _check_goal(goal: Term, tok_line: int, tok_col: int) -> None:
    if isinstance(goal, (Num,)):
        raise RuleSyntaxError(f"number {goal} used as a goal", tok_line, tok_col)
    if isinstance(goal, Var):
        return
    name, arity = (goal.name, 0) if isinstance(goal, Atom) else goal.key
    if name in BUILTINS and arity not in BUILTINS[name]:
        raise ArityError(f"builtin {name} used with arity {arity} (line {tok_line})")
    if name in ("not", "\\+", ",", ";") and arity in BUILTINS[name]:
        for a in goal.args:
            _check_goal(a, tok_line, tok_col)


def body_alternatives(body: Term) -> List[List[Literal]]:
    """Flatten a clause body into disjunctive normal form."""
    if isinstance(body, Compound) and body.key == (",", 2):
        return [x + y for x in body_alternatives(body.args[0]) for y in body_alternatives(body.args[1])]
    if isinstance(body, Compound) and body.key == (";", 2):
        return body_alternatives(body.args[0]) + body_alternatives(body.args[1])
    if isinstance(body, Compound) and body.key in (("not", 1), ("\\+", 1)):
        return [[Literal(body.args[0], True)]]
    if body == Atom("true"):
        return [[]]
    return [[Literal(body, False)]]


def clauses_from_term(t: Term, line: int = 0, col: int = 0) -> List[Clause]:
    if isinstance(t, Compound) and t.key == (":-", 2):
        head, body = t.args
    else:
        head, body = t, Atom("true")
    if not isinstance(head, (Atom, Compound)):
        raise RuleSyntaxError(f"clause head must be an atom or compound, got {head}", line, col)
    name = head.name if isinstance(head, Atom) else head.functor
    if name in BUILTINS or name == ":-":
        raise RuleSyntaxError(f"cannot redefine builtin {name}", line, col)
    _check_goal(body, line, col)
    return [Clause(head, tuple(alt)) for alt in body_alternatives(body)]


def parse_clauses(text: str) -> List[Clause]:
    p = _Parser(text)
    out: List[Clause] = []
    while p.tok.kind != "eof":
        start = p.tok
        t = p.parse_clause_term()
        out.extend(clauses_from_term(t, start.line, start.col))
    return out


def parse_term(text: str) -> Term:
    """Parse a single term; a trailing '.' is optional."""
    p = _Parser(text)
    t = p.parse(1200)
    if p.tok.kind == "end":
        p.advance()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r} after term")
    return t
