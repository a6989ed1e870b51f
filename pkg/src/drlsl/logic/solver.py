"""Depth-first SLD resolution with negation-as-failure.

The solver is an explicit choice-point machine rather than nested
generators, so deep derivations never touch the interpreter's recursion
limit. Clauses are tried in source order, rule-base clauses before
fact-store facts for the same predicate.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Tuple

from .parser import BUILTINS, Clause, parse_clauses
from .terms import (
    Atom,
    Compound,
    DepthExceeded,
    EvaluationError,
    FactStore,
    NonGroundArithmetic,
    NonGroundNegation,
    Num,
    Substitution,
    Term,
    Var,
    fresh_serial,
    is_ground,
    make_list,
    rename,
    resolve,
    term_key,
    undo,
    unify,
    variables,
    walk,
)

DEFAULT_DEPTH_LIMIT = 512


_BUILTIN_KEYS = frozenset((name, n) for name, arities in BUILTINS.items() for n in arities)


class RuleBase:
    """Immutable, ordered collection of clauses indexed by predicate."""

    def __init__(self, clauses: Iterable[Clause] = ()):
        self._clauses: Tuple[Clause, ...] = tuple(clauses)
        index: Dict[Tuple[str, int], list] = {}
        for c in self._clauses:
            name = c.key[0]
            if name in BUILTINS:
                raise ValueError(f"clause redefines builtin {name}")
            has_vars = bool(variables(c.head)) or any(variables(lit.goal) for lit in c.body)
            body = tuple((lit.goal, lit.negated) for lit in c.body)
            index.setdefault(c.key, []).append((c.head, body, has_vars))
        self._index = {k: tuple(v) for k, v in index.items()}

    @property
    def clauses(self) -> Tuple[Clause, ...]:
        return self._clauses

    def clauses_for(self, key: Tuple[str, int]):
        """Compiled ``(head, ((goal, negated), ...), has_vars)`` entries in source order."""
        return self._index.get(key, ())

    def predicates(self):
        return tuple(self._index)

    def extend(self, clauses: Iterable[Clause]) -> "RuleBase":
        return RuleBase(self._clauses + tuple(clauses))

    def __len__(self) -> int:
        return len(self._clauses)

    def __str__(self) -> str:
        return "\n".join(str(c) for c in self._clauses)


def parse_rules(text: str) -> RuleBase:
    return RuleBase(parse_clauses(text))


# goal lists are cons cells (goal, negated, depth, rest), the empty list is None
_FAIL = object()


def _arith(t: Term, b: Substitution) -> float:
    while type(t) is Var:
        nxt = b.get(t)
        if nxt is None:
            raise NonGroundArithmetic(f"unbound variable {t} in arithmetic")
        t = nxt
    tt = type(t)
    if tt is Num:
        return t.value
    if tt is Compound:
        f, args = t.functor, t.args
        if len(args) == 2:
            x, y = _arith(args[0], b), _arith(args[1], b)
            if f == "+":
                return x + y
            if f == "-":
                return x - y
            if f == "*":
                return x * y
            if f == "/":
                if y == 0:
                    raise EvaluationError("division by zero")
                return x / y
            if f == "**":
                try:
                    return x**y
                except (OverflowError, ZeroDivisionError) as exc:
                    raise EvaluationError(f"{x} ** {y}: {exc}") from None
            if f == "min":
                return min(x, y)
            if f == "max":
                return max(x, y)
        elif len(args) == 1:
            x = _arith(args[0], b)
            if f == "-":
                return -x
            if f == "abs":
                return abs(x)
            if f == "sqrt":
                if x < 0:
                    raise EvaluationError("sqrt of a negative number")
                return math.sqrt(x)
    raise EvaluationError(f"cannot evaluate {resolve(t, b)} arithmetically")


_COMPARE: Dict[str, Callable[[float, float], bool]] = {
    "<": lambda x, y: x < y,
    ">": lambda x, y: x > y,
    "=<": lambda x, y: x <= y,
    ">=": lambda x, y: x >= y,
    "=:=": lambda x, y: x == y,
    "=\\=": lambda x, y: x != y,
}


class Solver:
    def __init__(self, rb: RuleBase, fs: Optional[FactStore] = None, depth_limit: int = DEFAULT_DEPTH_LIMIT):
        if depth_limit <= 0:
            raise ValueError("depth_limit must be positive")
        self.rb = rb
        self.fs = fs if fs is not None else FactStore()
        self.depth_limit = depth_limit
        self.bindings: Substitution = {}
        self.trail: List[Var] = []

    def solve(self, goal: Term) -> Iterator[Substitution]:
        query_vars = [v for v in variables(goal) if not v.name.startswith("_")]
        mark = len(self.trail)
        try:
            for _ in self._run((goal, False, 0, None)):
                yield {v: resolve(v, self.bindings) for v in query_vars}
        finally:
            undo(self.bindings, self.trail, mark)

    def _provable(self, goal: Term, depth: int) -> bool:
        mark = len(self.trail)
        gen = self._run((goal, False, depth, None))
        try:
            for _ in gen:
                return True
            return False
        finally:
            gen.close()
            undo(self.bindings, self.trail, mark)

    def _run(self, goals) -> Iterator[None]:
        stack: list = []
        step = self._step
        while True:
            if goals is None:
                yield None
                goals = _FAIL
            if goals is _FAIL:
                goals = self._backtrack(stack)
                if goals is _FAIL:
                    return
                continue
            goals = step(goals, stack)

    def _backtrack(self, stack: list):
        b, trail = self.bindings, self.trail
        while stack:
            cp = stack[-1]
            undo(b, trail, cp[0])
            goals = self._try(cp)
            if cp[5] >= len(cp[4]):
                stack.pop()
            if goals is not _FAIL:
                return goals
        return _FAIL

    def _try(self, cp):
        # cp = [trail_mark, goal, rest, depth, candidates, next_index, is_alt]
        _, goal, rest, depth, cands, _, is_alt = cp
        if is_alt:
            cand = cands[cp[5]]
            cp[5] += 1
            return cand
        b, trail = self.bindings, self.trail
        n = len(cands)
        while cp[5] < n:
            cand = cands[cp[5]]
            cp[5] += 1
            mark = len(trail)
            if type(cand) is tuple:
                head, body, has_vars = cand
                if has_vars:
                    serial = fresh_serial()
                    mapping: Dict[Var, Var] = {}
                    if unify(goal, rename(head, mapping, serial), b, trail):
                        out = rest
                        d = depth + 1
                        for g, neg in reversed(body):
                            out = (rename(g, mapping, serial), neg, d, out)
                        return out
                elif unify(goal, head, b, trail):
                    out = rest
                    d = depth + 1
                    for g, neg in reversed(body):
                        out = (g, neg, d, out)
                    return out
            elif unify(goal, cand, b, trail):
                return rest
            undo(b, trail, mark)
        return _FAIL

    def _step(self, goals, stack: list):
        goal, negated, depth, rest = goals
        b = self.bindings
        while type(goal) is Var:
            nxt = b.get(goal)
            if nxt is None:
                raise EvaluationError(f"unbound goal {goal}")
            goal = nxt
        if negated:
            g = resolve(goal, b)
            if not is_ground(g):
                raise NonGroundNegation(f"negated goal is not ground: not({g})")
            return _FAIL if self._provable(g, depth) else rest
        tg = type(goal)
        if tg is Compound:
            key = (goal.functor, len(goal.args))
        elif tg is Atom:
            key = (goal.name, 0)
        else:
            raise EvaluationError(f"number {goal} is not callable")
        if key in _BUILTIN_KEYS:
            return self._builtin(goal, key[0], depth, rest, stack)
        if depth >= self.depth_limit:
            raise DepthExceeded(f"resolution depth exceeded {self.depth_limit} at {resolve(goal, b)}")
        clauses = self.rb.clauses_for(key)
        if tg is Compound:
            facts = self.fs.candidates(key, tuple([walk(a, b) for a in goal.args]))
        else:
            facts = self.fs.candidates(key)
        if clauses and facts:
            cands = list(clauses) + list(facts)
        else:
            cands = clauses or facts
        if not cands:
            return _FAIL
        cp = [len(self.trail), goal, rest, depth, cands, 0, False]
        out = self._try(cp)
        if cp[5] < len(cands):
            stack.append(cp)
        return out

    def _builtin(self, goal: Term, name: str, depth: int, rest, stack: list):
        b, trail = self.bindings, self.trail
        args = goal.args if type(goal) is Compound else ()
        if name in _COMPARE:
            return rest if _COMPARE[name](_arith(args[0], b), _arith(args[1], b)) else _FAIL
        if name == "is":
            value = Num(float(_arith(args[1], b)))
            mark = len(trail)
            if unify(args[0], value, b, trail):
                return rest
            undo(b, trail, mark)
            return _FAIL
        if name == "true":
            return rest
        if name == "fail":
            return _FAIL
        if name == ",":
            return (args[0], False, depth, (args[1], False, depth, rest))
        if name == ";":
            alts = [(args[0], False, depth, rest), (args[1], False, depth, rest)]
            cp = [len(trail), goal, rest, depth, alts, 0, True]
            out = self._try(cp)
            stack.append(cp)
            return out
        if name in ("not", "\\+"):
            return self._step((args[0], True, depth, rest), stack)
        if name == "=":
            mark = len(trail)
            if unify(args[0], args[1], b, trail):
                return rest
            undo(b, trail, mark)
            return _FAIL
        if name == "\\=":
            mark = len(trail)
            ok = unify(args[0], args[1], b, trail)
            undo(b, trail, mark)
            return _FAIL if ok else rest
        if name == "findall":
            template, inner, result = args
            items = []
            mark = len(trail)
            gen = self._run((inner, False, depth, None))
            try:
                for _ in gen:
                    items.append(resolve(template, b))
            finally:
                gen.close()
                undo(b, trail, mark)
            mark = len(trail)
            if unify(result, make_list(items), b, trail):
                return rest
            undo(b, trail, mark)
            return _FAIL
        raise EvaluationError(f"unknown builtin {name}")


def solve(
    goal: Term, rb: RuleBase, fs: Optional[FactStore] = None, depth_limit: int = DEFAULT_DEPTH_LIMIT
) -> Iterator[Substitution]:
    """Lazily yield every answer substitution for ``goal``, in resolution order."""
    return Solver(rb, fs, depth_limit).solve(goal)


def find_all(
    template: Term,
    goal: Term,
    rb: RuleBase,
    fs: Optional[FactStore] = None,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
) -> List[Term]:
    return [resolve(template, s) for s in solve(goal, rb, fs, depth_limit)]


def query(text: str, rb: RuleBase, fs: Optional[FactStore] = None) -> List[Substitution]:
    from .parser import parse_term

    return list(solve(parse_term(text), rb, fs))
