"""Term representation, unification and the fact store."""

from __future__ import annotations

import itertools
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union


class LogicError(Exception):
    """Base class for rule-engine errors."""


class ArityError(LogicError):
    pass


class DepthExceeded(LogicError):
    pass


class NonGroundNegation(LogicError):
    pass


class NonGroundArithmetic(LogicError):
    pass


class NonGroundFact(LogicError):
    pass


class EvaluationError(LogicError):
    """Arithmetic on a non-numeric term, or calling a non-callable goal."""


class _Frozen:
    __slots__ = ()

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    def __delattr__(self, name):
        raise AttributeError(f"{type(self).__name__} is immutable")


class Atom(_Frozen):
    __slots__ = ("name", "_hash")

    def __init__(self, name: str):
        if not name:
            raise ValueError("empty atom name")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "_hash", hash(("atom", name)))

    def __eq__(self, other):
        return self is other or (type(other) is Atom and other.name == self.name)

    def __hash__(self):
        return self._hash

    def __repr__(self) -> str:
        return f"Atom({self.name!r})"

    def __str__(self) -> str:
        return self.name

    def __reduce__(self):
        return (Atom, (self.name,))


class Var(_Frozen):
    # serial is 0 for variables written in source; renamed copies get a fresh serial
    __slots__ = ("name", "serial", "_hash")

    def __init__(self, name: str, serial: int = 0):
        if not name:
            raise ValueError("empty variable name")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "serial", serial)
        object.__setattr__(self, "_hash", hash((name, serial)))

    def __eq__(self, other):
        return self is other or (type(other) is Var and other.serial == self.serial and other.name == self.name)

    def __hash__(self):
        return self._hash

    def __repr__(self) -> str:
        return f"Var({self.name!r}, {self.serial})" if self.serial else f"Var({self.name!r})"

    def __str__(self) -> str:
        return self.name if self.serial == 0 else f"{self.name}_{self.serial}"

    def __reduce__(self):
        return (Var, (self.name, self.serial))


class Num(_Frozen):
    __slots__ = ("value",)

    def __init__(self, value: float):
        object.__setattr__(self, "value", float(value))

    def __eq__(self, other):
        return self is other or (type(other) is Num and other.value == self.value)

    def __hash__(self):
        return hash(self.value)

    def __repr__(self) -> str:
        return f"Num({self.value!r})"

    def __str__(self) -> str:
        v = self.value
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)

    def __reduce__(self):
        return (Num, (self.value,))


class Compound(_Frozen):
    """``functor(args...)``; ``ground`` is cached so renaming can skip constant subterms."""

    __slots__ = ("functor", "args", "ground", "_hash")

    def __init__(self, functor: str, args):
        args = tuple(args)
        if not args:
            raise ValueError("compound terms need at least one argument")
        if not functor:
            raise ValueError("empty functor")
        ground = True
        for a in args:
            t = type(a)
            if t is Var or (t is Compound and not a.ground):
                ground = False
                break
        object.__setattr__(self, "functor", functor)
        object.__setattr__(self, "args", args)
        object.__setattr__(self, "ground", ground)
        object.__setattr__(self, "_hash", None)

    @property
    def key(self) -> Tuple[str, int]:
        return (self.functor, len(self.args))

    def __eq__(self, other):
        if self is other:
            return True
        return type(other) is Compound and other.functor == self.functor and other.args == self.args

    def __hash__(self):
        h = self._hash
        if h is None:
            h = hash((self.functor, self.args))
            object.__setattr__(self, "_hash", h)
        return h

    def __repr__(self) -> str:
        return f"Compound({self.functor!r}, {self.args!r})"

    def __str__(self) -> str:
        if self.functor == "." and len(self.args) == 2:
            return _list_str(self)
        return f"{self.functor}({', '.join(str(a) for a in self.args)})"

    def __reduce__(self):
        return (Compound, (self.functor, self.args))


Term = Union[Atom, Var, Num, Compound]
Substitution = Dict[Var, Term]

NIL = Atom("[]")


def _list_str(t: Term) -> str:
    items = []
    while isinstance(t, Compound) and t.functor == "." and len(t.args) == 2:
        items.append(str(t.args[0]))
        t = t.args[1]
    tail = "" if t == NIL else f"|{t}"
    return f"[{', '.join(items)}{tail}]"


def make_list(items: Iterable[Term]) -> Term:
    out: Term = NIL
    for item in reversed(list(items)):
        out = Compound(".", (item, out))
    return out


def list_items(t: Term) -> List[Term]:
    items = []
    while isinstance(t, Compound) and t.functor == "." and len(t.args) == 2:
        items.append(t.args[0])
        t = t.args[1]
    if t != NIL:
        raise ValueError(f"not a proper list: {t}")
    return items


def term_key(t: Term) -> Tuple[str, int]:
    if isinstance(t, Atom):
        return (t.name, 0)
    if isinstance(t, Compound):
        return (t.functor, len(t.args))
    raise EvaluationError(f"not callable: {t}")


def to_term(value) -> Term:
    """Convert plain Python values (str, int, float, tuple) into terms.

    Strings become atoms; tuples ``(functor, arg, ...)`` become compounds.
    """
    if isinstance(value, (Atom, Var, Num, Compound)):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans have no term form")
    if isinstance(value, (int, float)):
        return Num(float(value))
    if isinstance(value, str):
        return Atom(value)
    if isinstance(value, tuple) and value and isinstance(value[0], str):
        return Compound(value[0], tuple(to_term(v) for v in value[1:]))
    raise TypeError(f"cannot convert {value!r} to a term")


def variables(t: Term, out: Optional[List[Var]] = None) -> List[Var]:
    """Variables of ``t`` in order of first appearance."""
    if out is None:
        out = []
    if isinstance(t, Var):
        if t not in out:
            out.append(t)
    elif isinstance(t, Compound):
        for a in t.args:
            variables(a, out)
    return out


def is_ground(t: Term) -> bool:
    tt = type(t)
    if tt is Var:
        return False
    if tt is Compound:
        return t.ground
    return True


def walk(t: Term, bindings: Substitution) -> Term:
    while type(t) is Var:
        nxt = bindings.get(t)
        if nxt is None:
            return t
        t = nxt
    return t


def resolve(t: Term, bindings: Substitution) -> Term:
    """Apply ``bindings`` to ``t`` all the way down."""
    while type(t) is Var:
        nxt = bindings.get(t)
        if nxt is None:
            return t
        t = nxt
    if type(t) is Compound and not t.ground:
        return Compound(t.functor, [resolve(a, bindings) for a in t.args])
    return t


def apply_substitution(t: Term, subst: Substitution) -> Term:
    return resolve(t, subst)


def unify(a: Term, b: Term, bindings: Substitution, trail: List[Var]) -> bool:
    """Unify in place, recording new bindings on ``trail``. No occurs check."""
    get = bindings.get
    stack = [a, b]
    pop = stack.pop
    while stack:
        y = pop()
        x = pop()
        while type(x) is Var:
            n = get(x)
            if n is None:
                break
            x = n
        while type(y) is Var:
            n = get(y)
            if n is None:
                break
            y = n
        if x is y:
            continue
        tx = type(x)
        if tx is Var:
            if x != y:
                bindings[x] = y
                trail.append(x)
            continue
        ty = type(y)
        if ty is Var:
            bindings[y] = x
            trail.append(y)
            continue
        if tx is Compound:
            if ty is not Compound or x.functor != y.functor:
                return False
            xa, ya = x.args, y.args
            if len(xa) != len(ya):
                return False
            # variables are bound and constants compared in place; only
            # nested compounds go back on the stack
            for xi, yi in zip(xa, ya):
                while type(xi) is Var:
                    n = get(xi)
                    if n is None:
                        break
                    xi = n
                while type(yi) is Var:
                    n = get(yi)
                    if n is None:
                        break
                    yi = n
                if xi is yi:
                    continue
                txi, tyi = type(xi), type(yi)
                if txi is Var:
                    if xi != yi:
                        bindings[xi] = yi
                        trail.append(xi)
                elif tyi is Var:
                    bindings[yi] = xi
                    trail.append(yi)
                elif txi is Compound:
                    stack.append(xi)
                    stack.append(yi)
                elif txi is not tyi or xi != yi:
                    return False
            continue
        if tx is not ty or x != y:
            return False
    return True


def undo(bindings: Substitution, trail: List[Var], mark: int) -> None:
    while len(trail) > mark:
        del bindings[trail.pop()]


_serials = itertools.count(1)


def fresh_serial() -> int:
    return next(_serials)


def rename(t: Term, mapping: Dict[Var, Var], serial: int) -> Term:
    tt = type(t)
    if tt is Var:
        v = mapping.get(t)
        if v is None:
            v = mapping[t] = Var(t.name, serial)
        return v
    if tt is Compound and not t.ground:
        return Compound(t.functor, [rename(a, mapping, serial) for a in t.args])
    return t


class FactStore:
    """Ground facts grouped by (functor, arity), indexed on every atomic argument."""

    def __init__(self, facts: Iterable[Term] = ()):
        self._by_key: Dict[Tuple[str, int], List[Term]] = {}
        # (functor, arity) -> per-position {constant: facts}
        self._by_arg: Dict[Tuple[str, int], List[Dict[Term, List[Term]]]] = {}
        for f in facts:
            self.add(f)

    def add(self, fact: Term) -> None:
        fact = to_term(fact)
        if not is_ground(fact):
            raise NonGroundFact(f"fact is not ground: {fact}")
        key = term_key(fact)
        self._by_key.setdefault(key, []).append(fact)
        if type(fact) is Compound:
            index = self._by_arg.get(key)
            if index is None:
                index = self._by_arg[key] = [{} for _ in fact.args]
            for pos, a in enumerate(fact.args):
                if type(a) is not Compound:
                    index[pos].setdefault(a, []).append(fact)

    def clear(self) -> None:
        self._by_key.clear()
        self._by_arg.clear()

    def candidates(self, key: Tuple[str, int], args: Optional[Tuple[Term, ...]] = None) -> List[Term]:
        """Facts that may match a goal whose (walked) arguments are ``args``.

        The narrowest index among the constant arguments is used; with no
        ``args`` every fact of the predicate is returned.
        """
        facts = self._by_key.get(key)
        if not facts:
            return []
        if not args:
            return facts
        best = facts
        index = self._by_arg[key]
        for pos, a in enumerate(args):
            ta = type(a)
            if ta is Var or ta is Compound:
                continue
            bucket = index[pos].get(a, ())
            if len(bucket) < len(best):
                best = bucket
                if not best:
                    break
        return best

    def __iter__(self) -> Iterator[Term]:
        for facts in self._by_key.values():
            yield from facts

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_key.values())

    def keys(self):
        return self._by_key.keys()


def assert_fact(fs: FactStore, fact: Term) -> None:
    fs.add(fact)


def clear_facts(fs: FactStore) -> None:
    fs.clear()
