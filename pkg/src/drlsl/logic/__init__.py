"""A small Horn-clause engine: parser, fact store and depth-first resolution."""

from .parser import BUILTINS, Clause, Literal, RuleSyntaxError, parse_clauses, parse_term
from .solver import DEFAULT_DEPTH_LIMIT, RuleBase, Solver, find_all, parse_rules, query, solve
from .terms import (
    ArityError,
    Atom,
    Compound,
    DepthExceeded,
    EvaluationError,
    FactStore,
    LogicError,
    NonGroundArithmetic,
    NonGroundFact,
    NonGroundNegation,
    Num,
    Substitution,
    Term,
    Var,
    apply_substitution,
    assert_fact,
    clear_facts,
    is_ground,
    list_items,
    make_list,
    to_term,
    variables,
)

__all__ = [name for name in dir() if not name.startswith("_")]
