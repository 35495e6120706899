"""
Reverse accumulation on the scalar expression DAG.

Every (node, enclosing sums) pair is visited once, consumers before producers,
and receives the sum of consumer adjoint times local partial. Sum nodes pass
their adjoint to the body unchanged, which is the derivative of the
sum-liberated function.
"""
from typing import Dict, Iterable, List, Optional, Tuple, Union

from .exceptions import NonDifferentiableOp
from .expr import (ArgElement, Binary, Const, DeltaIf, Expr, Scope, Sum, Unary, cos, cosh, is_constant_expr,
                   scoped_postorder, sin, sinh)
from .utils import logger

Key = Tuple[Expr, Scope]


def _total(parts: List[Expr]) -> Expr:
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def _local_adjoints(node: Expr, adj: Expr) -> List[Tuple[Expr, Expr]]:
    """(child, contribution) pairs for one node given its adjoint."""
    if isinstance(node, Binary):
        lhs, rhs = node.lhs, node.rhs
        if node.op == "+":
            return [(lhs, adj), (rhs, adj)]
        if node.op == "-":
            return [(lhs, adj), (rhs, -adj)]
        if node.op == "*":
            return [(lhs, adj * rhs), (rhs, lhs * adj)]
        if node.op == "/":
            return [(lhs, adj / rhs), (rhs, -((adj * lhs) / rhs ** Const(2)))]
        if node.op == "**":
            if not is_constant_expr(rhs):
                raise NonDifferentiableOp(node, "exponent is not constant")
            return [(lhs, (adj * rhs) * lhs ** (rhs - Const(1)))]
    if isinstance(node, Unary):
        x = node.operand
        rules = {
            "neg": lambda: -adj,
            "exp": lambda: adj * node,
            "log": lambda: adj / x,
            "sin": lambda: adj * cos(x),
            "cos": lambda: adj * -sin(x),
            "sinh": lambda: adj * cosh(x),
            "cosh": lambda: adj * sinh(x),
            "sqrt": lambda: adj / (Const(2) * node),
        }
        if node.op not in rules:
            raise NonDifferentiableOp(node, f"no rule for {node.op}")
        return [(x, rules[node.op]())]
    if isinstance(node, Sum):
        return [(node.body, adj)]
    if isinstance(node, DeltaIf):
        return [(node.then, DeltaIf(node.conditions, adj, Const(0))),
                (node.orelse, DeltaIf(node.conditions, Const(0), adj))]
    return []


def reverse_ad(body: Expr, seed: Expr, targets: Optional[Iterable[Union[Key, Expr]]] = None) -> Dict[Key, Expr]:
    """
    Adjoint expressions of the requested occurrences in one backward pass.

    Args:
        body: expression being differentiated
        seed: adjoint of body itself (Const(1) for a plain gradient, d f for element-wise use)
        targets: occurrence keys (node, enclosing sums); a bare node means the
            occurrence outside every sum. Defaults to every tensor element occurrence.

    Returns:
        Mapping from each target key to its adjoint; unreachable targets map to 0.
    """
    order = scoped_postorder(body)
    if targets is None:
        keys = [k for k in order if isinstance(k[0], ArgElement)]
    else:
        keys = [(t, ()) if isinstance(t, Expr) else (t[0], tuple(t[1])) for t in targets]

    contributions: Dict[Key, List[Expr]] = {(body, ()): [seed]}
    adjoints: Dict[Key, Expr] = {}
    for node, scope in reversed(order):
        parts = contributions.pop((node, scope), None)
        if not parts:
            continue
        adj = _total(parts)
        adjoints[(node, scope)] = adj
        if isinstance(adj, Const) and adj.value == 0:
            continue
        inner = scope + (node,) if isinstance(node, Sum) else scope
        for child, contribution in _local_adjoints(node, adj):
            if isinstance(contribution, Const) and contribution.value == 0:
                continue
            contributions.setdefault((child, inner), []).append(contribution)

    logger.debug(f"Reverse pass over {len(order)} scoped nodes, {len(keys)} targets")
    return {k: adjoints.get(k, Const(0)) for k in keys}
