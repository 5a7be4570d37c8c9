"""Small safe evaluator for payoff expressions such as ``max(K - S, 0)``.

Names resolve to node processes, terminal claims or scalar parameters.
Only arithmetic, comparisons and a handful of elementwise functions are
accepted; everything else is rejected before evaluation.
"""

from __future__ import annotations

import ast
import operator

import numpy as np

from .lattice import ContractError

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_COMPARE = {
    ast.Lt: np.less, ast.LtE: np.less_equal, ast.Gt: np.greater,
    ast.GtE: np.greater_equal, ast.Eq: np.equal, ast.NotEq: np.not_equal,
}
_FUNCS = {
    "max": np.maximum,
    "min": np.minimum,
    "abs": np.abs,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "where": np.where,
}


def evaluate(expr, tree, processes=None, claims=None, params=None, at: str = "node") -> np.ndarray:
    """Evaluate ``expr`` on every node (``at="node"``) or every terminal node.

    Processes are per-node arrays; claims exist only at terminal nodes and
    are therefore only visible with ``at="terminal"``.  Numbers are broadcast.
    """
    if at not in ("node", "terminal"):
        raise ValueError("at must be 'node' or 'terminal'")
    processes = processes or {}
    claims = claims or {}
    params = params or {}
    size = tree.n_nodes if at == "node" else len(tree.terminals)
    if isinstance(expr, (int, float, np.number)):
        return np.full(size, float(expr))
    if not isinstance(expr, str):
        arr = np.asarray(expr, dtype=float)
        if arr.shape != (size,):
            raise ContractError(f"expected {size} values, got shape {arr.shape}")
        return arr

    def lookup(name):
        if name in params:
            return float(params[name])
        if name in processes:
            values = np.asarray(processes[name], dtype=float)
            return values if at == "node" else values[tree.terminals]
        if name in claims:
            if at == "node":
                raise ContractError(f"{name!r} is a terminal claim and has no value at inner nodes")
            return np.asarray(claims[name], dtype=float)
        raise ContractError(f"unknown name {name!r} in expression {expr!r}")

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            return lookup(node.id)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Compare) and len(node.ops) == 1 and type(node.ops[0]) in _COMPARE:
            return _COMPARE[type(node.ops[0])](ev(node.left), ev(node.comparators[0])).astype(float)
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and not node.keywords):
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise ContractError(f"unsupported construct in expression {expr!r}")

    try:
        tree_ast = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ContractError(f"cannot parse expression {expr!r}: {exc.msg}") from None
    with np.errstate(all="ignore"):
        out = np.broadcast_to(np.asarray(ev(tree_ast), dtype=float), (size,)).copy()
    if not np.all(np.isfinite(out)):
        raise ContractError(f"expression {expr!r} produced non-finite values")
    return out
