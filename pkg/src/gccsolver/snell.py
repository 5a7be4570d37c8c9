"""Optimal stopping under the indifference valuation.

The envelope is the backward recursion ``V_T = L_T``,
``V_t = max(L_t, pi_t(V_{t+1}))`` where the one-step ``pi_t`` is the
certainty equivalent under ``Q^{E,C}``.  The ratio representation solves the
same problem under ``P`` as a joint trade-and-stop utility maximisation and
serves as an independent check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exputil import backward_ce, certainty_equivalent_process, solve_steps
from .indifference import Valuer, european_value_process
from .lattice import (ContractError, as_process, as_rule, canonical_rule, default_hitting_tol,
                      enumerate_stopping_rules, hitting_rule, lift)


@dataclass(frozen=True, eq=False)
class SnellResult:
    """Envelope ``V``, hitting rule ``{V = L}`` and ``V`` at the root."""

    payoff: np.ndarray
    envelope: np.ndarray
    optimal_rule: np.ndarray
    root_value: float
    continuation: np.ndarray


def continuation_values(valuer: Valuer, V) -> np.ndarray:
    """One-step ``pi_t(V_{t+1})`` at every non-terminal node (``V`` at terminals)."""
    tree = valuer.tree
    V = np.asarray(V, dtype=float)
    out = V.copy()
    inner = tree.nonterminals
    ch = tree.children[inner]
    child_vals = np.where(ch >= 0, V[..., np.maximum(ch, 0)], 0.0)
    out[..., inner] = solve_steps(valuer.q[inner], tree.increments[inner], child_vals, valuer.alpha)[0]
    return out


def snell_envelope(valuer: Valuer, L, absorbing=None, tol=None) -> SnellResult:
    """Smallest one-step ``pi``-supermartingale dominating ``L``.

    Parameters
    ----------
    valuer : Valuer
    L : (n,) array
        Reward process.
    absorbing : (n,) bool array, optional
        Nodes where the problem is over and ``V = L`` is imposed.  Used for
        rewards that are frozen after a counter-party stop.
    tol : float, optional
        Hitting tolerance, defaults to ``1e-9 (1 + sup|L|)``.
    """
    tree = valuer.tree
    L = as_process(tree, L, "L")
    if absorbing is not None:
        absorbing = as_rule(tree, absorbing, "absorbing")
    cont = L.copy()
    V = backward_ce(tree, valuer.q, L[tree.terminals], valuer.alpha, floor=L,
                    absorb=absorbing, stop_values=L, continuation=cont)
    tol = default_hitting_tol(L) if tol is None else tol
    rule = hitting_rule(tree, V, L, tol)
    return SnellResult(L, V, rule, float(V[tree.root]), cont)


def recursion_residual(valuer: Valuer, result: SnellResult, absorbing=None) -> float:
    """``max |V_t - max(L_t, pi_t(V_{t+1}))|``; zero up to round-off by construction."""
    target = np.maximum(result.payoff, result.continuation)
    if absorbing is not None:
        target = np.where(absorbing, result.payoff, target)
    return float(np.abs(result.envelope - target).max())


def _alive_before(tree, rules):
    """Nodes where ``rules`` has not stopped strictly before (full trees)."""
    closed = canonical_rule(tree, rules)
    alive = np.ones_like(closed)
    for nodes in tree.levels[1:]:
        alive[..., nodes] = ~closed[..., tree.parent[nodes]]
    return alive


def check_supermartingale(valuer: Valuer, result: SnellResult, rules) -> float:
    """``max pi_t(V_rule) - V_t`` over sampled rules and the nodes they have not yet passed.

    ``rules`` is ``(k, n)`` or ``(n,)``; a rule is read at node ``t`` as the
    first stop at or after ``t``.
    """
    tree = valuer.tree
    tree.require_full("check_supermartingale")
    rules = np.atleast_2d(as_rule(tree, rules))
    V = result.envelope
    stopped = backward_ce(tree, valuer.q, np.broadcast_to(V[tree.terminals], (len(rules), len(tree.terminals))),
                          valuer.alpha, absorb=rules, stop_values=V)
    diff = np.where(_alive_before(tree, rules), stopped - V, -np.inf)
    return float(max(diff.max(), 0.0))


def restriction_check(valuer: Valuer, L1, L2, sigma, tol: float = 1e-12) -> bool:
    """True iff the envelopes of ``L1`` and ``L2`` agree wherever ``sigma`` has stopped.

    Requires ``L1 == L2`` on that region (at and after the first stop on each path).
    """
    tree = valuer.tree
    L1 = as_process(tree, L1, "L1")
    L2 = as_process(tree, L2, "L2")
    region = canonical_rule(tree, sigma)
    if not np.array_equal(L1[region], L2[region]):
        raise ContractError("L1 and L2 must agree at and after sigma")
    V1 = snell_envelope(valuer, L1).envelope
    V2 = snell_envelope(valuer, L2).envelope
    return bool(np.all(np.abs(V1 - V2)[region] <= tol))


@dataclass(frozen=True, eq=False)
class RatioResult:
    """``value = -(1/alpha) log(A/B)`` with both utility processes.

    ``A`` is the optimal utility of trading and stopping to collect ``L``
    on top of the endowment, ``B`` that of trading the endowment alone.
    ``a`` and ``b`` are their certainty equivalents.
    """

    value: np.ndarray
    A: np.ndarray
    B: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def supermartingale_residuals(self, tree, rel: bool = True):
        """Largest ``E_t[U_{t+1}] - U_t`` under ``P`` for ``U = A`` and ``U = B``.

        With ``rel`` the excess at each node is divided by ``max(1, |U_t|)``.
        """
        out = []
        for U in (self.A, self.B):
            inner = tree.nonterminals
            ch = tree.children[inner]
            nxt = (tree.prob[inner] * np.where(ch >= 0, U[np.maximum(ch, 0)], 0.0)).sum(axis=1)
            excess = nxt - U[inner]
            if rel:
                excess = excess / np.maximum(1.0, np.abs(U[inner]))
            out.append(float(max(excess.max(), 0.0)) if len(inner) else 0.0)
        return tuple(out)


def ratio_representation(valuer: Valuer, L) -> RatioResult:
    """Snell envelope recomputed as a ratio of two utility problems under ``P``.

    Stopping at ``t`` locks in ``L_t`` while the endowment is still hedged
    optimally, worth ``L_t + b_t`` in certainty-equivalent terms; continuing
    composes one-step certainty equivalents under ``P``.
    """
    tree = valuer.tree
    L = as_process(tree, L, "L")
    alpha = valuer.alpha
    C = valuer.agent.endowment_on(tree)
    b = certainty_equivalent_process(tree, C, alpha)
    stop = L + b
    a = backward_ce(tree, tree.prob, stop[tree.terminals], alpha, floor=stop)
    A = -np.exp(-alpha * a)
    B = -np.exp(-alpha * b)
    return RatioResult(a - b, A, B, a, b)


def brute_force_optimum(valuer: Valuer, L, cap: int = 16):
    """Best root value over every stopping rule, by lifting ``L`` and pricing each claim.

    Returns ``(best_value, values, rules)`` with one value per enumerated rule.
    """
    tree = valuer.tree
    L = as_process(tree, L, "L")
    rules = enumerate_stopping_rules(tree, cap)
    claims = lift(tree, L, rules)
    values = european_value_process(valuer, claims)[:, tree.root]
    return float(values.max()), values, rules
