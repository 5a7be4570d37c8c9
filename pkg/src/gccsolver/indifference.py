"""Dynamic exponential indifference valuation ``pi^{alpha,C}_t``.

The canonical algorithm runs the one-step certainty equivalent backwards
under the entropy minimizing martingale measure of the endowment-tilted
tree.  Under a martingale measure the pure-investment problem needs no
hedge, so a single recursion gives the value.  The primal ratio of two
utility recursions under ``P`` is kept as an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exputil import (Agent, MartingaleMeasure, TiltedTree, backward_ce,
                      certainty_equivalent_process, emmm, martingale_measure, tilt_measure)
from .lattice import ContractError, EventTree, as_claim, as_process, as_rule, expectation


@dataclass(frozen=True, eq=False)
class Valuer:
    """Indifference valuation operator of one agent on one tree.

    Caches the tilted tree ``P_C`` and its entropy minimizing martingale
    measure ``Q^{E,C}``; build a new ``Valuer`` to change the agent.
    """

    tree: EventTree
    agent: Agent
    tilted: TiltedTree = field(init=False, repr=False)
    measure: MartingaleMeasure = field(init=False, repr=False)

    def __post_init__(self):
        C = self.agent.endowment_on(self.tree)
        tilted = tilt_measure(self.tree, C, self.agent.risk_aversion)
        object.__setattr__(self, "tilted", tilted)
        object.__setattr__(self, "measure", emmm(tilted))

    @property
    def alpha(self) -> float:
        return self.agent.risk_aversion

    @property
    def q(self) -> np.ndarray:
        return self.measure.transition_prob

    def check_process(self, values, name="process"):
        return as_process(self.tree, values, name)


def european_value_process(valuer: Valuer, H, return_details: bool = False):
    """Value process ``Gamma^H_t = pi_t(H)`` at every node.

    ``H`` may carry leading batch axes ``(..., n_terminal)``.  With
    ``return_details`` also returns the optimal holdings ``(..., n, d)`` and
    the dual weights ``(..., n, b)`` of every one-step problem.
    """
    H = as_claim(valuer.tree, H, "H")
    return backward_ce(valuer.tree, valuer.q, H, valuer.alpha, return_details=return_details)


def value_at(valuer: Valuer, H, rule=None) -> float:
    """``pi_0(H)`` for a terminal claim, or ``pi_0(H_rule)`` for a process and a stopping rule.

    The stopped form runs an absorbing recursion, so it also works on
    recombining lattices.
    """
    if rule is None:
        return float(european_value_process(valuer, H)[..., valuer.tree.root])
    return float(stopped_value_process(valuer, H, rule)[valuer.tree.root])


def stopped_value_process(valuer: Valuer, L, rule) -> np.ndarray:
    """``pi_t(L_rule)`` on the nodes where ``rule`` has not stopped before ``t``."""
    tree = valuer.tree
    L = as_process(tree, L, "L")
    rule = as_rule(tree, rule)
    return backward_ce(tree, valuer.q, L[tree.terminals], valuer.alpha, absorb=rule, stop_values=L)


def game_values(valuer: Valuer, X, Y, tau, sigma, sign: float = 1.0):
    """``pi_0(sign * R(tau, sigma))`` for (batches of) stopping rules.

    ``tau`` and ``sigma`` are boolean arrays ``(..., n)`` that broadcast
    against each other; the result has the broadcast batch shape.
    """
    tree = valuer.tree
    X = as_process(tree, X, "X")
    Y = as_process(tree, Y, "Y")
    tau = np.asarray(tau, dtype=bool)
    sigma = np.asarray(sigma, dtype=bool)
    tau, sigma = np.broadcast_arrays(tau, sigma)
    if not (tau[..., tree.terminals].all() and sigma[..., tree.terminals].all()):
        raise ContractError("stopping rules must stop at every terminal node")
    absorb = tau | sigma
    stop_values = sign * np.where(tau, X, Y)
    terminal = np.broadcast_to(sign * X[tree.terminals], tau.shape[:-1] + (len(tree.terminals),))
    values = backward_ce(tree, valuer.q, terminal, valuer.alpha, absorb=absorb, stop_values=stop_values)
    out = values[..., tree.root]
    return float(out) if np.ndim(out) == 0 else out


def primal_value_process(tree: EventTree, agent: Agent, H) -> np.ndarray:
    """``pi^{alpha,C}_t(H)`` as the log-ratio of two utility recursions under ``P``."""
    C = agent.endowment_on(tree)
    H = as_claim(tree, H, "H")
    alpha = agent.risk_aversion
    return (certainty_equivalent_process(tree, C + H, alpha)
            - certainty_equivalent_process(tree, C, alpha))


def optimal_dual_measure(valuer: Valuer, H) -> MartingaleMeasure:
    """The measure attaining the dual representation of ``pi_0(H)``."""
    _, _, weights = european_value_process(valuer, H, return_details=True)
    q = np.where(valuer.tree.child_mask, weights, 0.0)
    return martingale_measure(valuer.tilted.tree, q)


def _check_same_tree(valuer: Valuer, Q: MartingaleMeasure):
    base = valuer.tilted.tree
    if Q.tree is base:
        return
    if (Q.tree.children.shape != base.children.shape or not np.array_equal(Q.tree.children, base.children)
            or not np.allclose(Q.tree.prob, base.prob, atol=1e-12, rtol=0)):
        raise ContractError("measure does not live on the valuer's tilted tree")


def dual_gap(valuer: Valuer, H, Q: MartingaleMeasure) -> float:
    """``E^Q[H] + (H(Q|P_C) - H(Q^{E,C}|P_C)) / alpha - pi_0(H)``; never negative."""
    _check_same_tree(valuer, Q)
    H = as_claim(valuer.tree, H, "H")
    eq = expectation(valuer.tree, H, Q.transition_prob)
    penalty = (Q.relative_entropy - valuer.measure.relative_entropy) / valuer.alpha
    return eq + penalty - value_at(valuer, H)


def dual_gaps(valuer: Valuer, H, transition_probs) -> np.ndarray:
    """Vectorised :func:`dual_gap` for a stack ``(k, n, b)`` of martingale weights.

    The weights are taken relative to the valuer's tilted tree; entropies
    are accumulated forward along reach probabilities.
    """
    tree = valuer.tilted.tree
    H = as_claim(tree, H, "H")
    q = np.asarray(transition_probs, dtype=float)
    if q.shape[-2:] != tree.prob.shape:
        raise ContractError("transition weights must match the tree's (n, b) layout")
    if np.any((q > 0) != (tree.prob > 0)):
        raise ContractError("measures must be equivalent to the tilted weights")
    with np.errstate(divide="ignore", invalid="ignore"):
        step_kl = np.where(q > 0, q * (np.log(np.where(q > 0, q, 1.0))
                                       - np.log(np.where(tree.prob > 0, tree.prob, 1.0))), 0.0).sum(axis=-1)
    reach = np.zeros(q.shape[:-1])
    reach[..., tree.root] = 1.0
    for nodes in tree.levels[:-1]:
        ch = tree.children[nodes]
        valid = ch >= 0
        contrib = reach[..., nodes, None] * q[..., nodes, :]
        for j in range(ch.shape[1]):
            rows = valid[:, j]
            np.add.at(np.moveaxis(reach, -1, 0), ch[rows, j], np.moveaxis(contrib[..., rows, j], -1, 0))
    entropy = (reach * step_kl).sum(axis=-1)
    eq = reach[..., tree.terminals] @ H
    return eq + (entropy - valuer.measure.relative_entropy) / valuer.alpha - value_at(valuer, H)


def endowment_identity_check(tree: EventTree, alpha: float, C, H) -> float:
    """``max_t |pi^{a,C}_t(H) - (pi^{a,0}_t(C+H) - pi^{a,0}_t(C))|`` over all nodes."""
    C = as_claim(tree, C, "C")
    H = as_claim(tree, H, "H")
    with_c = european_value_process(Valuer(tree, Agent(alpha, C)), H)
    plain = Valuer(tree, Agent(alpha, 0.0))
    diff = european_value_process(plain, C + H) - european_value_process(plain, C)
    return float(np.abs(with_c - diff).max())
