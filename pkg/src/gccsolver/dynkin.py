"""Game contingent claims: best responses, Nash iteration and verification.

The buyer exercises at ``tau`` and receives ``X_tau``; the seller may
recall at ``sigma`` and then pays ``Y_sigma >= X_sigma``.  Each agent values
its side of ``R(tau, sigma)`` with its own indifference valuation.

Best responses are optimal stopping problems for an auxiliary reward that
is frozen at the counter-party's stop.  Iterating them from ``(T, T)``
produces pathwise nonincreasing rules, so on a finite tree the iteration
reaches a fixed point after finitely many rounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import hashlib

import numpy as np

from .exputil import Agent, emmm
from .indifference import Valuer, european_value_process, game_values
from .lattice import (ContractError, EventTree, PathDependenceError, as_process, as_rule,
                      canonical_rule, enumerate_stopping_rules,
                      no_arbitrage_mask, pathwise_leq, propagate_states, stop_at_maturity,
                      stopped_payoff, stopping_times)
from .snell import SnellResult, snell_envelope

BUYER = "buyer"
SELLER = "seller"


class NoConvergenceError(RuntimeError):
    """The best-response iteration hit its cap before reaching a fixed point."""


class MonotonicityError(AssertionError):
    """An iterate failed to be pathwise below its predecessor; indicates a bug."""


@dataclass(frozen=True, eq=False)
class GccSpec:
    """Exercise payoff ``X``, recall payoff ``Y >= X`` and the two agents.

    ``buyer`` is the holder (receives ``R``), ``seller`` the writer (pays it).
    """

    tree: EventTree
    X: np.ndarray
    Y: np.ndarray
    buyer: Agent
    seller: Agent

    def __post_init__(self):
        X = as_process(self.tree, self.X, "X")
        Y = as_process(self.tree, self.Y, "Y")
        if np.any(X > Y):
            bad = int(np.argmax(X - Y))
            raise ContractError(f"X > Y at node {self.tree.ids[bad]}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @cached_property
    def buyer_valuer(self) -> Valuer:
        return Valuer(self.tree, self.buyer)

    @cached_property
    def seller_valuer(self) -> Valuer:
        return Valuer(self.tree, self.seller)

    def values(self, tau, sigma):
        """``(J_B, J_A) = (pi^B_0(R), pi^A_0(-R))`` for (batches of) rule pairs."""
        jb = game_values(self.buyer_valuer, self.X, self.Y, tau, sigma)
        ja = game_values(self.seller_valuer, self.X, self.Y, tau, sigma, sign=-1.0)
        return jb, ja


# -- auxiliary rewards ----------------------------------------------------------

def _freeze(tree: EventTree, before, rule, at_stop):
    """``before`` until the first stop of ``rule``, then ``at_stop`` read at that stop.

    On a lattice the frozen tail is not representable node by node; only the
    stop nodes carry ``at_stop`` there and callers make them absorbing.
    """
    rule = as_rule(tree, rule)
    if tree.recombining:
        return np.where(rule, at_stop, before)
    first = np.where(rule, np.arange(tree.n_nodes), -1)
    for nodes in tree.levels[1:]:
        par = first[tree.parent[nodes]]
        first[nodes] = np.where(par >= 0, par, first[nodes])
    return np.where(first >= 0, at_stop[np.maximum(first, 0)], before)


def buyer_payoff(gcc: GccSpec, sigma) -> np.ndarray:
    """Buyer reward against ``sigma``: ``X`` before it, then frozen at ``Y_sigma`` (``X_T`` at maturity)."""
    tree = gcc.tree
    return _freeze(tree, gcc.X, sigma, np.where(tree.is_terminal, gcc.X, gcc.Y))


def seller_payoff(gcc: GccSpec, tau) -> np.ndarray:
    """Seller reward against ``tau``: ``-Y`` before it, then frozen at ``-X_tau``."""
    return _freeze(gcc.tree, -gcc.Y, tau, -gcc.X)


# -- modification step ------------------------------------------------------------

# forward states of a path while building the modified rule
_ALIVE = 1      # neither the counter rule nor the previous own rule has stopped
_PASSED = 2     # previous own rule stopped earlier, counter rule not yet reached
_WAIT = 4       # hit coincided with the counter stop: follow the previous own rule
_DONE = 8


def _modified_rule(tree: EventTree, hits, counter, prev):
    """Stop at the first hit strictly before ``counter``; where the first hit
    falls on ``counter``'s stop, fall back to ``prev``.

    ``counter`` is absorbing in the envelope, so every counter stop is a hit
    and the first hit is never later than ``counter``.
    """
    mark = np.zeros(tree.n_nodes, dtype=bool)

    def decide(nodes, masks):
        h, c, r = hits[nodes], counter[nodes], prev[nodes]
        out = np.zeros(len(nodes), dtype=np.int64)
        decided = np.zeros(len(nodes), dtype=bool)
        choice = np.zeros(len(nodes), dtype=bool)

        def record(present, stop):
            nonlocal decided, choice
            clash = present & decided & (choice != stop)
            if clash.any():
                node = nodes[np.flatnonzero(clash)[0]]
                raise PathDependenceError(
                    f"modified rule needs path information at node {tree.ids[node]}; "
                    "use a full event tree")
            choice = np.where(present, stop, choice)
            decided |= present

        alive = masks & _ALIVE != 0
        if alive.any():
            stop = np.where(c, r, h)
            record(alive, stop)
            nxt = np.where(stop, _DONE, np.where(c, _WAIT, np.where(r, _PASSED, _ALIVE)))
            out |= np.where(alive, nxt, 0)
        passed = masks & _PASSED != 0
        if passed.any():
            if np.any(passed & c):
                node = nodes[np.flatnonzero(passed & c)[0]]
                raise MonotonicityError(
                    f"counter rule stops at node {tree.ids[node]} after the previous own stop")
            record(passed, h)
            out |= np.where(passed, np.where(h, _DONE, _PASSED), 0)
        wait = masks & _WAIT != 0
        if wait.any():
            record(wait, r)
            out |= np.where(wait, np.where(r, _DONE, _WAIT), 0)
        done = masks & _DONE != 0
        out |= np.where(done, _DONE, 0)
        mark[nodes] = choice
        return out

    propagate_states(tree, _ALIVE, decide)
    mark[tree.levels[-1]] = True
    return mark


@dataclass(frozen=True, eq=False)
class BestResponse:
    """One best response: reward, its envelope, the capped hit rule and the final rule."""

    player: str
    auxiliary_payoff: np.ndarray
    snell: SnellResult
    tilde_rule: np.ndarray
    rule: np.ndarray


def _respond(tree, valuer, L, counter, prev, player, tol):
    counter = canonical_rule(tree, counter)
    prev = canonical_rule(tree, prev)
    snell = snell_envelope(valuer, L, absorbing=counter, tol=tol)
    hits = snell.optimal_rule
    tilde = canonical_rule(tree, hits | counter)
    rule = canonical_rule(tree, _modified_rule(tree, hits, counter, prev))
    return BestResponse(player, L, snell, tilde, rule)


def buyer_response(gcc: GccSpec, sigma, prev_tau, tol=None) -> BestResponse:
    """Buyer's best response to the seller's ``sigma``."""
    sigma = as_rule(gcc.tree, sigma, "sigma")
    prev_tau = as_rule(gcc.tree, prev_tau, "prev_tau")
    return _respond(gcc.tree, gcc.buyer_valuer, buyer_payoff(gcc, sigma), sigma, prev_tau, BUYER, tol)


def seller_response(gcc: GccSpec, tau, prev_sigma, tol=None) -> BestResponse:
    """Seller's best response to the buyer's ``tau``."""
    tau = as_rule(gcc.tree, tau, "tau")
    prev_sigma = as_rule(gcc.tree, prev_sigma, "prev_sigma")
    return _respond(gcc.tree, gcc.seller_valuer, seller_payoff(gcc, tau), tau, prev_sigma, SELLER, tol)


# -- iteration -----------------------------------------------------------------------

def rule_hash(rule) -> str:
    """Short stable digest of a rule's marked node set."""
    return hashlib.sha1(np.packbits(np.asarray(rule, dtype=bool)).tobytes()).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class TraceEntry:
    iteration: int
    player: str
    buyer_rule: np.ndarray
    seller_rule: np.ndarray
    j_buyer: float
    j_seller: float
    response: BestResponse

    @property
    def j_value(self) -> float:
        """Value of the player who just moved."""
        return self.j_buyer if self.player == BUYER else self.j_seller


@dataclass(frozen=True, eq=False)
class NashResult:
    buyer_rule: np.ndarray
    seller_rule: np.ndarray
    j_buyer: float
    j_seller: float
    trace: list
    converged: bool
    first_mover: str
    iterates: list = field(repr=False)

    @property
    def n_iterations(self) -> int:
        return len(self.trace)


def iteration_cap(tree: EventTree) -> int:
    """Theoretical bound on the number of responses before a fixed point."""
    return (tree.steps + 1) * tree.n_nodes + 4


def nash_iterate(gcc: GccSpec, first_mover: str = BUYER, max_iter: int | None = None,
                 tol=None) -> NashResult:
    """Alternate best responses from ``(T, T)`` until the rules repeat.

    ``iterates[k]`` is the ``k``-th rule of the sequence (0-based): entries 0
    and 1 are the initial ``T`` rules of the first and second mover, every
    later entry is a response to its predecessor.  Convergence means the last
    two responses reproduce the two rules before them.
    """
    if first_mover not in (BUYER, SELLER):
        raise ContractError("first_mover must be 'buyer' or 'seller'")
    tree = gcc.tree
    cap = iteration_cap(tree) if max_iter is None else int(max_iter)
    order = (first_mover, SELLER if first_mover == BUYER else BUYER)
    T = stop_at_maturity(tree)
    seq = [T, T]
    current = {BUYER: T, SELLER: T}
    trace = []
    for it in range(1, cap + 1):
        k = len(seq)
        player = order[k % 2]
        counter, prev = seq[k - 1], seq[k - 2]
        if player == BUYER:
            resp = buyer_response(gcc, counter, prev, tol)
        else:
            resp = seller_response(gcc, counter, prev, tol)
        if pathwise_leq(tree, resp.rule, prev) != 0:
            raise MonotonicityError(f"iterate {k} of the {player} is not below its predecessor")
        seq.append(resp.rule)
        current[player] = resp.rule
        jb, ja = gcc.values(current[BUYER], current[SELLER])
        trace.append(TraceEntry(it, player, current[BUYER], current[SELLER], float(jb), float(ja), resp))
        k += 1
        if k >= 4 and np.array_equal(seq[-1], seq[-3]) and np.array_equal(seq[-2], seq[-4]):
            return NashResult(current[BUYER], current[SELLER], float(jb), float(ja), trace, True,
                              first_mover, seq)
    raise NoConvergenceError(f"no fixed point after {cap} best responses")


# -- verification ------------------------------------------------------------------------

@dataclass(frozen=True)
class NepReport:
    """Deviation gains of both players at a candidate pair (``<= tol`` means no gain)."""

    j_buyer: float
    j_seller: float
    buyer_best: float
    seller_best: float
    tol: float
    method: str

    @property
    def buyer_gap(self) -> float:
        return self.buyer_best - self.j_buyer

    @property
    def seller_gap(self) -> float:
        return self.seller_best - self.j_seller

    @property
    def passed(self) -> bool:
        return self.buyer_gap <= self.tol and self.seller_gap <= self.tol

    def as_dict(self) -> dict:
        return {"method": self.method, "jBuyer": self.j_buyer, "jSeller": self.j_seller,
                "buyerBest": self.buyer_best, "sellerBest": self.seller_best,
                "buyerGap": self.buyer_gap, "sellerGap": self.seller_gap,
                "tol": self.tol, "passed": self.passed}


def verify_nep_snell(gcc: GccSpec, tau, sigma, tol: float = 1e-9) -> NepReport:
    """Compare each player's value with the best value of its own stopping problem."""
    tree = gcc.tree
    tau = canonical_rule(tree, tau)
    sigma = canonical_rule(tree, sigma)
    jb, ja = gcc.values(tau, sigma)
    best_b = snell_envelope(gcc.buyer_valuer, buyer_payoff(gcc, sigma), absorbing=sigma).root_value
    best_a = snell_envelope(gcc.seller_valuer, seller_payoff(gcc, tau), absorbing=tau).root_value
    return NepReport(float(jb), float(ja), best_b, best_a, tol, "snell")


def _lifted_values(valuer, claims):
    return european_value_process(valuer, claims)[..., valuer.tree.root]


def verify_nep_exhaustive(gcc: GccSpec, tau, sigma, tol: float = 1e-9, cap: int = 16) -> NepReport:
    """Try every counter-rule for each player and price the lifted payoffs directly."""
    tree = gcc.tree
    rules = enumerate_stopping_rules(tree, cap)
    tau = as_rule(tree, tau, "tau")
    sigma = as_rule(tree, sigma, "sigma")
    own = stopped_payoff(tree, gcc.X, gcc.Y, tau, sigma)
    jb = float(_lifted_values(gcc.buyer_valuer, own))
    ja = float(_lifted_values(gcc.seller_valuer, -own))
    buyer_dev = _lifted_values(gcc.buyer_valuer, stopped_payoff(tree, gcc.X, gcc.Y, rules, sigma))
    seller_dev = _lifted_values(gcc.seller_valuer, -stopped_payoff(tree, gcc.X, gcc.Y, tau, rules))
    return NepReport(jb, ja, float(buyer_dev.max()), float(seller_dev.max()), tol, "exhaustive")


def best_response_gaps(gcc: GccSpec, result: NashResult, exhaustive: bool = False, cap: int = 16):
    """Per response, ``best value - value achieved`` against the frozen counter rule.

    The best value is the envelope root, or with ``exhaustive`` the maximum
    over all enumerated rules.  Returns one gap per trace entry.
    """
    tree = gcc.tree
    rules = enumerate_stopping_rules(tree, cap) if exhaustive else None
    gaps = []
    for k, entry in enumerate(result.trace):
        if entry.player == BUYER:
            achieved = entry.j_buyer
            if exhaustive:
                best = game_values(gcc.buyer_valuer, gcc.X, gcc.Y, rules, entry.seller_rule).max()
            else:
                best = entry.response.snell.root_value
        else:
            achieved = entry.j_seller
            if exhaustive:
                best = game_values(gcc.seller_valuer, gcc.X, gcc.Y, entry.buyer_rule, rules, sign=-1.0).max()
            else:
                best = entry.response.snell.root_value
        gaps.append(float(best - achieved))
    return np.array(gaps)


def iteration_violations(tree: EventTree, result: NashResult) -> dict:
    """Count path-level violations of the iteration's structural properties (full trees).

    ``monotone``: ``r_{k+2} <= r_k``.  ``equal_implies_maturity``: where two
    consecutive rules stop together, every earlier rule stops at maturity.
    ``tilde_bound``: where ``r_k < r_{k+1}``, the capped hit rule of
    response ``k+2`` stops no later than ``r_k``.
    """
    tree.require_full("iteration_violations")
    seq = result.iterates
    times = np.array([stopping_times(tree, r) for r in seq])
    tildes = {}
    for j, entry in enumerate(result.trace):
        tildes[j + 2] = stopping_times(tree, entry.response.tilde_rule)
    out = {"monotone": 0, "equal_implies_maturity": 0, "tilde_bound": 0}
    for k in range(len(seq) - 2):
        out["monotone"] += int(np.sum(times[k + 2] > times[k]))
    for n in range(1, len(seq)):
        same = times[n] == times[n - 1]
        out["equal_implies_maturity"] += int(np.sum(same[None, :] & (times[:n] != tree.steps)))
    for k in range(len(seq) - 2):
        if k + 2 in tildes:
            region = times[k] < times[k + 1]
            out["tilde_bound"] += int(np.sum(region & (tildes[k + 2] > times[k])))
    return out


# -- complete markets -------------------------------------------------------------------

def is_complete(tree: EventTree) -> bool:
    """Every step has exactly ``rank(dS) + 1`` branches and no arbitrage."""
    inner = tree.nonterminals
    for node in inner:
        real = tree.child_mask[node]
        x = tree.increments[node][real]
        rank = np.linalg.matrix_rank(x - x.mean(axis=0)) if tree.n_assets else 0
        if real.sum() != rank + 1:
            return False
    return bool(no_arbitrage_mask(tree).all())


def zero_sum_game_value(tree: EventTree, X, Y, q) -> np.ndarray:
    """Classical Dynkin value ``min(Y, max(X, E^q_t[v_{t+1}]))`` with ``v_T = X_T``."""
    X = as_process(tree, X, "X")
    Y = as_process(tree, Y, "Y")
    v = X.copy()
    for nodes in reversed(tree.levels[:-1]):
        ch = tree.children[nodes]
        cont = (q[nodes] * np.where(ch >= 0, v[np.maximum(ch, 0)], 0.0)).sum(axis=1)
        v[nodes] = np.minimum(Y[nodes], np.maximum(X[nodes], cont))
    return v


@dataclass(frozen=True)
class CompleteMarketReport:
    game_value: float
    j_buyer: float
    j_seller: float
    value_error: float
    zero_sum_error: float
    invariant_rules: bool
    invariant_value_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return (self.value_error <= self.tol and self.zero_sum_error <= self.tol
                and self.invariant_rules and self.invariant_value_error <= self.tol)


def complete_market_crosscheck(gcc: GccSpec, first_mover: str = BUYER, alpha_scale: float = 2.0,
                               endowment_shift: float = 1.0, tol: float = 1e-9) -> CompleteMarketReport:
    """Compare the Nash iteration with the zero-sum Dynkin recursion on a complete tree.

    The iteration is rerun with scaled risk aversions and shifted endowments;
    rules and values must not move.
    """
    tree = gcc.tree
    if not is_complete(tree):
        raise ContractError("complete_market_crosscheck needs a complete tree")
    q = emmm(tree).transition_prob
    val = float(zero_sum_game_value(tree, gcc.X, gcc.Y, q)[tree.root])
    res = nash_iterate(gcc, first_mover)

    def shifted(agent):
        C = agent.endowment_on(tree) + endowment_shift
        return Agent(agent.risk_aversion * alpha_scale, C)

    other = GccSpec(tree, gcc.X, gcc.Y, shifted(gcc.buyer), shifted(gcc.seller))
    res2 = nash_iterate(other, first_mover)
    same = (np.array_equal(res.buyer_rule, res2.buyer_rule)
            and np.array_equal(res.seller_rule, res2.seller_rule))
    inv = max(abs(res.j_buyer - res2.j_buyer), abs(res.j_seller - res2.j_seller))
    return CompleteMarketReport(val, res.j_buyer, res.j_seller, abs(res.j_buyer - val),
                                abs(res.j_buyer + res.j_seller), same, inv, tol)


def risk_neutral_value(tree: EventTree, H) -> np.ndarray:
    """``E^{Q*}_t[H]`` on a complete tree (linear pricing oracle)."""
    if not is_complete(tree):
        raise ContractError("risk-neutral pricing needs a complete tree")
    q = emmm(tree).transition_prob
    values = np.zeros(tree.n_nodes)
    values[tree.terminals] = np.asarray(H, dtype=float)
    for nodes in reversed(tree.levels[:-1]):
        ch = tree.children[nodes]
        values[nodes] = (q[nodes] * np.where(ch >= 0, values[np.maximum(ch, 0)], 0.0)).sum(axis=1)
    return values


def risk_neutral_snell(tree: EventTree, L) -> np.ndarray:
    """Classical Snell envelope ``max(L, E^{Q*}_t[V_{t+1}])`` on a complete tree."""
    if not is_complete(tree):
        raise ContractError("risk-neutral pricing needs a complete tree")
    L = as_process(tree, L, "L")
    q = emmm(tree).transition_prob
    v = L.copy()
    for nodes in reversed(tree.levels[:-1]):
        ch = tree.children[nodes]
        cont = (q[nodes] * np.where(ch >= 0, v[np.maximum(ch, 0)], 0.0)).sum(axis=1)
        v[nodes] = np.maximum(L[nodes], cont)
    return v
