"""Finite event trees, adapted processes and stopping rules.

An :class:`EventTree` stores a finite filtration node by node.  Each node
knows its time index, its ordered children, the transition probability to
each child and the increment of every traded asset along that branch.
Processes are plain ``numpy`` arrays with one entry per node, terminal
claims are arrays with one entry per terminal node (ordered as
``tree.terminals``) and stopping rules are boolean arrays with one entry per
node.

Trees are normally *full* (every node has exactly one parent, so a node is a
path prefix).  A recombining lattice can be built as a convenience for
Markov problems; it is a DAG on which backward recursions still work but
path functionals (lifting a stopped payoff to ``F_T``, enumerating all
stopping times) are not available.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

PROB_TOL = 1e-12


class ModelError(ValueError):
    """Raised when a tree or a process cannot represent a valid model."""


class ContractError(ValueError):
    """Raised when inputs do not live on the same tree or break a precondition."""


class DominationError(ContractError):
    """Raised by :func:`hitting_rule` when ``V < L - tol`` somewhere."""


class PathDependenceError(ContractError):
    """A rule built on a recombining lattice would need path information."""


@dataclass(frozen=True, eq=False)
class EventTree:
    """Finite filtered probability space with traded-asset increments.

    Parameters
    ----------
    time : (n,) int array
        Time index of every node, ``0 .. steps``.
    children : (n, b) int array
        Child node indices, ``-1`` marks padding (and terminal nodes).
    prob : (n, b) float array
        Transition probabilities, ``0`` on padding.
    increments : (n, b, d) float array
        Asset increments ``dS`` along each branch.
    horizon : float
        Calendar length ``T`` of the grid (years).
    recombining : bool
        True for lattices where nodes may have several parents.
    ids : sequence, optional
        External node identifiers (defaults to ``0 .. n-1``).
    """

    time: np.ndarray
    children: np.ndarray
    prob: np.ndarray
    increments: np.ndarray
    horizon: float = 1.0
    recombining: bool = False
    ids: tuple = field(default=None)

    def __post_init__(self):
        time = np.asarray(self.time, dtype=np.int64)
        children = np.asarray(self.children, dtype=np.int64)
        prob = np.asarray(self.prob, dtype=float)
        inc = np.asarray(self.increments, dtype=float)
        if children.ndim != 2 or prob.shape != children.shape:
            raise ModelError("children and prob must be (n, b) arrays of equal shape")
        if inc.ndim != 3 or inc.shape[:2] != children.shape:
            raise ModelError("increments must have shape (n, b, d)")
        if time.shape != (children.shape[0],):
            raise ModelError("time must have one entry per node")
        if self.horizon <= 0:
            raise ModelError("horizon must be positive")
        for name, arr in (("time", time), ("children", children), ("prob", prob), ("increments", inc)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ids = tuple(range(len(time))) if self.ids is None else tuple(self.ids)
        if len(ids) != len(time):
            raise ModelError("ids must have one entry per node")
        object.__setattr__(self, "ids", ids)

    # -- structure -------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.time)

    @property
    def n_assets(self) -> int:
        return self.increments.shape[2]

    @cached_property
    def steps(self) -> int:
        return int(self.time.max())

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @cached_property
    def root(self) -> int:
        roots = np.flatnonzero(self.time == 0)
        if len(roots) != 1:
            raise ModelError(f"expected exactly one root, found {len(roots)}")
        return int(roots[0])

    @cached_property
    def levels(self) -> list:
        return [np.flatnonzero(self.time == k) for k in range(self.steps + 1)]

    @cached_property
    def is_terminal(self) -> np.ndarray:
        return (self.children < 0).all(axis=1)

    @cached_property
    def terminals(self) -> np.ndarray:
        return np.flatnonzero(self.is_terminal)

    @cached_property
    def nonterminals(self) -> np.ndarray:
        return np.flatnonzero(~self.is_terminal)

    @cached_property
    def terminal_position(self) -> np.ndarray:
        """Map node index -> position in ``terminals`` (``-1`` elsewhere)."""
        pos = np.full(self.n_nodes, -1, dtype=np.int64)
        pos[self.terminals] = np.arange(len(self.terminals))
        return pos

    @cached_property
    def child_mask(self) -> np.ndarray:
        return self.children >= 0

    @cached_property
    def parent(self) -> np.ndarray:
        """Parent index per node (first parent on a lattice, ``-1`` at the root)."""
        par = np.full(self.n_nodes, -1, dtype=np.int64)
        rows, cols = np.nonzero(self.child_mask)
        # reverse order so the first listed parent wins
        par[self.children[rows, cols][::-1]] = rows[::-1]
        return par

    @cached_property
    def ancestors(self) -> np.ndarray:
        """``(n, steps+1)`` array: ancestor of each node at every earlier time (full trees)."""
        self.require_full("ancestor table")
        anc = np.full((self.n_nodes, self.steps + 1), -1, dtype=np.int64)
        for k, nodes in enumerate(self.levels):
            if k > 0:
                anc[nodes, :k] = anc[self.parent[nodes], :k]
            anc[nodes, k] = nodes
        return anc

    def require_full(self, what: str) -> None:
        if self.recombining:
            raise ContractError(f"{what} requires a full (non-recombining) event tree")

    def with_prob(self, prob) -> "EventTree":
        """Same tree with different transition weights."""
        return EventTree(self.time, self.children, prob, self.increments,
                         self.horizon, self.recombining, self.ids)

    def years(self) -> np.ndarray:
        return self.time * self.dt

    def __repr__(self):
        kind = "lattice" if self.recombining else "tree"
        return (f"EventTree({kind}, steps={self.steps}, nodes={self.n_nodes}, "
                f"assets={self.n_assets}, T={self.horizon:g})")


def from_parents(time, parent, prob, increments, horizon=1.0, ids=None) -> EventTree:
    """Build a full tree from per-node ``parent``, ``prob`` (of reaching the
    node from its parent) and ``increments`` (``dS`` along the incoming branch).

    Nodes are re-indexed level by level; children keep their input order.
    """
    time = np.asarray(time, dtype=np.int64)
    parent = np.asarray(parent, dtype=np.int64)
    n = len(time)
    inc = np.asarray(increments, dtype=float).reshape(n, -1)
    prob = np.asarray(prob, dtype=float)
    order = np.lexsort((np.arange(n), time))
    new_index = np.empty(n, dtype=np.int64)
    new_index[order] = np.arange(n)
    kids = [[] for _ in range(n)]
    for node in order:
        p = parent[node]
        if p >= 0:
            if not 0 <= p < n:
                raise ModelError(f"node {node}: parent {p} out of range")
            kids[p].append(node)
        elif time[node] != 0:
            raise ModelError(f"node {node}: only the root may lack a parent")
    b = max((len(k) for k in kids), default=0)
    children = np.full((n, max(b, 1)), -1, dtype=np.int64)
    cprob = np.zeros((n, max(b, 1)))
    cinc = np.zeros((n, max(b, 1), inc.shape[1]))
    for node in range(n):
        row = new_index[node]
        for j, c in enumerate(kids[node]):
            children[row, j] = new_index[c]
            cprob[row, j] = prob[c]
            cinc[row, j] = inc[c]
    ext_ids = None if ids is None else [ids[i] for i in order]
    return EventTree(time[order], children, cprob, cinc, horizon, False, ext_ids)


def _full_tree_from_branching(steps, branch_prob, branch_inc, horizon):
    """Full tree where every non-terminal node uses the same branch pattern."""
    b = len(branch_prob)
    counts = [b ** k for k in range(steps + 1)]
    n = sum(counts)
    time = np.repeat(np.arange(steps + 1), counts)
    children = np.full((n, b), -1, dtype=np.int64)
    n_inner = n - counts[-1]
    children[:n_inner] = 1 + b * np.arange(n_inner)[:, None] + np.arange(b)[None, :]
    prob = np.zeros((n, b))
    prob[:n_inner] = branch_prob
    inc = np.zeros((n, b, branch_inc.shape[1]))
    inc[:n_inner] = branch_inc
    return EventTree(time, children, prob, inc, horizon, False)


def _driver_values(tree: EventTree, branch_moves: np.ndarray) -> np.ndarray:
    """Cumulate per-branch moves (same pattern at every node) into a node process."""
    values = np.zeros(tree.n_nodes)
    for nodes in tree.levels[:-1]:
        ch = tree.children[nodes]
        values[ch] = values[nodes][:, None] + branch_moves[None, :]
    return values


def build_binomial(steps: int, horizon: float = 1.0, drift: float = 0.0, vol: float = 1.0,
                   traded: bool = False, recombine: bool = False):
    """Symmetric random-walk discretisation of a Brownian driver.

    ``W`` moves by ``+-vol*sqrt(dt)`` with probability 1/2.  If ``traded`` the
    asset increment equals the ``W`` increment (complete market), otherwise
    the tree carries no traded asset.

    Returns
    -------
    tree : EventTree
    drivers : dict
        ``W`` (driftless walk), ``t`` (calendar time) and ``drifted``
        (``W + drift * t``), all as node processes.
    """
    if int(steps) != steps or steps < 1:
        raise ModelError("steps must be a positive integer")
    if vol <= 0 or horizon <= 0:
        raise ModelError("vol and horizon must be positive")
    steps = int(steps)
    dt = horizon / steps
    h = vol * np.sqrt(dt)
    moves = np.array([h, -h])
    d = 1 if traded else 0
    branch_inc = moves[:, None] if traded else np.zeros((2, 0))
    if recombine:
        offsets = np.cumsum([0] + [k + 1 for k in range(steps + 1)])
        n = offsets[-1]
        time = np.concatenate([np.full(k + 1, k) for k in range(steps + 1)])
        j = np.concatenate([np.arange(k + 1) for k in range(steps + 1)])  # number of down moves
        children = np.full((n, 2), -1, dtype=np.int64)
        inner = time < steps
        children[inner, 0] = offsets[time[inner] + 1] + j[inner]
        children[inner, 1] = offsets[time[inner] + 1] + j[inner] + 1
        prob = np.where(inner[:, None], 0.5, 0.0) * np.ones((1, 2))
        inc = np.zeros((n, 2, d))
        inc[inner] = branch_inc
        tree = EventTree(time, children, prob, inc, horizon, True)
        W = h * (time - 2 * j)
    else:
        tree = _full_tree_from_branching(steps, np.array([0.5, 0.5]), branch_inc, horizon)
        W = _driver_values(tree, moves)
    t = tree.years()
    return tree, {"W": W, "t": t, "drifted": W + drift * t}


_CORRELATION_PATTERNS = {
    # untraded-driver moves (in units of untraded_vol*sqrt(dt)) against dS = [+, 0, -]
    "positive": np.array([1.0, -1.0, 0.0]) * np.sqrt(1.5),
    "negative": np.array([-1.0, 1.0, 0.0]) * np.sqrt(1.5),
    "independent": np.array([1.0, -2.0, 1.0]) / np.sqrt(2.0),
}


def build_incomplete_trinomial(steps: int, horizon: float = 1.0, traded_vol: float = 1.0,
                               untraded_vol: float = 1.0, correlation: str = "positive",
                               probs=None, increments=None):
    """Trinomial tree with one traded asset and an imperfectly spanned driver.

    By default the traded asset moves ``traded_vol*sqrt(1.5 dt) * [+1, 0, -1]``
    with probabilities 1/3, so ``dS`` has variance ``traded_vol**2 dt``.  The
    untraded driver ``U`` follows one of the patterns in
    ``{"positive", "negative", "independent"}`` (correlation 0.5, -0.5, 0 with
    the traded asset under uniform probabilities).  ``probs`` and
    ``increments`` override the branch pattern.

    Returns ``(tree, drivers)`` with drivers ``S`` (traded price), ``U``
    (untraded driver) and ``t``.
    """
    if int(steps) != steps or steps < 1:
        raise ModelError("steps must be a positive integer")
    if traded_vol <= 0 or untraded_vol <= 0 or horizon <= 0:
        raise ModelError("vols and horizon must be positive")
    if correlation not in _CORRELATION_PATTERNS:
        raise ModelError(f"unknown correlation pattern {correlation!r}")
    steps = int(steps)
    dt = horizon / steps
    probs = np.full(3, 1 / 3) if probs is None else np.asarray(probs, dtype=float)
    if increments is None:
        increments = traded_vol * np.sqrt(1.5 * dt) * np.array([1.0, 0.0, -1.0])
    increments = np.asarray(increments, dtype=float)
    if probs.shape != (3,) or increments.shape != (3,):
        raise ModelError("trinomial patterns need exactly three branches")
    tree = _full_tree_from_branching(steps, probs, increments[:, None], horizon)
    report = validate_tree(tree)
    if not report.ok:
        raise ModelError(f"invalid trinomial model: {report.violations[0]}")
    u_moves = untraded_vol * np.sqrt(dt) * _CORRELATION_PATTERNS[correlation]
    return tree, {"S": _driver_values(tree, increments), "U": _driver_values(tree, u_moves),
                  "t": tree.years()}


def random_tree(rng: np.random.Generator, steps: int, branching: int = 3,
                n_assets: int = 1, min_prob: float = 0.05) -> EventTree:
    """Random full tree with per-node random probabilities and arbitrage-free increments.

    Used by the property suites; every node draws its own increments so
    the market is incomplete whenever ``branching > n_assets + 1``.
    """
    counts = [branching ** k for k in range(steps + 1)]
    base = _full_tree_from_branching(steps, np.full(branching, 1 / branching),
                                     np.zeros((branching, n_assets)), 1.0)
    inner = base.nonterminals
    m = len(inner)
    raw = rng.dirichlet(np.ones(branching), size=m)
    prob = min_prob + (1 - branching * min_prob) * raw
    inc = rng.normal(size=(m, branching, n_assets))
    if n_assets == 1 and branching >= 2:
        # force both signs so 0 is interior
        inc[:, 0, 0] = np.abs(inc[:, 0, 0]) + 0.1
        inc[:, 1, 0] = -np.abs(inc[:, 1, 0]) - 0.1
    full_prob = np.zeros_like(base.prob)
    full_prob[inner] = prob
    full_inc = np.zeros_like(base.increments)
    full_inc[inner] = inc
    tree = EventTree(base.time, base.children, full_prob, full_inc, 1.0 * steps, False)
    assert sum(counts) == tree.n_nodes
    return tree


# -- validation -------------------------------------------------------------

@dataclass
class ValidationReport:
    """Violations found by :func:`validate_tree` as ``(node_id, kind, message)``."""

    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, node_id, kind, message):
        self.violations.append((node_id, kind, message))


def _relint_contains_zero(points: np.ndarray) -> bool:
    """True iff 0 is in the relative interior of conv(points), points (b, d)."""
    b, d = points.shape
    if d == 0:
        return True
    if d == 1:
        x = points[:, 0]
        return bool((x.min() < 0 < x.max()) or np.all(x == 0))
    # maximise t subject to w_i >= t, sum w = 1, sum w_i x_i = 0
    c = np.zeros(b + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-np.eye(b), np.ones((b, 1))])
    a_eq = np.vstack([np.append(np.ones(b), 0.0), np.hstack([points.T, np.zeros((d, 1))])])
    b_eq = np.zeros(d + 1)
    b_eq[0] = 1.0
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(b), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, 1)] * b + [(None, 1)], method="highs")
    return bool(res.status == 0 and -res.fun > 1e-12)


def no_arbitrage_mask(tree: EventTree) -> np.ndarray:
    """Per-node one-step no-arbitrage flag (terminal nodes are ``True``)."""
    ok = np.ones(tree.n_nodes, dtype=bool)
    if tree.n_assets == 0:
        return ok
    inner = tree.nonterminals
    mask = tree.child_mask[inner]
    if tree.n_assets == 1:
        x = tree.increments[inner, :, 0]
        lo = np.where(mask, x, np.inf).min(axis=1)
        hi = np.where(mask, x, -np.inf).max(axis=1)
        zero = np.where(mask, x == 0, True).all(axis=1)
        ok[inner] = ((lo < 0) & (hi > 0)) | zero
        return ok
    for row, node in enumerate(inner):
        ok[node] = _relint_contains_zero(tree.increments[node][mask[row]])
    return ok


def validate_tree(tree: EventTree) -> ValidationReport:
    """Check probabilities, structure and one-step no-arbitrage node by node."""
    report = ValidationReport()
    ids = tree.ids
    roots = np.flatnonzero(tree.time == 0)
    if len(roots) != 1:
        report.add(None, "structure", f"expected one root, found {len(roots)}")
    steps = int(tree.time.max())
    mask = tree.child_mask
    for node in range(tree.n_nodes):
        kids = tree.children[node][mask[node]]
        if len(kids) == 0:
            if tree.time[node] != steps:
                report.add(ids[node], "structure", f"leaf at time {tree.time[node]} before horizon {steps}")
            continue
        if np.any(kids >= tree.n_nodes):
            report.add(ids[node], "structure", "child index out of range")
            continue
        if np.any(tree.time[kids] != tree.time[node] + 1):
            report.add(ids[node], "structure", "child not at next time index")
        p = tree.prob[node][mask[node]]
        if np.any(p <= 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            report.add(ids[node], "probability", f"probabilities outside (0, 1]: {p.tolist()}")
        if abs(p.sum() - 1.0) > PROB_TOL:
            report.add(ids[node], "normalization", f"probabilities sum to {p.sum():.15g}")
        if not np.all(np.isfinite(tree.increments[node][mask[node]])):
            report.add(ids[node], "increment", "non-finite increment")
    if not tree.recombining:
        n_parents = np.bincount(tree.children[mask], minlength=tree.n_nodes)
        for node in np.flatnonzero(n_parents > 1):
            report.add(ids[node], "structure", "node has several parents in a full tree")
    arb = ~no_arbitrage_mask(tree)
    for node in np.flatnonzero(arb):
        report.add(ids[node], "arbitrage", "0 is not in the relative interior of the increments' hull")
    return report


# -- measures along the tree ------------------------------------------------

def reach_probabilities(tree: EventTree, prob=None) -> np.ndarray:
    """Probability of reaching each node from the root under ``prob`` (defaults to P)."""
    prob = tree.prob if prob is None else prob
    reach = np.zeros(tree.n_nodes)
    reach[tree.root] = 1.0
    for nodes in tree.levels[:-1]:
        ch = tree.children[nodes]
        valid = ch >= 0
        contrib = reach[nodes][:, None] * prob[nodes]
        np.add.at(reach, ch[valid], contrib[valid])
    return reach


def expectation(tree: EventTree, claim, prob=None) -> float:
    """``E[claim]`` for a terminal claim under the transition weights ``prob``."""
    reach = reach_probabilities(tree, prob)[tree.terminals]
    return float(np.dot(reach, np.asarray(claim, dtype=float)))


def conditional_expectation(tree: EventTree, values, prob=None) -> np.ndarray:
    """One-step conditional expectation ``E_t[values_{t+1}]`` for every non-terminal node."""
    prob = tree.prob if prob is None else prob
    out = np.full(tree.n_nodes, np.nan)
    inner = tree.nonterminals
    ch = tree.children[inner]
    vals = np.where(ch >= 0, np.asarray(values)[np.maximum(ch, 0)], 0.0)
    out[inner] = (prob[inner] * vals).sum(axis=1)
    return out


# -- processes and stopping rules -------------------------------------------

def as_process(tree: EventTree, values, name: str = "process") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (tree.n_nodes,):
        raise ContractError(f"{name} must have one value per node ({tree.n_nodes}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} has non-finite values")
    return arr


def as_claim(tree: EventTree, values, name: str = "claim") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if np.ndim(arr) == 0:
        arr = np.full(len(tree.terminals), float(arr))
    if arr.shape[-1:] != (len(tree.terminals),):
        raise ContractError(f"{name} must have one value per terminal node ({len(tree.terminals)})")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} has non-finite values")
    return arr


def as_rule(tree: EventTree, rule, name: str = "rule") -> np.ndarray:
    """Validate a stopping rule; leading batch axes ``(..., n)`` are allowed."""
    arr = np.asarray(rule, dtype=bool)
    if arr.shape[-1:] != (tree.n_nodes,):
        raise ContractError(f"{name} must have one flag per node ({tree.n_nodes})")
    if not arr[..., tree.terminals].all():
        raise ContractError(f"{name} must stop at every terminal node")
    return arr


def terminal_claim(tree: EventTree, process) -> np.ndarray:
    """Restrict a node process to the terminal nodes."""
    return np.asarray(process, dtype=float)[tree.terminals]


def stop_at_maturity(tree: EventTree) -> np.ndarray:
    """The rule ``tau = T``."""
    return tree.is_terminal.copy()


def stop_immediately(tree: EventTree) -> np.ndarray:
    """The rule ``tau = 0``."""
    return np.ones(tree.n_nodes, dtype=bool)


def stop_at_time(tree: EventTree, k: int) -> np.ndarray:
    """The deterministic rule ``tau = k`` (grid index)."""
    return tree.time >= k


def canonical_rule(tree: EventTree, rule) -> np.ndarray:
    """Mark every node at or after the first stop on its path.

    Two markings that induce the same stopping time have the same canonical
    form on a full tree.  Lattice rules are returned unchanged.
    """
    rule = as_rule(tree, rule)
    if tree.recombining:
        return rule.copy()
    out = rule.copy()
    for nodes in tree.levels[1:]:
        out[..., nodes] |= out[..., tree.parent[nodes]]
    return out


def rules_equal(tree: EventTree, a, b) -> bool:
    return bool(np.array_equal(canonical_rule(tree, a), canonical_rule(tree, b)))


def first_stop_nodes(tree: EventTree, rule) -> np.ndarray:
    """Node at which ``rule`` stops, for every path (indexed like ``terminals``)."""
    tree.require_full("first_stop_nodes")
    rule = as_rule(tree, rule)
    first = np.where(rule, np.arange(tree.n_nodes), -1)
    for nodes in tree.levels[1:]:
        par = first[..., tree.parent[nodes]]
        first[..., nodes] = np.where(par >= 0, par, first[..., nodes])
    return first[..., tree.terminals]


def stopping_times(tree: EventTree, rule) -> np.ndarray:
    """Induced stopping time (grid index) per path."""
    return tree.time[first_stop_nodes(tree, rule)]


def lift(tree: EventTree, process, rule) -> np.ndarray:
    """``L_tau`` as a terminal claim: the process read at the first stop on each path."""
    return np.asarray(process, dtype=float)[first_stop_nodes(tree, rule)]


def stopped_payoff(tree: EventTree, X, Y, tau, sigma) -> np.ndarray:
    """GCC payoff ``X_tau 1{tau <= sigma} + Y_sigma 1{sigma < tau}`` per path.

    The riskless rate is zero, so the payment at ``tau ^ sigma`` is carried
    unchanged to the terminal node of each path.  ``tau`` and ``sigma`` may
    carry broadcastable batch axes.
    """
    X = as_process(tree, X, "X")
    Y = as_process(tree, Y, "Y")
    t_node = first_stop_nodes(tree, tau)
    s_node = first_stop_nodes(tree, sigma)
    buyer_first = tree.time[t_node] <= tree.time[s_node]
    return np.where(buyer_first, X[t_node], Y[s_node])


def default_hitting_tol(L) -> float:
    return 1e-9 * (1.0 + float(np.max(np.abs(L))))


def hitting_rule(tree: EventTree, V, L, tol=None) -> np.ndarray:
    """Mark the nodes where ``V`` touches ``L`` (``V - L <= tol``); terminals always stop."""
    V = as_process(tree, V, "V")
    L = as_process(tree, L, "L")
    tol = default_hitting_tol(L) if tol is None else tol
    gap = V - L
    if np.any(gap < -tol):
        bad = int(np.argmin(gap))
        raise DominationError(f"V < L - tol at node {tree.ids[bad]} (gap {gap[bad]:.3e})")
    return (gap <= tol) | tree.is_terminal


def enumerate_stopping_rules(tree: EventTree, cap: int = 16) -> np.ndarray:
    """All markings of the non-terminal nodes, terminals forced to stop.

    Returns a ``(2**k, n)`` boolean array for ``k`` non-terminal nodes; row
    ``0`` never stops before maturity, the last row stops at the root.
    """
    tree.require_full("enumerate_stopping_rules")
    inner = tree.nonterminals
    k = len(inner)
    if k > cap:
        raise ContractError(f"tree has {k} non-terminal nodes; enumeration needs cap >= {k} "
                            f"(2**{k} rules), current cap is {cap}")
    codes = np.arange(2 ** k, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(k)[None, :]) & 1).astype(bool)
    rules = np.zeros((2 ** k, tree.n_nodes), dtype=bool)
    rules[:, tree.terminals] = True
    rules[:, inner] = bits
    return rules


def iter_paths(tree: EventTree):
    """Yield each path as an array of node indices (full trees)."""
    anc = tree.ancestors
    for leaf in tree.terminals:
        yield anc[leaf]


# -- forward propagation of path states --------------------------------------

def propagate_states(tree: EventTree, root_state: int, step) -> np.ndarray:
    """Forward pass of path-state bitmasks.

    ``step(nodes, masks)`` returns the outgoing bitmask for each node given
    the bitmask of states that can arrive there; outgoing masks are OR-ed
    into the children.  On a full tree each mask carries a single state.
    """
    masks = np.zeros(tree.n_nodes, dtype=np.int64)
    masks[tree.root] = root_state
    for nodes in tree.levels[:-1]:
        out = np.asarray(step(nodes, masks[nodes]), dtype=np.int64)
        ch = tree.children[nodes]
        valid = ch >= 0
        np.bitwise_or.at(masks, ch[valid], np.broadcast_to(out[:, None], ch.shape)[valid])
    return masks


def pathwise_leq(tree: EventTree, first, second) -> int:
    """Count nodes witnessing ``first > second`` on some path.

    Zero means the stopping time of ``first`` is at most that of ``second``
    on every path.  Works on lattices as well as full trees.
    """
    first = as_rule(tree, first, "first")
    second = as_rule(tree, second, "second")
    # bit (a_stopped, b_stopped) encoded as 1 << (2*a + b)
    violations = 0

    def step(nodes, masks):
        nonlocal violations
        out = np.zeros(len(nodes), dtype=np.int64)
        for a, b in itertools.product((0, 1), repeat=2):
            present = (masks >> (2 * a + b)) & 1 == 1
            a_new = (a == 1) | first[nodes]
            b_new = (b == 1) | second[nodes]
            violations += int(np.sum(present & b_new & ~a_new))
            out |= np.where(present, 1 << (2 * a_new.astype(np.int64) + b_new.astype(np.int64)), 0)
        return out

    masks = propagate_states(tree, 1, step)
    last = tree.levels[-1]
    for a, b in itertools.product((0, 1), repeat=2):
        present = (masks[last] >> (2 * a + b)) & 1 == 1
        a_new = (a == 1) | first[last]
        b_new = (b == 1) | second[last]
        violations += int(np.sum(present & b_new & ~a_new))
    return violations
