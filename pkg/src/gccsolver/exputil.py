"""Exponential-utility building blocks on an event tree.

The workhorse is the one-step certainty equivalent

    CE = -(1/alpha) * log min_theta sum_i p_i exp(-alpha (v_i + theta . dS_i)),

solved for whole time slices at once.  A two-branch single-asset step has a
closed form; everything else goes through a damped Newton iteration on the
log-sum-exp objective.

The entropy minimizing martingale measure is computed along a different
route (root finding on the martingale condition with scipy) so that it can
serve as an independent check of the one-step solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import logsumexp

from .lattice import (ContractError, EventTree, ModelError, _relint_contains_zero,
                      as_claim, no_arbitrage_mask)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 500
MAX_LOG_STEP = 4.0


class ArbitrageError(ModelError):
    """The one-step problem is unbounded because the increments admit arbitrage."""


class ConvergenceError(RuntimeError):
    """Newton iteration failed to reach the gradient tolerance."""


@dataclass(frozen=True)
class Agent:
    """Exponential-utility agent: risk aversion and terminal endowment."""

    risk_aversion: float
    endowment: object = 0.0

    def __post_init__(self):
        if not self.risk_aversion > 0 or not np.isfinite(self.risk_aversion):
            raise ContractError("risk aversion must be a positive finite number")
        c = np.asarray(self.endowment, dtype=float)
        if not np.all(np.isfinite(c)):
            raise ContractError("endowment must be finite")

    def endowment_on(self, tree: EventTree) -> np.ndarray:
        return as_claim(tree, self.endowment, "endowment")


@dataclass(frozen=True)
class OneStepSolution:
    certainty_equivalent: float
    holding: np.ndarray
    dual_weights: np.ndarray


@dataclass(frozen=True, eq=False)
class TiltedTree:
    """``P_C`` with density ``exp(-alpha C) / E[exp(-alpha C)]`` as transition weights.

    ``tree`` is the base tree re-weighted; ``log_normalizer`` holds
    ``log E_t[exp(-alpha C)]`` at every node.
    """

    base: EventTree
    tree: EventTree
    log_normalizer: np.ndarray

    @property
    def prob(self) -> np.ndarray:
        return self.tree.prob


@dataclass(frozen=True, eq=False)
class MartingaleMeasure:
    """Transition weights of a martingale measure on ``tree`` (relative to ``tree.prob``).

    ``entropy_to_go`` is the conditional relative entropy at every node, so
    ``relative_entropy == entropy_to_go[root]``.  ``lambdas`` are the
    exponential-tilt coefficients of the entropy minimizer (zeros for
    sampled measures).  ``density`` is ``dQ/dP`` per path on full trees.
    """

    tree: EventTree
    transition_prob: np.ndarray
    entropy_to_go: np.ndarray
    lambdas: np.ndarray
    density: np.ndarray | None

    @property
    def relative_entropy(self) -> float:
        return float(self.entropy_to_go[self.tree.root])

    def martingale_residual(self) -> float:
        """Largest one-step drift ``|sum_i q_i dS_i|`` over all nodes."""
        if self.tree.n_assets == 0:
            return 0.0
        drift = np.einsum("nb,nbd->nd", self.transition_prob, self.tree.increments)
        return float(np.abs(drift).max())


# -- batched one-step solver ------------------------------------------------

def _lse(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """Log-sum-exp along ``axis`` with a max shift (``-inf`` entries allowed)."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)


def _prep_logp(prob: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(prob > 0, np.log(np.where(prob > 0, prob, 1.0)), -np.inf)


def _closed_form(logp, inc, values, alpha):
    """Two children, one asset: the martingale weights are fixed by dS."""
    d1, d2 = inc[:, 0, 0], inc[:, 1, 0]
    q1 = -d2 / (d1 - d2)
    q = np.stack([q1, 1.0 - q1], axis=1)
    logq = np.log(q)
    kl = (q * (logq - logp[:, :2])).sum(axis=1)
    ce = (q * values[:, :2]).sum(axis=1) + kl / alpha
    theta = ((logp[:, 0] - logq[:, 0]) - (logp[:, 1] - logq[:, 1])
             - alpha * (values[:, 0] - values[:, 1])) / (alpha * (d1 - d2))
    w = np.zeros_like(values)
    w[:, :2] = q
    return ce, theta[:, None], w


def _newton(logp, inc, values, alpha, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    m, b, d = inc.shape
    z = logp - alpha * np.where(np.isfinite(logp), values, 0.0)
    x = -alpha * inc
    scale = np.maximum(np.abs(inc).max(axis=(1, 2)), np.finfo(float).tiny)
    theta = np.zeros((m, d))
    radius = np.full(m, MAX_LOG_STEP)

    def evaluate(th):
        s = z + np.einsum("mbd,md->mb", x, th)
        f = _lse(s, axis=1)
        w = np.exp(s - f[:, None])
        return f, w

    f, w = evaluate(theta)
    active = np.ones(m, dtype=bool)
    for _ in range(max_iter):
        resid = np.einsum("mb,mbd->md", w, inc)
        active = np.abs(resid).max(axis=1) > tol * scale
        if not active.any():
            break
        idx = np.flatnonzero(active)
        wa, xa = w[idx], x[idx]
        g = np.einsum("mb,mbd->md", wa, xa)
        hess = np.einsum("mb,mbi,mbj->mij", wa, xa, xa) - g[:, :, None] * g[:, None, :]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if d == 1:
                step = -g / hess[:, 0]
            else:
                # the pseudo-inverse keeps the step inside span(dS), so theta stays minimum-norm
                pinv = np.linalg.pinv(hess, rcond=1e-13, hermitian=True)
                step = -np.einsum("mij,mj->mi", pinv, g)
        # weights collapsed onto one child (exp underflow): fall back to steepest descent
        flat = ~np.isfinite(step).all(axis=1) | ((g * step).sum(axis=1) >= 0)
        step[flat] = -g[flat]
        # trust region on the move of the exponents; it widens while full steps succeed
        reach = np.abs(np.einsum("mbd,md->mb", xa, step)).max(axis=1)
        capped = reach > radius[idx]
        step *= np.minimum(1.0, radius[idx] / np.maximum(reach, np.finfo(float).tiny))[:, None]
        slope = (g * step).sum(axis=1)
        t = np.ones(len(idx))
        f0 = f[idx]
        accepted = np.zeros(len(idx), dtype=bool)
        f_new = f0.copy()
        w_new = wa.copy()
        for _ in range(60):
            todo = ~accepted
            if not todo.any():
                break
            cand = theta[idx[todo]] + t[todo, None] * step[todo]
            s = z[idx[todo]] + np.einsum("mbd,md->mb", xa[todo], cand)
            fc = _lse(s, axis=1)
            # logsumexp round-off scales with its terms, not with the result
            slack = 16 * np.finfo(float).eps * (1.0 + np.abs(f0[todo]) + np.abs(np.where(np.isfinite(s), s, 0.0)).max(axis=1))
            ok = fc <= f0[todo] + 1e-4 * t[todo] * slope[todo] + slack
            sel = np.flatnonzero(todo)[ok]
            f_new[sel] = fc[ok]
            w_new[sel] = np.exp(s[ok] - fc[ok][:, None])
            accepted[sel] = True
            t[np.flatnonzero(todo)[~ok]] *= 0.5
        theta[idx[accepted]] += t[accepted, None] * step[accepted]
        radius[idx[accepted & capped & (t == 1.0)]] *= 2.0
        radius[idx[t < 1.0]] = np.maximum(MAX_LOG_STEP, radius[idx[t < 1.0]] / 2.0)
        f[idx] = f_new
        w[idx] = w_new
        if not accepted.any():
            break
    resid = np.abs(np.einsum("mb,mbd->md", w, inc)).max(axis=1)
    bad = resid > tol * scale
    if bad.any():
        for row in np.flatnonzero(bad):
            pts = inc[row][np.isfinite(logp[row])]
            if not _relint_contains_zero(pts):
                raise ArbitrageError("one-step increments admit arbitrage; minimisation diverges")
        # round-off floor: accept residuals a few hundred ulps above the target
        if np.any(resid[bad] > 1e-10 * scale[bad]):
            raise ConvergenceError(f"Newton did not converge (residual {resid[bad].max():.3e})")
    return -(f - _lse(logp, axis=1)) / alpha, theta, w


def solve_steps(prob, inc, values, alpha):
    """Vectorised one-step certainty equivalents.

    Parameters
    ----------
    prob : (m, b) array
        Transition weights (``0`` marks padding, which must be trailing).
    inc : (m, b, d) array
        Asset increments.
    values : (..., m, b) array
        Child values; leading axes are a batch sharing ``prob`` and ``inc``.
    alpha : float
        Risk aversion.

    Returns
    -------
    ce : (..., m) array
    theta : (..., m, d) array
    weights : (..., m, b) array
    """
    values = np.asarray(values, dtype=float)
    batch = values.shape[:-2]
    m, b = prob.shape
    d = inc.shape[2]
    logp = _prep_logp(prob)
    real = prob > 0
    v = np.where(real, values, 0.0)
    if not np.all(np.isfinite(v)):
        raise ContractError("child values must be finite")
    # shifting by the smallest child value makes constant rows exact
    low = np.where(real, v, np.inf).min(axis=-1)
    v = np.where(real, v - low[..., None], 0.0)
    if d == 0:
        z = logp - alpha * v
        f = _lse(z, axis=-1)
        w = np.exp(z - f[..., None])
        return low - (f - _lse(logp, axis=-1)) / alpha, np.zeros(batch + (m, 0)), w
    if d == 1:
        x = inc[:, :, 0]
        lo = np.where(real, x, np.inf).min(axis=1)
        hi = np.where(real, x, -np.inf).max(axis=1)
        zero = np.where(real, x == 0, True).all(axis=1)
        if np.any(~(((lo < 0) & (hi > 0)) | zero)):
            raise ArbitrageError("one-step increments admit arbitrage; minimisation diverges")
    k = int(np.prod(batch)) if batch else 1
    v2 = v.reshape(k * m, b)
    lp = np.broadcast_to(logp, (k, m, b)).reshape(k * m, b)
    ic = np.broadcast_to(inc, (k, m, b, d)).reshape(k * m, b, d)
    ce = np.empty(k * m)
    theta = np.zeros((k * m, d))
    w = np.zeros((k * m, b))
    n_real = real.sum(axis=1)
    cf_node = (d == 1) & (n_real == 2)
    if d == 1:
        cf_node &= inc[:, 0, 0] != inc[:, 1, 0]
    cf = np.broadcast_to(cf_node, (k, m)).reshape(-1)
    if cf.any():
        ce[cf], theta[cf], w[cf] = _closed_form(lp[cf], ic[cf], v2[cf], alpha)
    rest = ~cf
    if rest.any():
        ce[rest], theta[rest], w[rest] = _newton(lp[rest], ic[rest], v2[rest], alpha)
    return low + ce.reshape(batch + (m,)), theta.reshape(batch + (m, d)), w.reshape(batch + (m, b))


def one_step_ce(probs, increments, values, alpha) -> OneStepSolution:
    """Certainty equivalent, optimal holding and dual weights of a single step.

    >>> round(one_step_ce([0.5, 0.5], None, [1.0, 0.0], 1.0).certainty_equivalent, 6)
    0.379885
    """
    probs = np.asarray(probs, dtype=float)
    b = len(probs)
    if not alpha > 0:
        raise ContractError("alpha must be positive")
    if np.any(probs <= 0) or abs(probs.sum() - 1) > 1e-12:
        raise ContractError("probabilities must be positive and sum to one")
    inc = np.zeros((b, 0)) if increments is None else np.asarray(increments, dtype=float).reshape(b, -1)
    values = np.asarray(values, dtype=float)
    if values.shape != (b,) or not np.all(np.isfinite(values)):
        raise ContractError("values must be finite, one per child")
    ce, theta, w = solve_steps(probs[None], inc[None], values[None], alpha)
    return OneStepSolution(float(ce[0]), theta[0], w[0])


def backward_ce(tree: EventTree, prob, terminal_values, alpha, absorb=None, stop_values=None,
                floor=None, return_details=False, continuation=None):
    """Backward recursion of one-step certainty equivalents.

    ``terminal_values`` has shape ``(..., n_terminal)``.  Optional
    ``absorb`` (bool per node) with ``stop_values`` fixes the value at
    absorbing nodes; ``floor`` (per node, broadcastable to the batch) takes
    ``max(floor, continuation)`` which gives a Snell recursion.  If given,
    the array ``continuation`` receives the one-step values before flooring
    and absorption.
    """
    terminal_values = np.asarray(terminal_values, dtype=float)
    batch = terminal_values.shape[:-1]
    values = np.zeros(batch + (tree.n_nodes,))
    values[..., tree.terminals] = terminal_values
    if return_details:
        theta = np.zeros(batch + (tree.n_nodes, tree.n_assets))
        weights = np.zeros(batch + tree.prob.shape)
    for nodes in reversed(tree.levels[:-1]):
        ch = tree.children[nodes]
        child_vals = np.where(ch >= 0, values[..., np.maximum(ch, 0)], 0.0)
        ce, th, w = solve_steps(prob[nodes], tree.increments[nodes], child_vals, alpha)
        if continuation is not None:
            continuation[..., nodes] = ce
        if floor is not None:
            ce = np.maximum(np.asarray(floor)[..., nodes], ce)
        if absorb is not None:
            a = np.asarray(absorb)[..., nodes]
            ce = np.where(a, np.asarray(stop_values)[..., nodes], ce)
        values[..., nodes] = ce
        if return_details:
            theta[..., nodes, :] = th
            weights[..., nodes, :] = w
    if return_details:
        return values, theta, weights
    return values


# -- measures -----------------------------------------------------------------

def tilt_measure(tree: EventTree, C, alpha) -> TiltedTree:
    """Re-weight ``tree`` by ``exp(-alpha C)`` (computed in log space)."""
    C = as_claim(tree, C, "endowment")
    if np.all(C == C[0]):
        # constant density: the weights do not move
        return TiltedTree(tree, tree, np.full(tree.n_nodes, -alpha * C[0]))
    logp = _prep_logp(tree.prob)
    logm = np.zeros(tree.n_nodes)
    logm[tree.terminals] = -alpha * C
    new_prob = np.zeros_like(tree.prob)
    for nodes in reversed(tree.levels[:-1]):
        ch = tree.children[nodes]
        lc = np.where(ch >= 0, logm[np.maximum(ch, 0)], 0.0)
        s = logp[nodes] + lc
        ln = _lse(s, axis=1)
        logm[nodes] = ln
        new_prob[nodes] = np.where(ch >= 0, np.exp(s - ln[:, None]), 0.0)
    if not np.all(np.isfinite(logm)):
        raise FloatingPointError("endowment tilt overflowed")
    return TiltedTree(tree, tree.with_prob(new_prob), logm)


def _tilt_root(logw: np.ndarray, x: np.ndarray) -> float:
    """Find lambda with sum softmax(logw + lambda x) x = 0 (x one-dimensional)."""
    if np.all(x == 0):
        return 0.0

    def drift(lam):
        s = logw + lam * x
        e = np.exp(s - s.max())
        return float(np.dot(e, x) / e.sum())

    span = 1.0 / np.abs(x).max()
    lo, hi = -span, span
    for _ in range(200):
        if drift(lo) < 0:
            break
        lo *= 2
    for _ in range(200):
        if drift(hi) > 0:
            break
        hi *= 2
    return brentq(drift, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def _tilt_vector(logw: np.ndarray, x: np.ndarray) -> np.ndarray:
    def fun(lam):
        return logsumexp(logw + x @ lam)

    def jac(lam):
        s = logw + x @ lam
        w = np.exp(s - logsumexp(s))
        return w @ x

    def hess(lam):
        s = logw + x @ lam
        w = np.exp(s - logsumexp(s))
        g = w @ x
        return (x * w[:, None]).T @ x - np.outer(g, g)

    res = minimize(fun, np.zeros(x.shape[1]), jac=jac, hess=hess, method="trust-exact",
                   options={"gtol": 1e-14})
    return res.x


def _project(logw: np.ndarray, x: np.ndarray):
    """Exponentially tilt weights ``exp(logw)`` into a one-step martingale measure."""
    d = x.shape[1]
    if d == 0:
        lam = np.zeros(0)
    elif d == 1:
        lam = np.array([_tilt_root(logw, x[:, 0])])
    else:
        lam = _tilt_vector(logw, x)
    s = logw + x @ lam
    return np.exp(s - logsumexp(s)), lam


def _path_density(tree: EventTree, q: np.ndarray) -> np.ndarray | None:
    if tree.recombining:
        return None
    logz = np.zeros(tree.n_nodes)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(tree.prob > 0, np.log(q) - np.log(np.where(tree.prob > 0, tree.prob, 1.0)), 0.0)
    for nodes in tree.levels[:-1]:
        ch = tree.children[nodes]
        valid = ch >= 0
        logz[ch[valid]] = (logz[nodes][:, None] + ratio[nodes])[valid]
    return np.exp(logz[tree.terminals])


def _entropy_to_go(tree: EventTree, q: np.ndarray) -> np.ndarray:
    J = np.zeros(tree.n_nodes)
    for nodes in reversed(tree.levels[:-1]):
        ch = tree.children[nodes]
        qn, pn = q[nodes], tree.prob[nodes]
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(qn > 0, qn * (np.log(np.where(qn > 0, qn, 1.0)) - np.log(np.where(pn > 0, pn, 1.0))
                                          + J[np.maximum(ch, 0)]), 0.0)
        J[nodes] = term.sum(axis=1)
    return J


def emmm(tree) -> MartingaleMeasure:
    """Entropy minimizing martingale measure by backward dynamic programming.

    At each node the weights ``q_i ~ p_i exp(-J_i + lambda . dS_i)`` are
    tilted until ``sum_i q_i dS_i = 0``; ``J`` is the conditional entropy.
    Accepts an :class:`EventTree` or a :class:`TiltedTree` (then the result is
    relative to the tilted weights).
    """
    if isinstance(tree, TiltedTree):
        tree = tree.tree
    bad = ~no_arbitrage_mask(tree)
    if bad.any():
        raise ArbitrageError(f"arbitrage at node {tree.ids[int(np.flatnonzero(bad)[0])]}")
    d = tree.n_assets
    q = np.zeros_like(tree.prob)
    lambdas = np.zeros((tree.n_nodes, d))
    J = np.zeros(tree.n_nodes)
    logp = _prep_logp(tree.prob)
    for nodes in reversed(tree.levels[:-1]):
        ch = tree.children[nodes]
        Jc = np.where(ch >= 0, J[np.maximum(ch, 0)], 0.0)
        if d == 0:
            s = logp[nodes] - Jc
            qn = np.exp(s - logsumexp(s, axis=1)[:, None])
            q[nodes] = qn
        else:
            real = ch >= 0
            inc = tree.increments[nodes]
            two = (d == 1) & (real.sum(axis=1) == 2) & (inc[:, 0, 0] != inc[:, 1, 0])
            if two.any():
                # complete two-branch step: the martingale condition alone fixes q
                x1, x2 = inc[two, 0, 0], inc[two, 1, 0]
                q1 = -x2 / (x1 - x2)
                s0 = logp[nodes[two], :2] - Jc[two, :2]
                q[nodes[two], 0] = q1
                q[nodes[two], 1] = 1 - q1
                lambdas[nodes[two], 0] = ((np.log(q1) - s0[:, 0]) - (np.log1p(-q1) - s0[:, 1])) / (x1 - x2)
            for row in np.flatnonzero(~two):
                node = nodes[row]
                x = inc[row][real[row]]
                qn, lam = _project(logp[node][real[row]] - Jc[row][real[row]], x)
                q[node, real[row]] = qn
                lambdas[node] = lam
        with np.errstate(divide="ignore", invalid="ignore"):
            qn = q[nodes]
            term = np.where(qn > 0, qn * (np.log(np.where(qn > 0, qn, 1.0)) - np.where(qn > 0, logp[nodes], 0.0) + Jc), 0.0)
        J[nodes] = term.sum(axis=1)
    return MartingaleMeasure(tree, q, J, lambdas, _path_density(tree, q))


def martingale_measure(tree: EventTree, transition_prob) -> MartingaleMeasure:
    """Wrap arbitrary martingale transition weights (entropy relative to ``tree.prob``)."""
    q = np.asarray(transition_prob, dtype=float)
    if q.shape != tree.prob.shape:
        raise ContractError("transition weights must match the tree's (n, b) layout")
    if np.any((q > 0) != (tree.prob > 0)):
        raise ContractError("measure must be equivalent to the tree's weights")
    return MartingaleMeasure(tree, q, _entropy_to_go(tree, q), np.zeros((tree.n_nodes, tree.n_assets)),
                             _path_density(tree, q))


def sample_martingale_weights(tree: EventTree, rng: np.random.Generator, n: int,
                              center=None, spread: float = 1.0) -> np.ndarray:
    """Transition weights ``(n, nodes, b)`` of random equivalent martingale measures.

    Each node perturbs ``center`` (default: the tree's own weights) by a
    log-normal factor of size ``spread`` and re-projects onto the martingale
    condition by exponential tilting.
    """
    center = tree.prob if center is None else center
    inner = tree.nonterminals
    real = tree.child_mask[inner]
    logc = _prep_logp(center[inner])
    noise = rng.normal(size=(n,) + logc.shape) * spread
    logw = np.where(real, logc + noise, -np.inf)
    if tree.n_assets == 0:
        w = np.exp(logw - _lse(logw, axis=-1)[..., None])
    else:
        # dual weights of min_theta sum r_i exp(-theta dS_i) are the tilted martingale weights
        m, b = logc.shape
        r = np.exp(logw - _lse(logw, axis=-1)[..., None]).reshape(n * m, b)
        inc = np.broadcast_to(tree.increments[inner], (n, m, b, tree.n_assets)).reshape(n * m, b, -1)
        _, _, w = solve_steps(r, inc, np.zeros_like(r), 1.0)
        w = w.reshape(n, m, b)
    out = np.zeros((n,) + tree.prob.shape)
    out[:, inner] = np.where(real, w, 0.0)
    return out


def sample_extreme_mixtures(tree: EventTree, rng: np.random.Generator, n: int,
                            concentration: float = 1.0) -> np.ndarray:
    """Random martingale weights ``(n, nodes, b)`` for one traded asset (or none).

    One-step martingale measures on the line are mixtures of two-point
    measures (one child below, one above) and point masses on flat
    children.  The mixture weights are Dirichlet(``concentration``), so
    small concentrations reach close to the boundary of the simplex.
    """
    if tree.n_assets > 1:
        raise ContractError("extreme-point mixtures need at most one traded asset")
    inner = tree.nonterminals
    real = tree.child_mask[inner]
    m, b = real.shape
    x = tree.increments[inner, :, 0] if tree.n_assets else np.zeros((m, b))
    points = []
    for i in range(b):
        flat = np.zeros((m, b))
        flat[:, i] = 1.0
        points.append((real[:, i] & (x[:, i] == 0), flat))
        for j in range(b):
            ok = real[:, i] & real[:, j] & (x[:, i] < 0) & (x[:, j] > 0)
            pair = np.zeros((m, b))
            with np.errstate(divide="ignore", invalid="ignore"):
                span = x[:, j] - x[:, i]
                pair[:, i] = np.where(ok, x[:, j] / span, 0.0)
                pair[:, j] = np.where(ok, -x[:, i] / span, 0.0)
            points.append((ok, pair))
    valid = np.stack([v for v, _ in points], axis=1)
    ext = np.stack([e for _, e in points], axis=1)
    mix = rng.gamma(concentration, size=(n, m, len(points))) * valid
    mix /= mix.sum(axis=-1, keepdims=True)
    out = np.zeros((n,) + tree.prob.shape)
    out[:, inner] = np.einsum("nmk,mkb->nmb", mix, ext)
    return out


def sample_martingale_measures(tree: EventTree, rng: np.random.Generator, n: int,
                               center=None, spread: float = 1.0) -> list:
    """Same as :func:`sample_martingale_weights`, wrapped as measures."""
    weights = sample_martingale_weights(tree, rng, n, center, spread)
    return [martingale_measure(tree, q) for q in weights]


# -- dynamic programmes under P -----------------------------------------------

def certainty_equivalent_process(tree: EventTree, terminal_values, alpha, prob=None) -> np.ndarray:
    """``-(1/alpha) log`` of the optimal utility-to-go for terminal wealth ``terminal_values``."""
    prob = tree.prob if prob is None else prob
    return backward_ce(tree, prob, as_claim(tree, terminal_values), alpha)


def utility_indirect(tree: EventTree, agent: Agent, claim) -> float:
    """``sup_theta E[-exp(-alpha (C + claim + gains))]`` by dynamic programming."""
    C = agent.endowment_on(tree)
    claim = as_claim(tree, claim)
    ce = certainty_equivalent_process(tree, C + claim, agent.risk_aversion)
    return float(-np.exp(-agent.risk_aversion * ce[tree.root]))


def check_one_step_arbitrage(node: int, tree: EventTree) -> bool:
    """True iff 0 is in the relative interior of the node's increments' hull."""
    if tree.is_terminal[node] or tree.n_assets == 0:
        return True
    return _relint_contains_zero(tree.increments[node][tree.child_mask[node]])
