"""Randomised property suite for the valuation, duality and stopping layers.

Each check returns a nonnegative residual; zero means the property holds
exactly.  :func:`run_suite` draws random incomplete trinomial trees and
keeps the worst residual per property.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exputil import (Agent, MartingaleMeasure, sample_extreme_mixtures, sample_martingale_weights,
                      solve_steps)
from .indifference import (Valuer, dual_gap, dual_gaps, endowment_identity_check,
                           european_value_process, optimal_dual_measure, primal_value_process,
                           value_at)
from .lattice import canonical_rule, lift, random_tree
from .snell import brute_force_optimum, check_supermartingale, ratio_representation, snell_envelope

TOLERANCES = {
    "boundedness": 1e-9,
    "monotonicity": 1e-9,
    "strict_root_monotonicity": 1e-9,
    "replication_invariance": 1e-9,
    "replication_cost": 1e-9,
    "local_property": 1e-9,
    "time_consistency": 1e-9,
    "sup_norm_continuity": 1e-9,
    "endowment_identity": 1e-9,
    "primal_agreement": 1e-9,
    "dual_domination": 1e-8,
    "dual_attainment": 1e-8,
    "emmm_duality": 1e-9,
    "snell_brute_force": 1e-9,
    "snell_supermartingale": 1e-9,
    "ratio_agreement": 1e-9,
    "ratio_supermartingale": 1e-10,
}


@dataclass
class Case:
    tree: object
    valuer: Valuer
    C: np.ndarray
    H: np.ndarray
    rng: np.random.Generator

    @property
    def alpha(self):
        return self.valuer.alpha


def _inject_fault(valuer: Valuer) -> None:
    # price under the tilted physical weights instead of the martingale measure
    tilted = valuer.tilted.tree
    wrong = MartingaleMeasure(tilted, tilted.prob.copy(), np.zeros(tilted.n_nodes),
                              np.zeros((tilted.n_nodes, tilted.n_assets)), None)
    object.__setattr__(valuer, "measure", wrong)


def make_case(rng: np.random.Generator, max_steps: int = 5, fault: bool = False) -> Case:
    steps = int(rng.integers(1, max_steps + 1))
    tree = random_tree(rng, steps, branching=3, n_assets=1)
    n_term = len(tree.terminals)
    alpha = float(rng.uniform(0.2, 5.0))
    C = rng.uniform(-1.0, 1.0, n_term)
    H = rng.uniform(-3.0, 3.0, n_term)
    valuer = Valuer(tree, Agent(alpha, C))
    if fault:
        _inject_fault(valuer)
    return Case(tree, valuer, C, H, rng)


# -- helpers ------------------------------------------------------------------------

def _random_level(case):
    return int(case.rng.integers(0, case.tree.steps))


def _lift_level(tree, values, k):
    """Read a level-``k`` node quantity on every terminal (its ancestor at ``k``)."""
    return np.asarray(values)[tree.ancestors[tree.terminals, k]]


def _gains_from(tree, theta, k):
    """Terminal gains of holding ``theta`` (one asset) from level ``k`` on."""
    g = np.zeros(tree.n_nodes)
    for nodes in tree.levels[k:-1]:
        ch = tree.children[nodes]
        valid = ch >= 0
        step = g[nodes][:, None] + theta[nodes][:, None] * tree.increments[nodes][:, :, 0]
        g[ch[valid]] = step[valid]
    return g[tree.terminals]


def _value(case, H):
    return european_value_process(case.valuer, H)


# -- properties -------------------------------------------------------------------

def boundedness(case):
    gamma = _value(case, case.H)
    return float(max((np.abs(gamma) - np.abs(case.H).max()).max(), 0.0))


def monotonicity(case):
    bump = np.abs(case.rng.normal(size=case.H.shape)) * (case.rng.random(case.H.shape) < 0.5)
    g1, g2 = _value(case, case.H), _value(case, case.H + bump)
    return float(max((g1 - g2).max(), 0.0))


def strict_root_monotonicity(case):
    bump = np.zeros_like(case.H)
    bump[case.rng.integers(len(bump))] = case.rng.uniform(0.1, 1.0)
    diff = value_at(case.valuer, case.H + bump) - value_at(case.valuer, case.H)
    return 0.0 if diff > 0 else float(1.0 - diff)


def replication_invariance(case):
    tree = case.tree
    k = _random_level(case)
    x = case.rng.uniform(-2, 2, tree.n_nodes)
    theta = case.rng.uniform(-2, 2, tree.n_nodes)
    claim = case.H + _lift_level(tree, x, k) + _gains_from(tree, theta, k)
    nodes = tree.levels[k]
    lhs = _value(case, claim)[nodes]
    rhs = _value(case, case.H)[nodes] + x[nodes]
    return float(np.abs(lhs - rhs).max())


def replication_cost(case):
    tree = case.tree
    k = _random_level(case)
    x = case.rng.uniform(-2, 2, tree.n_nodes)
    theta = case.rng.uniform(-2, 2, tree.n_nodes)
    claim = _lift_level(tree, x, k) + _gains_from(tree, theta, k)
    nodes = tree.levels[k]
    return float(np.abs(_value(case, claim)[nodes] - x[nodes]).max())


def local_property(case):
    tree = case.tree
    k = _random_level(case)
    H2 = case.rng.uniform(-3, 3, case.H.shape)
    in_set = case.rng.random(tree.n_nodes) < 0.5
    mask = _lift_level(tree, in_set, k).astype(bool)
    mixed = np.where(mask, case.H, H2)
    nodes = tree.levels[k]
    expect = np.where(in_set[nodes], _value(case, case.H)[nodes], _value(case, H2)[nodes])
    return float(np.abs(_value(case, mixed)[nodes] - expect).max())


def time_consistency(case):
    tree = case.tree
    sigma = case.rng.random(tree.n_nodes) < 0.3
    sigma[tree.terminals] = True
    gamma = _value(case, case.H)
    again = _value(case, lift(tree, gamma, sigma))
    closed = canonical_rule(tree, sigma)
    alive = np.ones(tree.n_nodes, dtype=bool)
    nonroot = tree.parent >= 0
    alive[nonroot] = ~closed[tree.parent[nonroot]]
    return float(np.abs(again - gamma)[alive].max())


def sup_norm_continuity(case):
    G = case.rng.uniform(-1, 1, case.H.shape)
    eps = 10.0 ** case.rng.uniform(-6, 0)
    diff = np.abs(_value(case, case.H + eps * G) - _value(case, case.H))
    return float(max((diff - eps * np.abs(G).max()).max(), 0.0))


def endowment_identity(case):
    return endowment_identity_check(case.tree, case.alpha, case.C, case.H)


def primal_agreement(case):
    primal = primal_value_process(case.tree, case.valuer.agent, case.H)
    return float(np.abs(_value(case, case.H) - primal).max())


def dual_domination(case, samples=1000):
    tree = case.valuer.tilted.tree
    # a fifth perturbs the tilted weights, the rest mixes extreme points
    k = samples // 5
    weights = np.concatenate([sample_martingale_weights(tree, case.rng, k),
                              sample_extreme_mixtures(tree, case.rng, samples - k, 0.5)])
    return float(max(-dual_gaps(case.valuer, case.H, weights).min(), 0.0))


def dual_attainment(case):
    at_opt = abs(dual_gap(case.valuer, case.H, optimal_dual_measure(case.valuer, case.H)))
    at_emmm = abs(dual_gap(case.valuer, np.zeros_like(case.H), case.valuer.measure))
    return float(max(at_opt, at_emmm))


def emmm_duality(case):
    m = case.valuer.measure
    tree = m.tree
    inner = tree.nonterminals
    ch = tree.children[inner]
    J = m.entropy_to_go
    child = np.where(ch >= 0, J[np.maximum(ch, 0)], 0.0)
    ce, _, w = solve_steps(tree.prob[inner], tree.increments[inner], child, 1.0)
    return float(max(np.abs(ce - J[inner]).max(), np.abs(w - m.transition_prob[inner]).max()))


def _reward(case):
    return case.rng.uniform(-3, 3, case.tree.n_nodes)


def snell_brute_force(case):
    if len(case.tree.nonterminals) > 16:
        return 0.0
    L = _reward(case)
    res = snell_envelope(case.valuer, L)
    best, _, _ = brute_force_optimum(case.valuer, L)
    attained = value_at(case.valuer, lift(case.tree, L, res.optimal_rule))
    return float(max(abs(res.root_value - best), abs(attained - best)))


def snell_supermartingale(case, n_rules=50):
    tree = case.tree
    L = _reward(case)
    res = snell_envelope(case.valuer, L)
    rules = case.rng.random((n_rules, tree.n_nodes)) < 0.3
    rules[:, tree.terminals] = True
    return check_supermartingale(case.valuer, res, rules)


def ratio_agreement(case):
    L = _reward(case)
    res = snell_envelope(case.valuer, L)
    rr = ratio_representation(case.valuer, L)
    return float(np.abs(rr.value - res.envelope).max())


def ratio_supermartingale(case):
    rr = ratio_representation(case.valuer, _reward(case))
    return float(max(rr.supermartingale_residuals(case.tree)))


PROPERTIES = {
    "boundedness": boundedness,
    "monotonicity": monotonicity,
    "strict_root_monotonicity": strict_root_monotonicity,
    "replication_invariance": replication_invariance,
    "replication_cost": replication_cost,
    "local_property": local_property,
    "time_consistency": time_consistency,
    "sup_norm_continuity": sup_norm_continuity,
    "endowment_identity": endowment_identity,
    "primal_agreement": primal_agreement,
    "dual_domination": dual_domination,
    "dual_attainment": dual_attainment,
    "emmm_duality": emmm_duality,
    "snell_brute_force": snell_brute_force,
    "snell_supermartingale": snell_supermartingale,
    "ratio_agreement": ratio_agreement,
    "ratio_supermartingale": ratio_supermartingale,
}

VALUATION_PROPERTIES = ("boundedness", "monotonicity", "strict_root_monotonicity", "replication_invariance",
                        "replication_cost", "local_property", "time_consistency", "sup_norm_continuity")
DUAL_PROPERTIES = ("dual_domination", "dual_attainment", "emmm_duality")
SNELL_PROPERTIES = ("snell_brute_force", "ratio_agreement", "ratio_supermartingale")


@dataclass
class SuiteReport:
    worst: dict = field(default_factory=dict)
    n_cases: int = 0

    def record(self, name, residual):
        self.worst[name] = max(self.worst.get(name, 0.0), residual)

    @property
    def failures(self) -> list:
        return [k for k, v in self.worst.items() if not v <= TOLERANCES[k]]

    @property
    def passed(self) -> bool:
        return not self.failures

    def rows(self):
        return [(k, self.worst[k], TOLERANCES[k], self.worst[k] <= TOLERANCES[k]) for k in PROPERTIES
                if k in self.worst]


def suite_cases(seed: int = 0, n_trees: int = 20, max_steps: int = 5, fault: bool = False):
    for i in range(n_trees):
        yield make_case(np.random.default_rng((seed, i)), max_steps, fault)


def run_suite(seed: int = 0, n_trees: int = 20, max_steps: int = 5, dual_samples: int = 1000,
              properties=None, fault: bool = False) -> SuiteReport:
    """Worst residual per property over ``n_trees`` random trees.

    Tree ``i`` is drawn from its own stream ``(seed, i)``, so the cases do
    not depend on which properties are run.
    """
    names = list(PROPERTIES) if properties is None else list(properties)
    report = SuiteReport()
    for case in suite_cases(seed, n_trees, max_steps, fault):
        for name in names:
            fn = PROPERTIES[name]
            if name == "dual_domination":
                report.record(name, fn(case, dual_samples))
            else:
                report.record(name, fn(case))
        report.n_cases += 1
    return report
