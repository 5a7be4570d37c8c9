import numpy as np
from hypothesis import given, settings, strategies as st

from gccsolver.dynkin import BUYER, SELLER, GccSpec, iteration_violations, nash_iterate, verify_nep_snell
from gccsolver.exputil import Agent, one_step_ce
from gccsolver.indifference import Valuer, european_value_process
from gccsolver.lattice import canonical_rule, pathwise_leq, random_tree
from gccsolver.selftest import PROPERTIES, TOLERANCES, make_case
from gccsolver.snell import snell_envelope

seeds = st.integers(0, 2**32 - 1)
prop_settings = settings(max_examples=30, deadline=None)


def case_for(seed, max_steps=4):
    return make_case(np.random.default_rng(seed), max_steps)


@prop_settings
@given(seed=seeds, name=st.sampled_from(sorted(PROPERTIES)))
def test_property_suite(seed, name):
    case = case_for(seed)
    fn = PROPERTIES[name]
    residual = fn(case, 200) if name == "dual_domination" else fn(case)
    assert residual <= TOLERANCES[name]


@prop_settings
@given(seed=seeds, shift=st.floats(-5, 5), alpha=st.floats(0.2, 5))
def test_cash_invariance(seed, shift, alpha):
    case = case_for(seed)
    v = Valuer(case.tree, Agent(alpha, case.C))
    diff = european_value_process(v, case.H + shift) - european_value_process(v, case.H)
    assert np.abs(diff - shift).max() <= 1e-9


@prop_settings
@given(seed=seeds)
def test_one_step_within_range(seed):
    rng = np.random.default_rng(seed)
    b = int(rng.integers(2, 5))
    p = rng.dirichlet(np.ones(b))
    dS = rng.normal(size=b)
    dS -= p @ dS
    values = rng.uniform(-3, 3, b)
    sol = one_step_ce(p, dS[:, None], values, float(rng.uniform(0.2, 5)))
    assert values.min() - 1e-12 <= sol.certainty_equivalent <= values.max() + 1e-12
    assert abs(sol.dual_weights @ dS) <= 1e-9


@prop_settings
@given(seed=seeds)
def test_snell_monotone_and_dominating(seed):
    case = case_for(seed)
    L1 = case.rng.uniform(-3, 3, case.tree.n_nodes)
    L2 = L1 + case.rng.uniform(0, 1, case.tree.n_nodes)
    V1 = snell_envelope(case.valuer, L1).envelope
    V2 = snell_envelope(case.valuer, L2).envelope
    assert np.all(V1 >= L1) and np.all(V1 <= V2 + 1e-12)


@prop_settings
@given(seed=seeds)
def test_canonical_rule_idempotent(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, int(rng.integers(1, 4)))
    rule = rng.random(tree.n_nodes) < 0.3
    rule[tree.terminals] = True
    once = canonical_rule(tree, rule)
    assert np.array_equal(canonical_rule(tree, once), once)
    assert pathwise_leq(tree, once, rule) == 0 and pathwise_leq(tree, rule, once) == 0


@settings(max_examples=15, deadline=None)
@given(seed=seeds, first=st.sampled_from([BUYER, SELLER]))
def test_nash_iteration_invariants(seed, first):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, int(rng.integers(1, 4)), branching=int(rng.integers(2, 4)))
    X = rng.uniform(-2, 2, tree.n_nodes)
    Y = X + rng.uniform(0, 1, tree.n_nodes) * (rng.random(tree.n_nodes) < 0.8)
    nt = len(tree.terminals)
    gcc = GccSpec(tree, X, Y, Agent(rng.uniform(0.2, 5), rng.uniform(-1, 1, nt)),
                  Agent(rng.uniform(0.2, 5), rng.uniform(-1, 1, nt)))
    res = nash_iterate(gcc, first)
    assert res.converged
    assert all(v == 0 for v in iteration_violations(tree, res).values())
    assert verify_nep_snell(gcc, res.buyer_rule, res.seller_rule).passed
