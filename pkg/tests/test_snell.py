import numpy as np
import pytest

from gccsolver.exputil import Agent
from gccsolver.indifference import Valuer, value_at
from gccsolver.lattice import (ContractError, build_binomial, build_incomplete_trinomial, lift,
                               random_tree, stop_at_maturity, stop_at_time, stop_immediately)
from gccsolver.snell import (brute_force_optimum, check_supermartingale, ratio_representation,
                             recursion_residual, restriction_check, snell_envelope)


def classical_snell(tree, L):
    """max(L, q V_up + (1-q) V_down) with q = -d/(u-d), written out per node."""
    V = np.array(L, dtype=float)
    for nodes in reversed(tree.levels[:-1]):
        for i in nodes:
            up, dn = tree.increments[i, :, 0]
            q = -dn / (up - dn)
            a, b = tree.children[i]
            V[i] = max(L[i], q * V[a] + (1 - q) * V[b])
    return V


@pytest.fixture
def incomplete_valuer(rng):
    tree = build_incomplete_trinomial(4)[0]
    return Valuer(tree, Agent(1.5, rng.uniform(-1, 1, len(tree.terminals))))


class TestEnvelope:
    def test_constant_reward(self, incomplete_valuer):
        tree = incomplete_valuer.tree
        res = snell_envelope(incomplete_valuer, np.full(tree.n_nodes, 2.5))
        assert np.allclose(res.envelope, 2.5, atol=1e-14)
        assert res.optimal_rule[tree.root]
        assert res.root_value == pytest.approx(2.5, abs=1e-14)

    def test_nondecreasing_deterministic_reward(self, incomplete_valuer):
        tree = incomplete_valuer.tree
        L = np.sqrt(tree.time.astype(float))
        res = snell_envelope(incomplete_valuer, L)
        assert np.allclose(res.envelope, L.max(), atol=1e-12)
        assert not res.optimal_rule[tree.nonterminals].any()

    def test_domination_and_terminal(self, incomplete_valuer, rng):
        tree = incomplete_valuer.tree
        L = rng.uniform(-3, 3, tree.n_nodes)
        res = snell_envelope(incomplete_valuer, L)
        assert np.all(res.envelope >= L - 1e-15)
        assert np.array_equal(res.envelope[tree.terminals], L[tree.terminals])
        assert recursion_residual(incomplete_valuer, res) == 0.0

    @pytest.mark.parametrize("alpha", [0.3, 3.0])
    def test_american_put_matches_classical(self, alpha, rng):
        tree, drv = build_binomial(6, traded=True)
        S = drv["W"]
        L = np.exp(-0.5 * tree.years()) * np.maximum(0.25 - S, 0.0)
        C = rng.uniform(-1, 1, len(tree.terminals))
        res = snell_envelope(Valuer(tree, Agent(alpha, C)), L)
        oracle = classical_snell(tree, L)
        assert np.abs(res.envelope - oracle).max() < 1e-12
        exercise = np.abs(oracle - L) <= 1e-9 * (1 + np.abs(L).max())
        assert np.array_equal(res.optimal_rule, exercise)
        assert res.optimal_rule[tree.nonterminals].any()

    def test_brute_force_and_attainment(self, rng):
        tree = random_tree(rng, 2, branching=3)
        valuer = Valuer(tree, Agent(0.8, rng.uniform(-1, 1, len(tree.terminals))))
        for _ in range(5):
            L = rng.uniform(-3, 3, tree.n_nodes)
            res = snell_envelope(valuer, L)
            best, values, rules = brute_force_optimum(valuer, L)
            assert abs(res.root_value - best) < 1e-9
            assert abs(value_at(valuer, lift(tree, L, res.optimal_rule)) - best) < 1e-9
            assert abs(value_at(valuer, L, res.optimal_rule) - best) < 1e-9

    def test_monotone_in_reward(self, incomplete_valuer, rng):
        tree = incomplete_valuer.tree
        L1 = rng.uniform(-3, 3, tree.n_nodes)
        L2 = L1 + rng.uniform(0, 1, tree.n_nodes)
        V1 = snell_envelope(incomplete_valuer, L1).envelope
        V2 = snell_envelope(incomplete_valuer, L2).envelope
        assert np.all(V1 <= V2 + 1e-12)

    def test_works_on_lattice(self):
        tree, drv = build_binomial(30, traded=True, recombine=True)
        L = np.maximum(0.3 - drv["W"], 0.0) * np.exp(-0.5 * tree.years())
        res = snell_envelope(Valuer(tree, Agent(1.0)), L)
        assert np.abs(res.envelope - classical_snell(tree, L)).max() < 1e-12


class TestSupermartingale:
    def test_immediate_rule(self, incomplete_valuer, rng):
        tree = incomplete_valuer.tree
        res = snell_envelope(incomplete_valuer, rng.uniform(-3, 3, tree.n_nodes))
        assert check_supermartingale(incomplete_valuer, res, np.ones(tree.n_nodes, bool)) == 0.0

    def test_optimal_rule_is_equality_before_boundary(self, incomplete_valuer, rng):
        from gccsolver.indifference import stopped_value_process
        from gccsolver.snell import _alive_before
        tree = incomplete_valuer.tree
        res = snell_envelope(incomplete_valuer, rng.uniform(-3, 3, tree.n_nodes))
        stopped = stopped_value_process(incomplete_valuer, res.envelope, res.optimal_rule)
        alive = _alive_before(tree, res.optimal_rule)
        assert np.abs(stopped - res.envelope)[alive].max() < 1e-12

    def test_random_rules(self, rng):
        tree = build_incomplete_trinomial(5)[0]
        valuer = Valuer(tree, Agent(2.0, rng.uniform(-1, 1, len(tree.terminals))))
        res = snell_envelope(valuer, rng.uniform(-3, 3, tree.n_nodes))
        rules = rng.random((200, tree.n_nodes)) < 0.3
        rules[:, tree.terminals] = True
        assert check_supermartingale(valuer, res, rules) <= 1e-9


class TestRestriction:
    def test_identical_rewards(self, incomplete_valuer, rng):
        tree = incomplete_valuer.tree
        L = rng.uniform(-3, 3, tree.n_nodes)
        assert restriction_check(incomplete_valuer, L, L, stop_immediately(tree))

    def test_differ_before_deterministic_time(self, incomplete_valuer, rng):
        tree = incomplete_valuer.tree
        L1 = rng.uniform(-3, 3, tree.n_nodes)
        L2 = L1.copy()
        early = tree.time < 2
        L2[early] = 5.0 + rng.uniform(0, 1, early.sum())
        assert restriction_check(incomplete_valuer, L1, L2, stop_at_time(tree, 2))
        V1 = snell_envelope(incomplete_valuer, L1).envelope
        V2 = snell_envelope(incomplete_valuer, L2).envelope
        assert not np.allclose(V1[early], V2[early])

    def test_absorbed_reward(self, incomplete_valuer, rng):
        tree = incomplete_valuer.tree
        sigma = rng.random(tree.n_nodes) < 0.4
        sigma[tree.terminals] = True
        L = lift_process(tree, rng.uniform(-3, 3, tree.n_nodes), sigma)
        V = snell_envelope(incomplete_valuer, L).envelope
        from gccsolver.lattice import canonical_rule
        region = canonical_rule(tree, sigma)
        assert np.abs(V - L)[region].max() < 1e-12

    def test_precondition(self, incomplete_valuer, rng):
        tree = incomplete_valuer.tree
        L = rng.uniform(-3, 3, tree.n_nodes)
        with pytest.raises(ContractError):
            restriction_check(incomplete_valuer, L, L + 1, stop_at_maturity(tree))


def lift_process(tree, L, sigma):
    """L before sigma, frozen at its value at the first stop afterwards."""
    out = np.array(L, dtype=float)
    stopped = np.zeros(tree.n_nodes, dtype=bool)
    for nodes in tree.levels[1:]:
        par = tree.parent[nodes]
        inherit = stopped[par] | sigma[par]
        out[nodes] = np.where(inherit, out[par], out[nodes])
        stopped[nodes] = inherit
    return out


class TestRatio:
    def test_zero_reward(self, incomplete_valuer):
        tree = incomplete_valuer.tree
        rr = ratio_representation(incomplete_valuer, np.zeros(tree.n_nodes))
        assert np.allclose(rr.A, rr.B, rtol=1e-13, atol=0)
        assert np.abs(rr.value).max() < 1e-12

    def test_constant_reward(self, incomplete_valuer):
        tree = incomplete_valuer.tree
        rr = ratio_representation(incomplete_valuer, np.full(tree.n_nodes, -1.75))
        assert np.abs(rr.value + 1.75).max() < 1e-12

    def test_matches_envelope(self, incomplete_valuer, rng):
        tree = incomplete_valuer.tree
        for _ in range(3):
            L = rng.uniform(-3, 3, tree.n_nodes)
            rr = ratio_representation(incomplete_valuer, L)
            V = snell_envelope(incomplete_valuer, L).envelope
            assert np.abs(rr.value - V).max() < 1e-9
            assert max(rr.supermartingale_residuals(tree)) <= 1e-10
