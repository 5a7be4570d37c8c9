import numpy as np
import pytest

from conftest import one_step
from gccsolver.exputil import Agent, martingale_measure, sample_martingale_weights
from gccsolver.indifference import (Valuer, dual_gap, dual_gaps, endowment_identity_check,
                                    european_value_process, game_values, optimal_dual_measure,
                                    primal_value_process, stopped_value_process, value_at)
from gccsolver.lattice import (build_binomial, stop_at_maturity, stop_immediately, stopped_payoff)


def risk_neutral_dp(tree, H):
    """Linear pricing with q = -d/(u - d) per binomial step."""
    v = np.zeros(tree.n_nodes)
    v[tree.terminals] = H
    for nodes in reversed(tree.levels[:-1]):
        up, dn = tree.increments[nodes, 0, 0], tree.increments[nodes, 1, 0]
        q = -dn / (up - dn)
        ch = tree.children[nodes]
        v[nodes] = q * v[ch[:, 0]] + (1 - q) * v[ch[:, 1]]
    return v


class TestEuropean:
    def test_constant_claim(self, random3, rng):
        valuer = Valuer(random3, Agent(2.0, rng.normal(size=len(random3.terminals))))
        gamma = european_value_process(valuer, np.full(len(random3.terminals), 1.25))
        assert np.allclose(gamma, 1.25, atol=1e-14)

    @pytest.mark.parametrize("alpha", [0.2, 1.0, 5.0])
    def test_complete_market_is_linear(self, alpha, rng):
        tree, drv = build_binomial(5, traded=True)
        H = np.maximum(drv["W"][tree.terminals] - 0.2, 0) + rng.normal(size=len(tree.terminals)) * 0.0
        C = rng.uniform(-1, 1, len(tree.terminals))
        gamma = european_value_process(Valuer(tree, Agent(alpha, C)), H)
        assert np.abs(gamma - risk_neutral_dp(tree, H)).max() < 1e-12

    @pytest.mark.parametrize("n", [1.0, 5.0, 20.0])
    def test_event_claim_formula(self, n):
        p, alpha = 0.3, 1.0
        tree = one_step([p, 1 - p], None)
        valuer = Valuer(tree, Agent(alpha))
        pi0 = value_at(valuer, [n, 0.0])
        assert np.exp(-alpha * pi0) == pytest.approx(np.exp(-alpha * n) * p + 1 - p, abs=1e-12)
        assert pi0 < -np.log(1 - p) / alpha

    def test_event_claim_with_endowment(self, rng):
        # several steps, no asset: the event A gets its P_C probability
        tree, _ = build_binomial(3)
        C = rng.uniform(-1, 1, len(tree.terminals))
        alpha, n = 1.7, 4.0
        A = np.zeros(len(tree.terminals))
        A[[1, 4, 6]] = 1.0
        dens = np.exp(-alpha * C)
        pc = (dens * A).sum() / dens.sum()
        pi0 = value_at(Valuer(tree, Agent(alpha, C)), n * A)
        assert np.exp(-alpha * pi0) == pytest.approx(np.exp(-alpha * n) * pc + 1 - pc, abs=1e-12)

    def test_bounded_by_sup(self, random3, rng):
        H = rng.uniform(-3, 3, len(random3.terminals))
        gamma = european_value_process(Valuer(random3, Agent(3.0)), H)
        assert np.abs(gamma).max() <= np.abs(H).max()

    def test_batched_claims(self, random3, rng):
        valuer = Valuer(random3, Agent(1.1))
        Hs = rng.normal(size=(4, len(random3.terminals)))
        batch = european_value_process(valuer, Hs)
        for k in range(4):
            assert np.allclose(batch[k], european_value_process(valuer, Hs[k]), atol=0, rtol=0)


class TestValueAt:
    def test_deterministic_payoff(self):
        tree, drv = build_binomial(3)
        X, delta = drv["W"], 0.5
        Y = X + delta
        tau, sigma = stop_at_maturity(tree), stop_immediately(tree)
        H = stopped_payoff(tree, X, Y, tau, sigma)
        assert value_at(Valuer(tree, Agent(1.0)), H) == delta
        assert value_at(Valuer(tree, Agent(2.0)), -H) == -delta

    def test_complete_tree_zero_sum(self, rng):
        tree, drv = build_binomial(3, traded=True)
        X = drv["W"]
        Y = X + 0.3
        buyer = Valuer(tree, Agent(0.5))
        seller = Valuer(tree, Agent(3.0, rng.normal(size=8)))
        for _ in range(10):
            tau = (rng.random(tree.n_nodes) < 0.3) | tree.is_terminal
            sigma = (rng.random(tree.n_nodes) < 0.3) | tree.is_terminal
            jb = game_values(buyer, X, Y, tau, sigma)
            ja = game_values(seller, X, Y, tau, sigma, sign=-1.0)
            assert jb == pytest.approx(-ja, abs=1e-12)

    def test_tau_zero(self, random3, rng):
        X = rng.normal(size=random3.n_nodes)
        H = stopped_payoff(random3, X, X + 1, stop_immediately(random3), stop_at_maturity(random3))
        assert value_at(Valuer(random3, Agent(1.0)), H) == pytest.approx(X[random3.root], abs=1e-14)

    def test_stopped_form_matches_lift(self, random3, rng):
        valuer = Valuer(random3, Agent(1.4, rng.normal(size=27)))
        L = rng.normal(size=random3.n_nodes)
        rule = (rng.random(random3.n_nodes) < 0.3) | random3.is_terminal
        X = L
        H = stopped_payoff(random3, X, X, rule, stop_at_maturity(random3))
        assert value_at(valuer, L, rule) == pytest.approx(value_at(valuer, H), abs=1e-13)
        assert stopped_value_process(valuer, L, rule)[random3.root] == pytest.approx(value_at(valuer, H), abs=1e-13)


class TestDual:
    def test_zero_claim_at_emmm(self, random3, rng):
        valuer = Valuer(random3, Agent(2.0, rng.normal(size=27)))
        assert abs(dual_gap(valuer, np.zeros(27), valuer.measure)) < 1e-14

    def test_complete_tree(self, rng):
        tree, _ = build_binomial(4, traded=True)
        valuer = Valuer(tree, Agent(1.5))
        for _ in range(5):
            H = rng.uniform(-3, 3, len(tree.terminals))
            assert abs(dual_gap(valuer, H, valuer.measure)) < 1e-12

    def test_attained_at_optimal_measure(self, random3, rng):
        valuer = Valuer(random3, Agent(2.5, rng.normal(size=27)))
        H = rng.uniform(-3, 3, 27)
        assert abs(dual_gap(valuer, H, optimal_dual_measure(valuer, H))) < 1e-10

    def test_sampled_nonnegative_and_tight(self, trinomial3, rng):
        tree, drv = trinomial3
        valuer = Valuer(tree, Agent(1.0))
        H = np.maximum(drv["U"][tree.terminals], 0)
        center = optimal_dual_measure(valuer, H).transition_prob
        gaps = dual_gaps(valuer, H, sample_martingale_weights(valuer.tilted.tree, rng, 1000, center, 0.05))
        assert gaps.min() >= -1e-12
        assert gaps.min() <= 1e-3

    def test_batched_matches_single(self, random3, rng):
        valuer = Valuer(random3, Agent(0.7, rng.normal(size=27)))
        H = rng.uniform(-3, 3, 27)
        qs = sample_martingale_weights(valuer.tilted.tree, rng, 5)
        batch = dual_gaps(valuer, H, qs)
        for k in range(5):
            single = dual_gap(valuer, H, martingale_measure(valuer.tilted.tree, qs[k]))
            assert batch[k] == pytest.approx(single, abs=1e-12)


class TestEndowment:
    def test_zero_endowment_exact(self, random3, rng):
        assert endowment_identity_check(random3, 1.3, np.zeros(27), rng.normal(size=27)) == 0.0

    def test_constant_endowment(self, random3, rng):
        assert endowment_identity_check(random3, 1.3, np.full(27, 2.0), rng.normal(size=27)) <= 1e-9

    def test_random_endowment(self, trinomial3, rng):
        tree, _ = trinomial3
        C = rng.uniform(-2, 2, 27)
        H = rng.uniform(-3, 3, 27)
        assert endowment_identity_check(tree, 2.2, C, H) <= 1e-9

    def test_primal_route_agrees(self, random3, rng):
        agent = Agent(1.8, rng.uniform(-1, 1, 27))
        H = rng.uniform(-3, 3, 27)
        dual = european_value_process(Valuer(random3, agent), H)
        primal = primal_value_process(random3, agent, H)
        assert np.abs(dual - primal).max() < 1e-12
