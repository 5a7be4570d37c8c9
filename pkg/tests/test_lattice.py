import json

import numpy as np
import pytest

from conftest import one_step
from gccsolver import serialize
from gccsolver.exputil import check_one_step_arbitrage
from gccsolver.lattice import (ContractError, EventTree, ModelError, build_binomial,
                               build_incomplete_trinomial, canonical_rule, enumerate_stopping_rules,
                               expectation, first_stop_nodes, hitting_rule, iter_paths, lift,
                               pathwise_leq, random_tree, reach_probabilities, stop_at_maturity,
                               stop_at_time, stop_immediately, stopped_payoff, stopping_times,
                               validate_tree)


class TestBinomial:
    def test_one_step_walk(self):
        tree, drv = build_binomial(1)
        assert tree.n_nodes == 3
        assert sorted(drv["W"][tree.terminals]) == [-1.0, 1.0]
        assert np.allclose(tree.prob[tree.root], [0.5, 0.5])
        assert tree.n_assets == 0

    def test_traded_increments_scale(self):
        tree, _ = build_binomial(2, traded=True)
        assert len(tree.terminals) == 4
        inc = tree.increments[tree.nonterminals, :, 0]
        assert np.allclose(np.abs(inc), np.sqrt(0.5))

    def test_drifted_mean(self):
        # recombining lattice for 50 steps; E[W_T + mu T] = mu T
        tree, drv = build_binomial(50, drift=0.5, recombine=True)
        assert tree.recombining
        assert expectation(tree, drv["drifted"][tree.terminals]) == pytest.approx(0.5, abs=1e-12)

    def test_recombining_matches_full_tree(self):
        full, df = build_binomial(6, traded=True)
        lat, dl = build_binomial(6, traded=True, recombine=True)
        # terminal law of W agrees
        wf = np.round(df["W"][full.terminals], 12)
        pf = reach_probabilities(full)[full.terminals]
        wl = np.round(dl["W"][lat.terminals], 12)
        pl = reach_probabilities(lat)[lat.terminals]
        for w in np.unique(wf):
            assert pf[wf == w].sum() == pytest.approx(pl[wl == w].sum(), abs=1e-14)

    def test_bad_steps(self):
        with pytest.raises(ModelError):
            build_binomial(0)


class TestTrinomial:
    def test_valid_one_step(self):
        tree, drv = build_incomplete_trinomial(1, probs=[1 / 3] * 3, increments=[1.0, 0.0, -1.0])
        assert validate_tree(tree).ok
        assert set(drv) == {"S", "U", "t"}

    def test_arbitrage_rejected(self):
        with pytest.raises(ModelError):
            build_incomplete_trinomial(1, increments=[1.0, 2.0, 3.0])

    def test_two_steps(self):
        tree, _ = build_incomplete_trinomial(2)
        assert len(tree.terminals) == 9
        # three unknown weights, two constraints per node: one free parameter
        x = tree.increments[tree.root, :, 0]
        a = np.vstack([np.ones(3), x])
        assert 3 - np.linalg.matrix_rank(a) == 1


class TestValidate:
    def test_binomial_ok(self, binomial2):
        tree, _ = binomial2
        assert validate_tree(tree).violations == []

    def test_normalization(self):
        tree = one_step([0.6, 0.5], [1.0, -1.0])
        kinds = {v[1] for v in validate_tree(tree).violations}
        assert kinds == {"normalization"}
        assert validate_tree(tree).violations[0][0] == 0

    def test_arbitrage(self):
        tree = one_step([0.5, 0.5], [1.0, 2.0])
        kinds = [v[1] for v in validate_tree(tree).violations]
        assert kinds == ["arbitrage"]

    def test_leaf_before_horizon(self):
        children = [[1, 2], [3, -1], [-1, -1], [-1, -1]]
        prob = [[0.5, 0.5], [1.0, 0.0], [0, 0], [0, 0]]
        tree = EventTree([0, 1, 1, 2], children, prob, np.zeros((4, 2, 0)))
        assert any(v[1] == "structure" for v in validate_tree(tree).violations)


class TestArbitrageCheck:
    def test_cases(self):
        assert check_one_step_arbitrage(0, one_step([0.5, 0.5], [1.0, -1.0]))
        assert not check_one_step_arbitrage(0, one_step([0.5, 0.5], [1.0, 2.0]))
        assert check_one_step_arbitrage(0, one_step([0.5, 0.5], None))


class TestStoppedPayoff:
    def setup_method(self):
        self.tree, drv = build_binomial(2)
        self.X = drv["W"] + 0.1 * drv["t"]
        self.Y = self.X + 0.5

    def test_tau_at_root(self):
        tree = self.tree
        H = stopped_payoff(tree, self.X, self.Y, stop_immediately(tree), stop_at_maturity(tree))
        assert np.all(H == self.X[tree.root])

    def test_sigma_at_root(self):
        tree = self.tree
        H = stopped_payoff(tree, self.X, self.Y, stop_at_maturity(tree), stop_immediately(tree))
        assert np.all(H == self.Y[tree.root])

    def test_both_at_root_pays_X(self):
        tree = self.tree
        H = stopped_payoff(tree, self.X, self.Y, stop_immediately(tree), stop_immediately(tree))
        assert np.all(H == self.X[tree.root])

    def test_stop_on_up_move(self):
        tree = self.tree
        up = tree.children[tree.root, 0]
        tau = stop_at_maturity(tree)
        tau[up] = True
        H = stopped_payoff(tree, self.X, self.Y, tau, stop_at_maturity(tree))
        # enumerate the four paths by hand
        for path in iter_paths(tree):
            expect = self.X[up] if path[1] == up else self.X[path[-1]]
            assert H[tree.terminal_position[path[-1]]] == expect

    def test_bounds(self, rng):
        tree = random_tree(rng, 3)
        X = rng.normal(size=tree.n_nodes)
        Y = X + rng.random(tree.n_nodes)
        for _ in range(20):
            tau = (rng.random(tree.n_nodes) < 0.3) | tree.is_terminal
            sigma = (rng.random(tree.n_nodes) < 0.3) | tree.is_terminal
            H = stopped_payoff(tree, X, Y, tau, sigma)
            assert H.min() >= min(X.min(), Y.min())
            assert H.max() <= max(X.max(), Y.max())


class TestRules:
    def test_enumeration_counts(self):
        assert len(enumerate_stopping_rules(build_binomial(1)[0])) == 2
        assert len(enumerate_stopping_rules(build_binomial(2)[0])) == 8
        rules = enumerate_stopping_rules(build_binomial(3)[0])
        assert len(rules) == 128
        # distinct stopping times on a binary tree of depth k: f(k) = 1 + f(k-1)**2
        canon = {canonical_rule(build_binomial(3)[0], r).tobytes() for r in rules}
        assert len(canon) == 1 + (1 + 2 ** 2) ** 2

    def test_enumeration_marks_terminals(self):
        tree = build_binomial(3)[0]
        assert enumerate_stopping_rules(tree)[:, tree.terminals].all()

    def test_enumeration_cap(self):
        with pytest.raises(ContractError):
            enumerate_stopping_rules(build_binomial(5)[0])

    def test_stopping_times(self):
        tree = build_binomial(3)[0]
        assert np.all(stopping_times(tree, stop_at_time(tree, 2)) == 2)
        assert np.all(stopping_times(tree, stop_immediately(tree)) == 0)
        assert np.all(stopping_times(tree, stop_at_maturity(tree)) == 3)

    def test_canonical_closure(self):
        tree = build_binomial(2)[0]
        rule = stop_immediately(tree)
        assert canonical_rule(tree, rule).all()
        assert np.all(first_stop_nodes(tree, rule) == tree.root)

    def test_pathwise_leq(self):
        tree = build_binomial(3)[0]
        assert pathwise_leq(tree, stop_immediately(tree), stop_at_maturity(tree)) == 0
        # every non-terminal node witnesses the violation
        assert pathwise_leq(tree, stop_at_maturity(tree), stop_immediately(tree)) == 7

    def test_lift_reads_first_stop(self):
        tree, drv = build_binomial(2)
        rule = stop_at_time(tree, 1)
        lifted = lift(tree, drv["W"], rule)
        for path in iter_paths(tree):
            assert lifted[tree.terminal_position[path[-1]]] == drv["W"][path[1]]


class TestHitting:
    def test_equal_marks_root(self):
        tree = build_binomial(2)[0]
        L = np.arange(tree.n_nodes, dtype=float)
        assert hitting_rule(tree, L, L)[tree.root]

    def test_strict_only_terminal(self):
        tree = build_binomial(2)[0]
        L = np.zeros(tree.n_nodes)
        V = np.where(tree.is_terminal, 0.0, 1.0)
        rule = hitting_rule(tree, V, L)
        assert np.array_equal(rule, tree.is_terminal)


class TestModelFiles:
    def test_round_trip(self, tmp_path, trinomial3):
        tree, drv = trinomial3
        claims = {"H": np.maximum(drv["U"][tree.terminals], 0)}
        path = serialize.save_model(tmp_path / "m.json", tree, {"U": drv["U"]}, claims, {"claim": "H"})
        tree2, procs, claims2, defaults = serialize.load_model(path)
        assert np.array_equal(tree2.children, tree.children)
        assert np.allclose(tree2.prob, tree.prob)
        assert np.allclose(tree2.increments, tree.increments)
        assert np.allclose(procs["U"], drv["U"])
        assert np.allclose(claims2["H"], claims["H"])
        assert defaults == {"claim": "H"}

    def test_schema_required(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"nodes": []}))
        with pytest.raises(ModelError):
            serialize.load_model(p)

    def test_unknown_parent(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"schema": serialize.SCHEMA, "nodes": [
            {"id": "r", "time": 0, "parent": None},
            {"id": "u", "time": 1, "parent": "zz", "prob": 1.0}]}))
        with pytest.raises(ModelError):
            serialize.load_model(p)

    def test_rule_ids_round_trip(self):
        tree = build_binomial(3)[0]
        rule = stop_at_time(tree, 2)
        ids = serialize.rule_to_ids(tree, rule)
        assert len(ids) == 4
        assert np.array_equal(serialize.ids_to_rule(tree, ids), canonical_rule(tree, rule))
        assert serialize.rule_to_ids(tree, stop_at_maturity(tree)) == []

    def test_unknown_rule_id(self):
        with pytest.raises(ContractError):
            serialize.ids_to_rule(build_binomial(1)[0], ["nope"])
