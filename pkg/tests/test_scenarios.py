import numpy as np
import pytest

from gccsolver.expressions import evaluate
from gccsolver.lattice import ContractError, ModelError, build_binomial, random_tree
from gccsolver.scenarios import SCENARIOS, build_scenario, scenario_defaults
from gccsolver.serialize import (ids_to_rule, load_model, read_rules, rule_to_ids, save_model,
                                 write_json)


@pytest.fixture
def walk():
    tree, drv = build_binomial(2, traded=True)
    return tree, {"W": drv["W"], "S": drv["W"], "t": drv["t"]}


class TestExpressions:
    def test_arithmetic(self, walk):
        tree, procs = walk
        out = evaluate("max(K - S, 0) * 2 + t", tree, procs, params={"K": 0.1})
        assert np.allclose(out, np.maximum(0.1 - procs["S"], 0) * 2 + procs["t"])

    def test_constant_and_array(self, walk):
        tree, procs = walk
        assert np.array_equal(evaluate(1.5, tree), np.full(tree.n_nodes, 1.5))
        arr = np.arange(tree.n_nodes, dtype=float)
        assert np.array_equal(evaluate(arr, tree), arr)
        with pytest.raises(ContractError):
            evaluate(arr[:-1], tree)

    def test_terminal_view(self, walk):
        tree, procs = walk
        claims = {"H": np.ones(len(tree.terminals))}
        out = evaluate("H + W", tree, procs, claims, at="terminal")
        assert np.allclose(out, 1 + procs["W"][tree.terminals])
        with pytest.raises(ContractError):
            evaluate("H", tree, procs, claims)

    def test_comparison_and_where(self, walk):
        tree, procs = walk
        out = evaluate("where(W > 0, 1, -1) + (t >= 1)", tree, procs)
        expect = np.where(procs["W"] > 0, 1.0, -1.0) + (procs["t"] >= 1)
        assert np.array_equal(out, expect)

    @pytest.mark.parametrize("expr", ["__import__('os')", "W.real", "lambda: 1", "[1]", "unknown + 1",
                                      "max(W, 0", "log(-1 + 0 * W)"])
    def test_rejected(self, walk, expr):
        tree, procs = walk
        with pytest.raises(ContractError):
            evaluate(expr, tree, procs)


class TestScenarios:
    @pytest.mark.parametrize("name", sorted(SCENARIOS))
    def test_builds_and_describes(self, name):
        sc = build_scenario(name)
        text = sc.describe()
        assert f"scenario: {sc.name}" in text and "tree:" in text
        for key in ("x", "y"):
            X = sc.evaluate(sc.defaults[key])
            assert X.shape == (sc.tree.n_nodes,)
        assert sc.evaluate(sc.defaults["claim"], at="terminal").shape == (len(sc.tree.terminals),)

    def test_example_checks_hold(self):
        for name in ("example41-case1", "example41-case2", "example43"):
            sc = build_scenario(name)
            assert sc.checks and all(ok for _, ok in sc.checks)

    def test_violated_check_reported(self):
        sc = build_scenario("example41-case1", {"mu": 2.0})
        assert "VIOLATED" in sc.describe()

    def test_lattice_choice(self):
        assert not build_scenario("example43", {"steps": 18}).tree.recombining
        assert build_scenario("example43", {"steps": 19}).tree.recombining
        assert build_scenario("example43", {"steps": 3}, lattice="recombining").tree.recombining
        with pytest.raises(ContractError):
            build_scenario("example43", lattice="hexagonal")

    def test_invalid_parameters(self):
        with pytest.raises(ContractError):
            build_scenario("example43", {"steps": 0})
        with pytest.raises(ContractError):
            build_scenario("example43", {"alpha_a": 0.0})
        with pytest.raises(ContractError):
            build_scenario("note33", {"p": 1.0})
        with pytest.raises(ContractError):
            scenario_defaults("nope")

    def test_endowment_of_case2(self):
        sc = build_scenario("example41-case2", {"steps": 4})
        C = sc.agent("seller").endowment_on(sc.tree)
        W = sc.processes["W"][sc.tree.terminals]
        assert np.allclose(C, W + 0.5)
        assert np.all(sc.agent("buyer").endowment_on(sc.tree) == 0)


class TestSerialize:
    def test_model_roundtrip(self, tmp_path, rng):
        tree = random_tree(rng, 2)
        X = rng.normal(size=tree.n_nodes)
        H = rng.normal(size=len(tree.terminals))
        path = save_model(tmp_path / "m.json", tree, {"X": X}, {"H": H}, {"x": "X"})
        tree2, procs, claims, defaults = load_model(path)
        assert np.array_equal(tree2.children, tree.children)
        assert np.array_equal(tree2.prob, tree.prob)
        assert np.array_equal(tree2.increments, tree.increments)
        assert np.array_equal(procs["X"], X) and np.array_equal(claims["H"], H)
        assert defaults == {"x": "X"}

    @pytest.mark.parametrize("payload", [
        {"schema": "other"},
        {"schema": "gccsolver-model-v1", "nodes": []},
        {"schema": "gccsolver-model-v1",
         "nodes": [{"id": "r", "time": 0, "parent": None}, {"id": "r", "time": 1, "parent": "r", "prob": 1}]},
        {"schema": "gccsolver-model-v1",
         "nodes": [{"id": "r", "time": 0, "parent": None}, {"id": "a", "time": 1, "parent": "z", "prob": 1}]},
    ])
    def test_bad_models(self, tmp_path, payload):
        path = write_json(tmp_path / "bad.json", payload)
        with pytest.raises(ModelError):
            load_model(path)

    def test_rules_roundtrip(self, tmp_path, rng):
        tree = random_tree(rng, 3)
        tau, sigma = rng.random((2, tree.n_nodes)) < 0.3
        tau[tree.terminals] = sigma[tree.terminals] = True
        path = write_json(tmp_path / "r.json", {"buyerRule": rule_to_ids(tree, tau),
                                                "sellerRule": rule_to_ids(tree, sigma)})
        t2, s2 = read_rules(path, tree)
        assert np.array_equal(t2, ids_to_rule(tree, rule_to_ids(tree, tau)))
        assert rule_to_ids(tree, t2) == rule_to_ids(tree, tau)
        assert rule_to_ids(tree, s2) == rule_to_ids(tree, sigma)
        with pytest.raises(ContractError):
            ids_to_rule(tree, ["missing"])
