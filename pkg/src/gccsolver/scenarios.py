"""Built-in models for the command line.

A :class:`Scenario` bundles a tree, named node processes, named terminal
claims, scalar parameters and default expressions for the claim, the
stopping reward, the game payoffs and the endowments.  Every default can be
overridden from the command line.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynkin import GccSpec
from .exputil import Agent
from .expressions import evaluate
from .lattice import ContractError, EventTree, build_binomial, build_incomplete_trinomial

FULL_TREE_MAX_STEPS = 18


@dataclass
class Scenario:
    name: str
    tree: EventTree
    processes: dict
    claims: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    defaults: dict = field(default_factory=dict)
    description: str = ""
    checks: list = field(default_factory=list)

    def describe(self) -> str:
        lines = [f"scenario: {self.name}", self.description.strip(), f"tree: {self.tree!r}"]
        if self.params:
            lines.append("parameters: " + ", ".join(
                f"{k}={v:g}" if isinstance(v, (int, float)) else f"{k}={v}"
                for k, v in sorted(self.params.items())))
        for key in ("claim", "payoff", "x", "y", "endowment_a", "endowment_b"):
            if key in self.defaults:
                lines.append(f"{key}: {self.defaults[key]}")
        for label, ok in self.checks:
            lines.append(f"check {label}: {'holds' if ok else 'VIOLATED'}")
        return "\n".join(line for line in lines if line)

    def evaluate(self, expr, at="node"):
        return evaluate(expr, self.tree, self.processes, self.claims, self.params, at=at)

    def agent(self, who: str) -> Agent:
        """``"seller"`` uses ``alpha_a``/``endowment_a``, ``"buyer"`` the ``_b`` pair."""
        key = "a" if who == "seller" else "b"
        C = self.evaluate(self.defaults.get(f"endowment_{key}", "0"), at="terminal")
        return Agent(float(self.params[f"alpha_{key}"]), C)

    def gcc(self) -> GccSpec:
        """The game with the default payoffs and agents."""
        return GccSpec(self.tree, self.evaluate(self.defaults["x"]), self.evaluate(self.defaults["y"]),
                       self.agent("buyer"), self.agent("seller"))


def _use_lattice(steps: int, lattice: str) -> bool:
    if lattice == "full":
        return False
    if lattice == "recombining":
        return True
    if lattice != "auto":
        raise ContractError("lattice must be auto, full or recombining")
    return steps > FULL_TREE_MAX_STEPS


def _binomial(params, lattice, traded=False):
    steps = int(params["steps"])
    tree, drv = build_binomial(steps, horizon=params.get("T", 1.0), traded=traded,
                               recombine=_use_lattice(steps, lattice))
    procs = {"W": drv["W"], "t": drv["t"]}
    if traded:
        procs["S"] = drv["W"]
    return tree, procs


def _note33(params, lattice):
    p = params["p"]
    if not 0 < p < 1:
        raise ContractError("p must lie in (0, 1)")
    tree = EventTree([0, 1, 1], [[1, 2], [-1, -1], [-1, -1]], [[p, 1 - p], [0, 0], [0, 0]],
                     np.zeros((3, 2, 0)))
    return Scenario(
        "note33", tree, {"t": tree.years()}, {"A": np.array([1.0, 0.0])}, params,
        {"claim": "n * A", "payoff": "0", "x": "0", "y": "0", "endowment_a": "0", "endowment_b": "0"},
        "One period, no traded asset.  The claim pays n on the event A (probability p).\n"
        "Its value solves exp(-alpha pi) = exp(-alpha n) p + 1 - p and stays below "
        "-log(1 - p)/alpha for every n.")


def _constant(params, lattice):
    tree, procs = _binomial(params, lattice)
    return Scenario("constant", tree, procs, {}, params,
                    {"claim": "c", "payoff": "c", "x": "c", "y": "c",
                     "endowment_a": "0", "endowment_b": "0"},
                    "Binomial random walk without a traded asset; every payoff is the constant c.")


def _complete_call(params, lattice):
    tree, procs = _binomial(params, lattice, traded=True)
    return Scenario("complete-call", tree, procs, {}, params,
                    {"claim": "max(S - K, 0)", "payoff": "max(S - K, 0)", "x": "max(S - K, 0)",
                     "y": "max(S - K, 0) + delta", "endowment_a": "0", "endowment_b": "0"},
                    "Complete binomial market, the traded asset S is the walk itself; call on S.")


def _complete_put(params, lattice):
    tree, procs = _binomial(params, lattice, traded=True)
    return Scenario("complete-put", tree, procs, {}, params,
                    {"claim": "max(K - S, 0)", "payoff": "max(K - S, 0)", "x": "max(K - S, 0)",
                     "y": "max(K - S, 0) + delta", "endowment_a": "0", "endowment_b": "0"},
                    "Complete binomial market; put on the traded walk S.")


def _american_put(params, lattice):
    tree, procs = _binomial(params, lattice, traded=True)
    reward = "exp(-rate * t) * max(K - S, 0)"
    return Scenario("american-put", tree, procs, {}, params,
                    {"claim": "exp(-rate * t) * max(K - S, 0)", "payoff": reward, "x": reward,
                     "y": reward + " + delta", "endowment_a": "0", "endowment_b": "0"},
                    "Complete binomial market with a put reward discounted at `rate`, so that\n"
                    "early exercise can pay off; the risk-neutral Snell recursion is the oracle.")


def _basis_call(params, lattice):
    steps = int(params["steps"])
    tree, drv = build_incomplete_trinomial(steps, horizon=params.get("T", 1.0),
                                           correlation=params.get("correlation", "positive"))
    procs = {"S": drv["S"], "U": drv["U"], "t": drv["t"]}
    return Scenario("basis-call", tree, procs, {}, params,
                    {"claim": "max(U - K, 0)", "payoff": "max(U - K, 0)", "x": "max(U - K, 0)",
                     "y": "max(U - K, 0) + delta", "endowment_a": "0", "endowment_b": "0"},
                    "Incomplete trinomial market: the claim is written on a driver U that is only\n"
                    "partly spanned by the traded asset S.")


def _example41(case):
    def build(params, lattice):
        tree, procs = _binomial(params, lattice)
        a_a, a_b, mu, delta = params["alpha_a"], params["alpha_b"], params["mu"], params["delta"]
        T = tree.horizon
        endowment = "0" if case == 1 else "W + mu * t"
        outcome = ("the seller recalls at once, the buyer waits until maturity" if case == 1
                   else "the seller holds W_T + mu T, both wait until maturity")
        checks = [("alpha_b/2 < mu < alpha_a/2", a_b / 2 < mu < a_a / 2),
                  ("0 < delta < (alpha_a/2 + mu) T", 0 < delta < (a_a / 2 + mu) * T)]
        return Scenario(
            f"example41-case{case}", tree, procs, {}, params,
            {"claim": "W + mu * t", "payoff": "W + mu * t", "x": "W + mu * t",
             "y": "W + mu * t + delta", "endowment_a": endowment, "endowment_b": "0"},
            "Drifted walk X = W + mu t, recall penalty delta, no traded asset.\n"
            f"Expected outcome: {outcome}.", checks)
    return build


def _example43(params, lattice):
    tree, procs = _binomial(params, lattice)
    a_a, delta = params["alpha_a"], params["delta"]
    checks = [("0 < delta < (alpha_a/2) T", 0 < delta < a_a / 2 * tree.horizon)]
    return Scenario(
        "example43", tree, procs, {}, params,
        {"claim": "W", "payoff": "W", "x": "W", "y": "W + delta", "endowment_a": "0", "endowment_b": "0"},
        "X = W, Y = W + delta, no traded asset.  Buyer-first iteration ends at (0, T),\n"
        "seller-first iteration at (T, 0); both pairs are equilibria.", checks)


_BASE = {"steps": 4, "T": 1.0, "alpha_a": 1.0, "alpha_b": 1.0, "delta": 0.5, "mu": 0.0}

SCENARIOS = {
    "note33": (_note33, {"steps": 1, "n": 5.0, "p": 0.3}),
    "constant": (_constant, {"steps": 2, "c": 3.0}),
    "complete-call": (_complete_call, {"K": 0.0}),
    "complete-put": (_complete_put, {"K": 0.0}),
    "american-put": (_american_put, {"steps": 6, "K": 0.25, "rate": 0.5}),
    "basis-call": (_basis_call, {"steps": 3, "K": 0.0}),
    "example41-case1": (_example41(1), {"steps": 10, "alpha_a": 2.0, "alpha_b": 0.5, "mu": 0.5, "delta": 0.5}),
    "example41-case2": (_example41(2), {"steps": 10, "alpha_a": 2.0, "alpha_b": 0.5, "mu": 0.5, "delta": 0.5}),
    "example43": (_example43, {"steps": 3, "alpha_a": 2.0, "alpha_b": 1.0, "delta": 0.5}),
}


def scenario_defaults(name: str) -> dict:
    if name not in SCENARIOS:
        raise ContractError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return {**_BASE, **SCENARIOS[name][1]}


def build_scenario(name: str, overrides=None, lattice: str = "auto") -> Scenario:
    """Build a named scenario; ``overrides`` replaces default parameters."""
    params = scenario_defaults(name)
    for key, value in (overrides or {}).items():
        if value is not None:
            params[key] = value
    if int(params["steps"]) < 1:
        raise ContractError("steps must be a positive integer")
    for key in ("alpha_a", "alpha_b"):
        if not params[key] > 0:
            raise ContractError(f"{key} must be positive")
    builder = SCENARIOS[name][0]
    return builder(params, lattice)
