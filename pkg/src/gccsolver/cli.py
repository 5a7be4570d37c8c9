"""Command line front end.

Subcommands ``price``, ``american``, ``nash``, ``verify`` and ``selftest``.
Exit codes: 0 success, 2 invalid model or configuration, 3 no convergence,
4 verification or property failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import serialize
from .dynkin import (BUYER, SELLER, GccSpec, NoConvergenceError, iteration_cap, nash_iterate,
                     risk_neutral_snell, risk_neutral_value, verify_nep_exhaustive, verify_nep_snell)
from .exputil import Agent, ConvergenceError
from .expressions import evaluate
from .indifference import Valuer, european_value_process
from .lattice import (ContractError, EventTree, ModelError, canonical_rule, stop_at_maturity,
                      stop_at_time, stop_immediately)
from .scenarios import SCENARIOS, build_scenario
from .selftest import PROPERTIES, TOLERANCES, run_suite
from .snell import recursion_residual, snell_envelope

log = logging.getLogger("gccsolver")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NO_CONVERGENCE = 3
EXIT_FAILED = 4

_MODEL_BASE = {"T": 1.0, "alpha_a": 1.0, "alpha_b": 1.0, "delta": 0.5, "mu": 0.0}


class VerificationFailed(Exception):
    pass


@dataclass
class Setup:
    name: str
    tree: EventTree
    processes: dict
    claims: dict
    params: dict
    defaults: dict
    text: str = ""

    def expr(self, key, given):
        expr = given if given is not None else self.defaults.get(key)
        if expr is None:
            raise ContractError(f"no {key} given and the model has no default (use --{key.replace('_', '-')})")
        return expr

    def node(self, expr):
        return evaluate(expr, self.tree, self.processes, self.claims, self.params, at="node")

    def terminal(self, expr):
        return evaluate(expr, self.tree, self.processes, self.claims, self.params, at="terminal")

    def agent(self, who: str, endowment=None) -> Agent:
        key = "a" if who == SELLER else "b"
        spec = endowment if endowment is not None else self.defaults.get(f"endowment_{key}", "0")
        return Agent(float(self.params[f"alpha_{key}"]), self.terminal(spec))


def _parse_params(pairs):
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ContractError(f"--param expects KEY=VALUE, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise ContractError(f"--param {key}: {value!r} is not a number") from None
    return out


def _flag_params(args):
    return {"steps": args.steps, "alpha_a": args.alpha_a, "alpha_b": args.alpha_b,
            "delta": args.delta, "mu": args.mu, **_parse_params(args.param)}


def load_setup(args) -> Setup:
    if args.model and args.scenario:
        raise ContractError("give either --model or --scenario, not both")
    if not args.model and not args.scenario:
        raise ContractError("a model source is required: --model FILE or --scenario NAME")
    flags = _flag_params(args)
    for key in ("alpha_a", "alpha_b"):
        if flags[key] is not None and not flags[key] > 0:
            raise ContractError(f"--{key.replace('_', '-')} must be positive")
    if args.scenario:
        sc = build_scenario(args.scenario, flags, args.lattice)
        return Setup(sc.name, sc.tree, sc.processes, sc.claims, sc.params, sc.defaults, sc.describe())
    tree, processes, claims, defaults = serialize.load_model(args.model)
    if flags.pop("steps") is not None:
        log.warning("--steps is ignored for model files")
    params = dict(_MODEL_BASE)
    params["T"] = tree.horizon
    params.update({k: v for k, v in defaults.pop("params", {}).items()})
    params.update({k: v for k, v in flags.items() if v is not None})
    text = "\n".join([f"model file: {args.model}", f"tree: {tree!r}",
                      "processes: " + ", ".join(sorted(processes)),
                      "claims: " + (", ".join(sorted(claims)) or "(none)")]
                     + [f"{k}: {v}" for k, v in sorted(defaults.items())])
    return Setup(Path(args.model).stem, tree, processes, claims, params, defaults, text)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _rule_summary(tree, rule):
    rule = canonical_rule(tree, rule)
    inner = ~tree.is_terminal
    return {"stopsAtRoot": bool(rule[tree.root]), "stopsAtMaturity": not bool(rule[inner].any())}


# -- subcommands ------------------------------------------------------------------------

def _endowment(args):
    if args.endowment is not None:
        return args.endowment
    return args.endowment_b if args.agent == BUYER else args.endowment_a


def cmd_price(args) -> int:
    setup = load_setup(args)
    if args.describe:
        print(setup.text)
        return EXIT_OK
    claim_expr = setup.expr("claim", args.claim)
    H = setup.terminal(claim_expr)
    valuer = Valuer(setup.tree, setup.agent(args.agent, _endowment(args)))
    values, theta, weights = european_value_process(valuer, H, return_details=True)
    out = _out(args)
    serialize.write_value_process(out / "value_process.csv", setup.tree, values)
    serialize.write_diagnostics(out / "diagnostics.csv", setup.tree, valuer.measure.lambdas, theta, weights)
    report = {"command": "price", "model": setup.name, "claim": claim_expr, "agent": args.agent,
              "alpha": valuer.alpha, "params": setup.params, "nodes": setup.tree.n_nodes,
              "steps": setup.tree.steps, "recombining": setup.tree.recombining,
              "rootValue": values[setup.tree.root]}
    status = EXIT_OK
    if args.oracle == "riskneutral":
        oracle = risk_neutral_value(setup.tree, H)
        err = float(np.abs(oracle - values).max())
        report["oracle"] = {"method": "riskneutral", "rootValue": oracle[setup.tree.root],
                            "maxError": err, "tol": args.tol, "passed": err <= args.tol}
        if err > args.tol:
            status = EXIT_FAILED
    serialize.write_json(out / "report.json", report)
    if not args.no_plots:
        from .plotting import plot_value_process
        plot_value_process(setup.tree, values, out / "value_process.png", label=f"value of {claim_expr}")
    print(f"root value {values[setup.tree.root]:.12g}")
    return status


def cmd_american(args) -> int:
    setup = load_setup(args)
    if args.describe:
        print(setup.text)
        return EXIT_OK
    payoff_expr = setup.expr("payoff", args.payoff)
    L = setup.node(payoff_expr)
    valuer = Valuer(setup.tree, setup.agent(args.agent, _endowment(args)))
    res = snell_envelope(valuer, L)
    out = _out(args)
    serialize.write_snell_table(out / "snell.csv", setup.tree, L, res.envelope, res.optimal_rule)
    report = {"command": "american", "model": setup.name, "payoff": payoff_expr, "agent": args.agent,
              "alpha": valuer.alpha, "params": setup.params, "nodes": setup.tree.n_nodes,
              "steps": setup.tree.steps, "rootValue": res.root_value,
              "exerciseNodes": int((res.optimal_rule & ~setup.tree.is_terminal).sum()),
              "recursionResidual": recursion_residual(valuer, res),
              "rule": _rule_summary(setup.tree, res.optimal_rule)}
    status = EXIT_OK
    if args.oracle == "riskneutral":
        oracle = risk_neutral_snell(setup.tree, L)
        err = float(np.abs(oracle - res.envelope).max())
        report["oracle"] = {"method": "riskneutral", "rootValue": oracle[setup.tree.root],
                            "maxError": err, "tol": args.tol, "passed": err <= args.tol}
        if err > args.tol:
            status = EXIT_FAILED
    serialize.write_json(out / "report.json", report)
    if not args.no_plots:
        from .plotting import plot_snell
        plot_snell(setup.tree, L, res.envelope, res.optimal_rule, out / "snell.png")
    print(f"root value {res.root_value:.12g}, {report['exerciseNodes']} exercise nodes")
    return status


def _gcc(setup, args) -> GccSpec:
    X = setup.node(setup.expr("x", args.x))
    Y = setup.node(setup.expr("y", args.y))
    buyer = setup.agent(BUYER, args.endowment_b)
    seller = setup.agent(SELLER, args.endowment_a)
    return GccSpec(setup.tree, X, Y, buyer, seller)


def _verify(gcc, tau, sigma, method, tol, cap):
    reports = []
    if method in ("snell", "both"):
        reports.append(verify_nep_snell(gcc, tau, sigma, tol))
    if method in ("exhaustive", "both"):
        reports.append(verify_nep_exhaustive(gcc, tau, sigma, tol, cap))
    return reports


def cmd_nash(args) -> int:
    setup = load_setup(args)
    if args.describe:
        print(setup.text)
        return EXIT_OK
    gcc = _gcc(setup, args)
    tree = setup.tree
    result = nash_iterate(gcc, args.first_mover, args.max_iter)
    out = _out(args)
    serialize.write_trace(out / "trace.csv", result)
    reports = _verify(gcc, result.buyer_rule, result.seller_rule, args.method, args.tol, args.cap)
    passed = all(r.passed for r in reports)
    payload = {
        "command": "nash", "model": setup.name, "params": setup.params, "firstMover": result.first_mover,
        "converged": result.converged, "iterations": result.n_iterations,
        "iterationCap": iteration_cap(tree) if args.max_iter is None else args.max_iter,
        "buyerRule": serialize.rule_to_ids(tree, result.buyer_rule),
        "sellerRule": serialize.rule_to_ids(tree, result.seller_rule),
        "buyer": _rule_summary(tree, result.buyer_rule),
        "seller": _rule_summary(tree, result.seller_rule),
        "jBuyer": result.j_buyer, "jSeller": result.j_seller,
        "verification": [r.as_dict() for r in reports], "passed": passed,
    }
    serialize.write_json(out / "equilibrium.json", payload)
    if not args.no_plots:
        from .plotting import plot_nash
        plot_nash(tree, result, out / "nash.png")
    print(f"{result.n_iterations} responses, jBuyer {result.j_buyer:.12g}, jSeller {result.j_seller:.12g}, "
          f"buyer {payload['buyer']}, seller {payload['seller']}")
    if not passed:
        raise VerificationFailed("equilibrium verification failed")
    return EXIT_OK


def _named_rule(tree, spec):
    spec = str(spec).strip()
    if spec.upper() == "T":
        return stop_at_maturity(tree)
    if spec == "0":
        return stop_immediately(tree)
    try:
        k = int(spec)
    except ValueError:
        raise ContractError(f"rule must be T, 0 or a time step, got {spec!r}") from None
    return stop_at_time(tree, k)


def cmd_verify(args) -> int:
    setup = load_setup(args)
    if args.describe:
        print(setup.text)
        return EXIT_OK
    gcc = _gcc(setup, args)
    tree = setup.tree
    if args.rules:
        if args.tau is not None or args.sigma is not None:
            raise ContractError("give either --rules or --tau/--sigma")
        tau, sigma = serialize.read_rules(args.rules, tree)
    else:
        if args.tau is None or args.sigma is None:
            raise ContractError("verify needs --rules FILE or both --tau and --sigma")
        tau, sigma = _named_rule(tree, args.tau), _named_rule(tree, args.sigma)
    reports = _verify(gcc, tau, sigma, args.method, args.tol, args.cap)
    passed = all(r.passed for r in reports)
    payload = {"command": "verify", "model": setup.name, "params": setup.params,
               "buyerRule": serialize.rule_to_ids(tree, tau), "sellerRule": serialize.rule_to_ids(tree, sigma),
               "reports": [r.as_dict() for r in reports], "passed": passed}
    serialize.write_json(_out(args) / "verify.json", payload)
    for r in reports:
        print(f"{r.method}: buyer gap {r.buyer_gap:.3e}, seller gap {r.seller_gap:.3e}, "
              f"{'pass' if r.passed else 'FAIL'}")
    if not passed:
        raise VerificationFailed("candidate pair is not an equilibrium within tolerance")
    return EXIT_OK


def cmd_selftest(args) -> int:
    if args.describe:
        for name in PROPERTIES:
            print(f"{name}: tolerance {TOLERANCES[name]:g}")
        return EXIT_OK
    if args.trees < 1 or args.max_steps < 1 or args.samples < 1:
        raise ContractError("--trees, --max-steps and --samples must be positive")
    report = run_suite(args.seed, args.trees, args.max_steps, args.samples, fault=args.inject_fault)
    out = _out(args)
    rows = report.rows()
    serialize.write_csv(out / "selftest.csv", ["property", "worstResidual", "tolerance", "passed"], rows)
    serialize.write_json(out / "selftest.json", {
        "command": "selftest", "seed": args.seed, "trees": report.n_cases, "maxSteps": args.max_steps,
        "dualSamples": args.samples, "injectFault": args.inject_fault,
        "properties": {name: {"worstResidual": w, "tolerance": t, "passed": ok} for name, w, t, ok in rows},
        "passed": report.passed})
    if not args.no_plots:
        from .plotting import plot_property_residuals
        plot_property_residuals([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
                                out / "selftest.png")
    for name, worst, tol, ok in rows:
        print(f"{name:26s} {worst:.3e} <= {tol:.0e}  {'pass' if ok else 'FAIL'}")
    if not report.passed:
        raise VerificationFailed("property failures: " + ", ".join(report.failures))
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("model")
    src.add_argument("--model", metavar="FILE", help="gccsolver-model-v1 JSON file")
    src.add_argument("--scenario", metavar="NAME", choices=sorted(SCENARIOS), help="built-in scenario")
    src.add_argument("--steps", type=int, help="number of time steps (scenarios only)")
    src.add_argument("--lattice", choices=["auto", "full", "recombining"], default="auto",
                     help="tree shape for scenario builders (auto: recombine above 18 steps)")
    src.add_argument("--alpha-a", type=float, help="seller risk aversion")
    src.add_argument("--alpha-b", type=float, help="buyer risk aversion")
    src.add_argument("--delta", type=float, help="recall penalty parameter")
    src.add_argument("--mu", type=float, help="drift parameter")
    src.add_argument("--param", action="append", metavar="KEY=VALUE", help="extra scalar parameter")
    src.add_argument("--endowment-a", metavar="SPEC", help="seller endowment expression at maturity")
    src.add_argument("--endowment-b", metavar="SPEC", help="buyer endowment expression at maturity")
    run = common.add_argument_group("run")
    run.add_argument("--out", default="out", metavar="DIR", help="output directory (default: out)")
    run.add_argument("--tol", type=float, default=1e-9, help="verification tolerance")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--threads", type=int, default=1,
                     help="accepted for compatibility; the recursions are vectorised")
    run.add_argument("--describe", action="store_true", help="print the model and exit")
    run.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    run.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gccsolver", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("price", parents=[common], help="indifference value process of a terminal claim")
    p.add_argument("--claim", metavar="EXPR")
    p.add_argument("--agent", choices=[BUYER, SELLER], default=BUYER)
    p.add_argument("--endowment", metavar="SPEC", help="endowment of the chosen agent")
    p.add_argument("--oracle", choices=["riskneutral"])
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("american", parents=[common], help="nonlinear Snell envelope of a reward process")
    p.add_argument("--payoff", metavar="EXPR")
    p.add_argument("--agent", choices=[BUYER, SELLER], default=BUYER)
    p.add_argument("--endowment", metavar="SPEC", help="endowment of the chosen agent")
    p.add_argument("--oracle", choices=["riskneutral"])
    p.set_defaults(func=cmd_american)

    for name, fn, text in (("nash", cmd_nash, "iterated best responses of a game contingent claim"),
                           ("verify", cmd_verify, "check a candidate equilibrium pair")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--x", metavar="EXPR", help="exercise payoff X")
        p.add_argument("--y", metavar="EXPR", help="recall payoff Y >= X")
        p.add_argument("--method", choices=["snell", "exhaustive", "both"], default="snell")
        p.add_argument("--cap", type=int, default=16, help="non-terminal node cap for enumeration")
        if name == "nash":
            p.add_argument("--first-mover", choices=[BUYER, SELLER], default=BUYER)
            p.add_argument("--max-iter", type=int, help="response cap (default: theoretical bound)")
        else:
            p.add_argument("--rules", metavar="FILE", help="JSON with buyerRule and sellerRule node ids")
            p.add_argument("--tau", help="buyer rule: T, 0 or a time step")
            p.add_argument("--sigma", help="seller rule: T, 0 or a time step")
        p.set_defaults(func=fn)

    p = sub.add_parser("selftest", parents=[common], help="randomised property suite")
    p.add_argument("--trees", type=int, default=20)
    p.add_argument("--max-steps", type=int, default=5)
    p.add_argument("--samples", type=int, default=1000, help="sampled martingale measures per tree")
    p.add_argument("--inject-fault", action="store_true",
                   help="price under the tilted physical weights (the suite must fail)")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (NoConvergenceError, ConvergenceError) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (ModelError, ContractError, ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
