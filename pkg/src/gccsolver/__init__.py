"""Exponential utility indifference valuation, nonlinear Snell envelopes and
Nash equilibria of game contingent claims on finite event trees."""

from .dynkin import (BUYER, SELLER, GccSpec, MonotonicityError, NashResult, NepReport,
                     NoConvergenceError, buyer_response, complete_market_crosscheck, nash_iterate,
                     seller_response, verify_nep_exhaustive, verify_nep_snell)
from .exputil import (Agent, ArbitrageError, ConvergenceError, MartingaleMeasure, emmm, one_step_ce,
                      tilt_measure, utility_indirect)
from .indifference import (Valuer, dual_gap, endowment_identity_check, european_value_process,
                           stopped_value_process, value_at)
from .lattice import (ContractError, EventTree, ModelError, build_binomial, build_incomplete_trinomial,
                      enumerate_stopping_rules, hitting_rule, stopped_payoff, validate_tree)
from .snell import SnellResult, check_supermartingale, ratio_representation, snell_envelope

__version__ = "0.1.0"

__all__ = [
    "Agent", "ArbitrageError", "BUYER", "ContractError", "ConvergenceError", "EventTree", "GccSpec",
    "MartingaleMeasure", "ModelError", "MonotonicityError", "NashResult", "NepReport",
    "NoConvergenceError", "SELLER", "SnellResult", "Valuer", "build_binomial",
    "build_incomplete_trinomial", "buyer_response", "check_supermartingale",
    "complete_market_crosscheck", "dual_gap", "emmm", "endowment_identity_check",
    "enumerate_stopping_rules", "european_value_process", "hitting_rule", "nash_iterate",
    "one_step_ce", "ratio_representation", "seller_response", "snell_envelope", "stopped_payoff",
    "stopped_value_process", "tilt_measure", "utility_indirect", "validate_tree", "value_at",
    "verify_nep_exhaustive", "verify_nep_snell",
]
