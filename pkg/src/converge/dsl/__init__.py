"""Textual definitions of systems, metrics and Lyapunov candidates."""

from .dual import Dual, Evaluator
from .nodes import (BinOp, BoundArg, Call, Const, Neg, Node, Param, Time, Var, to_source,
                    uses_time, walk)
from .parser import Scope, parse_expression
from .system import (CandidateV, Monomial, SystemDef, eval_analytic_jacobian_batch,
                     eval_candidate_batch, eval_jacobian_ad, eval_jacobian_batch, eval_map,
                     eval_map_batch, eval_theta_batch, parse_candidate, parse_system)

__all__ = [
    "BinOp", "BoundArg", "Call", "CandidateV", "Const", "Dual", "Evaluator", "Monomial", "Neg",
    "Node", "Param", "Scope", "SystemDef", "Time", "Var", "eval_analytic_jacobian_batch",
    "eval_candidate_batch", "eval_jacobian_ad", "eval_jacobian_batch", "eval_map",
    "eval_map_batch", "eval_theta_batch", "parse_candidate", "parse_expression", "parse_system",
    "to_source", "uses_time", "walk",
]
