"""Numerical checks of incremental stability, convergent dynamics and
contraction for discrete-time, time-varying systems."""

__version__ = "0.1.0"

from .contraction import (MetricField, build_Q, contraction_margin, curve_length, demidovic_certify,
                          metric_bounds, search_P, sweep_rho, theta_from_Q)
from .convergent import (ReferenceTrajectory, check_convergence, find_reference, uniqueness_probe,
                         verify_convergent_lyapunov)
from .dsl import parse_candidate, parse_system
from .dynamics import augment, jacobian, simulate, transfer_matrix
from .incremental import falsify_incremental, fit_exp_rate, verify_incremental_lyapunov
from .verdict import Status, Verdict, Witness

__all__ = [
    "MetricField", "ReferenceTrajectory", "Status", "Verdict", "Witness", "augment", "build_Q",
    "check_convergence", "contraction_margin", "curve_length", "demidovic_certify", "falsify_incremental",
    "find_reference", "fit_exp_rate", "jacobian", "metric_bounds", "parse_candidate", "parse_system",
    "search_P", "simulate", "sweep_rho", "theta_from_Q", "transfer_matrix", "uniqueness_probe",
    "verify_convergent_lyapunov", "verify_incremental_lyapunov",
]
