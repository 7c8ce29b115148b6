"""Resource allocation for cell-free massive MIMO with short-packet traffic.

Closed-form finite-blocklength rate bounds, Monte-Carlo validation, pilot
assignment by capped graph coloring, and weighted-sum-rate power control
by successive geometric programming.
"""

__version__ = "0.1.0"

from .fcbl import QosSpec, lambda_gain, lb_rate, q_inverse, sinr_lb, sinr_rewrite_terms
from .gp import GpProgram, Monomial, Posynomial, check_kkt, solve
from .model import NetworkInstance, PowerBudget, PowerProfile, equal_power_profile, generate_instance
from .pilot import PilotAssignment, admitted_set, assign_pilots_iterative, build_conflict_matrix, dsatur_color, orthogonal_assignment
from .power import feasibility_init, maximize_wsr, sinr_threshold

__all__ = [
    "GpProgram",
    "Monomial",
    "NetworkInstance",
    "PilotAssignment",
    "Posynomial",
    "PowerBudget",
    "PowerProfile",
    "QosSpec",
    "admitted_set",
    "assign_pilots_iterative",
    "build_conflict_matrix",
    "check_kkt",
    "dsatur_color",
    "equal_power_profile",
    "feasibility_init",
    "generate_instance",
    "lambda_gain",
    "lb_rate",
    "maximize_wsr",
    "orthogonal_assignment",
    "q_inverse",
    "sinr_lb",
    "sinr_rewrite_terms",
    "sinr_threshold",
    "solve",
]
