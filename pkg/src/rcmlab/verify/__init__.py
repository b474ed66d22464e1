"""Desk-scale checks that turn heat-kernel, Harnack and trapping statements into fitted reports."""

from .closure import oracle_closure
from .elliptic import assumption_suite, fontes_mathieu_check, harnack, min_conductance_slope, oscillation
from .heat import decay_exponent, gaussian_bounds, local_clt, near_diagonal_lower
from .report import FitReport
from .trapping import hole_map_feasibility, proposition_ll_suite, spectral_scan, trap_dwell_check, trap_scan

__all__ = [
    "FitReport",
    "assumption_suite",
    "decay_exponent",
    "fontes_mathieu_check",
    "gaussian_bounds",
    "harnack",
    "hole_map_feasibility",
    "local_clt",
    "min_conductance_slope",
    "near_diagonal_lower",
    "oracle_closure",
    "oscillation",
    "proposition_ll_suite",
    "spectral_scan",
    "trap_dwell_check",
    "trap_scan",
]
