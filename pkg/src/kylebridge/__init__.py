"""Equilibrium construction for insider trading with transaction costs.

Core pipeline: transition kernels for (possibly absorbed) diffusions,
entropic coupling of the terminal law via Sinkhorn iteration, harmonic
conditioning fields built from the coupling, and Monte Carlo simulation
of the resulting bridge systems.
"""

__version__ = "0.1.0"

from .grids import Domain, QuadratureGrid, DiscreteMeasure
from .kernels import (
    BrownianKernel, KilledBrownianKernel, GridKernel,
    bm_density, killed_bm_density, default_prob, fd_kernel,
    eta_measure, product_kernel,
)
from .schrodinger import (
    CostSpec, ProductMeasure, SchrodingerSolution, SinkhornError,
    GaussianFamily, gaussian_closed_form, sinkhorn_solve,
    kyle_system_residual, mu1_eps_build, relative_entropy,
)
from .htransform import (
    HField, DriftField, DriftTable, HDriftTables,
    h_eval, rho_eval, pi_eval, h0_eval, gamma_drift, grad_log,
    h_drift_tables, rho_drift_table, h0_drift_table, time_lattice,
    limit_quadrature,
)
from .simulate import (
    SystemTag, SimConfig, PathEnsemble, simulate, drift_field,
    EntropyEstimate, entropy_estimate,
    EquivalenceReport, equivalence_check, energy_distance,
    BinnedDrift, binned_drift,
)
from .kyle import (
    insider_strategy_gaussian, value_of_information,
    value_of_information_quadrature,
    SweepConfig, SweepRow, SweepResult, eps_sweep,
)

__all__ = [
    "Domain", "QuadratureGrid", "DiscreteMeasure",
    "BrownianKernel", "KilledBrownianKernel", "GridKernel",
    "bm_density", "killed_bm_density", "default_prob", "fd_kernel",
    "eta_measure", "product_kernel",
    "CostSpec", "ProductMeasure", "SchrodingerSolution", "SinkhornError",
    "GaussianFamily", "gaussian_closed_form", "sinkhorn_solve",
    "kyle_system_residual", "mu1_eps_build", "relative_entropy",
    "HField", "DriftField", "DriftTable", "HDriftTables",
    "h_eval", "rho_eval", "pi_eval", "h0_eval", "gamma_drift", "grad_log",
    "h_drift_tables", "rho_drift_table", "h0_drift_table", "time_lattice",
    "limit_quadrature",
    "SystemTag", "SimConfig", "PathEnsemble", "simulate", "drift_field",
    "EntropyEstimate", "entropy_estimate",
    "EquivalenceReport", "equivalence_check", "energy_distance",
    "BinnedDrift", "binned_drift",
    "insider_strategy_gaussian", "value_of_information",
    "value_of_information_quadrature",
    "SweepConfig", "SweepRow", "SweepResult", "eps_sweep",
]
