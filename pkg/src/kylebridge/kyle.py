"""Equilibrium-level quantities for the Gaussian market.

Closed forms for the insider's strategy and the value of private
information when the terminal signal map is the identity and the noise
marginals are standard normal, a quadrature route for the value that
works for general signal maps, and the small-regularization sweep that
tracks how the regularized equilibrium approaches the Brownian-bridge
one.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .grids import Domain, QuadratureGrid
from .kernels import BrownianKernel, KilledBrownianKernel, eta_measure
from .schrodinger import (CostSpec, SchrodingerSolution, SinkhornError,
                          gaussian_closed_form, sinkhorn_solve,
                          relative_entropy)
from .htransform import HField, grad_log, rho_drift_table
from .simulate import SimConfig, simulate

__all__ = [
    "insider_strategy_gaussian", "value_of_information",
    "value_of_information_quadrature",
    "SweepConfig", "SweepRow", "SweepResult", "eps_sweep",
]


def insider_strategy_gaussian(eps: float, t, z1, y):
    """Optimal demand rate lam (z1 - lam y) / (1 - t lam^2).

    lam is the Gaussian coupling correlation for regularization eps;
    as eps -> 0 (lam -> 1) this approaches the bridge pull
    (z1 - y)/(1 - t).  Arguments broadcast.
    """
    lam = gaussian_closed_form(eps).lam
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t >= 1.0):
        raise ValueError("t must lie in [0, 1)")
    z1 = np.asarray(z1, dtype=float)
    y = np.asarray(y, dtype=float)
    out = lam * (z1 - lam * y) / (1.0 - t * lam * lam)
    return float(out) if out.ndim == 0 else out


def value_of_information(eps: float) -> float:
    """Ex-ante profit of knowing the terminal signal, identity signal map.

    V(eps) = (eps/2) log(eps lam) + lam, which tends to 1 as eps -> 0
    (the variance of the signal under the standard-normal terminal law).
    """
    lam = gaussian_closed_form(eps).lam
    return float(0.5 * eps * np.log(eps * lam) + lam)


def value_of_information_quadrature(sol: SchrodingerSolution, F=None) -> float:
    """V by integrating the potentials against the terminal marginals.

    Works for any signal map F (identity by default).  The integrand is
    the bilinear-gauge pair, so quadratic-cost potentials are shifted by
    the square terms first; the result is invariant under the shared
    gauge shift (phi + c, zeta - c).
    """
    xs = sol.mu.grid.support
    ys = sol.nu.grid.support
    fx = np.asarray(F(xs), dtype=float) if F is not None else xs
    if sol.cost.kind == "quadratic":
        phi_b = sol.phi - 0.5 * fx * fx
        zeta_b = sol.zeta - 0.5 * ys * ys
    elif sol.cost.kind == "bilinear":
        phi_b = sol.phi
        zeta_b = sol.zeta
    else:
        raise ValueError("value quadrature needs a bilinear/quadratic cost")
    wmu = sol.mu.support_masses / sol.mu.total_mass
    wnu = sol.nu.support_masses / sol.nu.total_mass
    return float(-(wmu @ phi_b) - (wnu @ zeta_b))


# ---------------------------------------------------------------------------
# regularization sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepConfig:
    """Shared numerics for every eps in a sweep.

    ``paths`` = 0 skips per-eps simulation and leaves corr_sim as nan.
    ``ell`` finite runs the killed family instead; its lam / value /
    corr_theory columns have no closed form and fall back to quadrature
    or nan (exploratory output).
    """

    n_nodes: int = 1601
    z_upper: float = 8.0
    ell: float = -np.inf
    z0: float = 0.0
    tol: float = 1e-9
    max_iter: int = 200_000
    paths: int = 0
    steps: int = 2000
    seed: int = 0
    gap_t: int = 10
    gap_x: int = 21


@dataclass
class SweepRow:
    eps: float
    lam: float
    value: float
    entropy: float
    drift_gap: float
    corr_sim: float
    corr_theory: float
    converged: bool
    residual: float
    iterations: int


@dataclass
class SweepResult:
    rows: list

    COLUMNS = ("eps", "lambda", "value", "entropy", "drift_gap",
               "corr_sim", "corr_theory")

    @property
    def eps_list(self):
        return [r.eps for r in self.rows]

    def row(self, eps: float) -> SweepRow:
        for r in self.rows:
            if abs(r.eps - eps) < 1e-12 * max(1.0, abs(eps)):
                return r
        raise KeyError(f"no sweep row for eps={eps}")

    def table(self):
        """Rows as tuples in COLUMNS order."""
        return [(r.eps, r.lam, r.value, r.entropy, r.drift_gap,
                 r.corr_sim, r.corr_theory) for r in self.rows]


def _drift_gap(field: HField, sigma_sq: float, cfg: SweepConfig) -> float:
    """Root mean square gap between the conditioned demand drift and the
    bridge pull (z1 - y)/(1 - t) over [0, 0.9] x [-2, 2]^2."""
    ts = np.linspace(0.0, 0.9, cfg.gap_t)
    xs = np.linspace(-2.0, 2.0, cfg.gap_x)
    total = 0.0
    count = 0
    for t in ts:
        for z1 in xs:
            got = sigma_sq * grad_log(field, t, xs, np.full(xs.size, z1))
            want = (z1 - xs) / (1.0 - t)
            total += float(np.sum((got - want) ** 2))
            count += xs.size
    return float(np.sqrt(total / count))


def eps_sweep(eps_list, cfg: SweepConfig | None = None) -> SweepResult:
    """Solve, measure, and (optionally) simulate for each eps in order.

    eps_list must be strictly decreasing; solves are warm-started from
    the previous eps.  A non-converged solve is recorded with
    converged=False and nan in the solution-dependent columns; the sweep
    continues.
    """
    cfg = cfg or SweepConfig()
    eps_arr = [float(e) for e in eps_list]
    if not eps_arr:
        raise ValueError("eps_list is empty")
    if any(e <= 0 for e in eps_arr):
        raise ValueError("eps values must be positive")
    if any(b >= a for a, b in zip(eps_arr, eps_arr[1:])):
        raise ValueError("eps_list must be strictly decreasing")

    killed = np.isfinite(cfg.ell)
    dom = Domain(ell=cfg.ell if killed else -np.inf, z_upper=cfg.z_upper)
    grid = QuadratureGrid.uniform(dom, n_nodes=cfg.n_nodes, lower=-cfg.z_upper)
    kernel = KilledBrownianKernel(ell=cfg.ell, z_upper=cfg.z_upper) if killed \
        else BrownianKernel()
    eta = eta_measure(kernel, cfg.z0, grid)
    cost = CostSpec(kind="quadratic")

    rows = []
    phi0 = zeta0 = None
    for eps in eps_arr:
        lam = gaussian_closed_form(eps).lam if not killed else float("nan")
        corr_theory = lam
        value = value_of_information(eps) if not killed else float("nan")
        try:
            sol = sinkhorn_solve(eta, eta, cost, eps, tol=cfg.tol,
                                 max_iter=cfg.max_iter, phi0=phi0, zeta0=zeta0)
        except SinkhornError:
            rows.append(SweepRow(
                eps=eps, lam=lam, value=value, entropy=float("nan"),
                drift_gap=float("nan"), corr_sim=float("nan"),
                corr_theory=corr_theory, converged=False,
                residual=float("nan"), iterations=cfg.max_iter))
            phi0 = zeta0 = None
            continue
        phi0, zeta0 = sol.phi, sol.zeta
        if killed:
            value = value_of_information_quadrature(sol)
        entropy = relative_entropy(sol)
        rho = HField("rho", kernel, solution=sol)
        gap = _drift_gap(rho, kernel.sigma0 ** 2, cfg)
        corr_sim = float("nan")
        if cfg.paths > 0:
            tab = rho_drift_table(rho)
            sc = SimConfig(paths=cfg.paths, steps=cfg.steps, seed=cfg.seed,
                           kernel=kernel, solution=sol, z0=cfg.z0)
            ens = simulate("constrained", sc, rho_table=tab)
            corr_sim = float(np.corrcoef(ens.terminal_z, ens.terminal_y)[0, 1])
        rows.append(SweepRow(
            eps=eps, lam=lam, value=value, entropy=entropy, drift_gap=gap,
            corr_sim=corr_sim, corr_theory=corr_theory, converged=True,
            residual=sol.residual, iterations=sol.iterations))
    return SweepResult(rows=rows)
