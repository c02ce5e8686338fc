import numpy as np
import pytest
from scipy.special import logsumexp

from kylebridge import (
    Domain, QuadratureGrid, BrownianKernel, KilledBrownianKernel, eta_measure,
    CostSpec, SinkhornError, gaussian_closed_form, sinkhorn_solve,
    kyle_system_residual, mu1_eps_build, relative_entropy,
)
from conftest import EPS, LAM, ENTROPY


def test_closed_form_family():
    gf = gaussian_closed_form(0.5)
    assert abs(gf.lam - 0.7807764064044151) < 1e-15
    for eps in (0.01, 0.1, 0.5, 1.0, 3.0, 10.0):
        lam = gaussian_closed_form(eps).lam
        assert abs(lam * lam + eps * lam - 1.0) < 1e-14
    assert abs(gaussian_closed_form(1e-9).lam - 1.0) < 1e-9
    assert abs(gf.entropy - (-0.5 * np.log(0.5 * gf.lam))) < 1e-15
    assert abs(gf.value - (0.5 * 0.5 * np.log(0.5 * gf.lam) + gf.lam)) < 1e-15
    # the two gauges differ by the square terms only
    z = np.linspace(-3, 3, 7)
    assert np.allclose(gf.phi_quadratic(z) - gf.phi_bilinear(z), z * z / 2)
    with pytest.raises(ValueError):
        gaussian_closed_form(0.0)


def test_cost_matrix_forms():
    x = np.array([0.0, 1.0, 2.0])
    y = np.array([-1.0, 0.5])
    Cq = CostSpec(kind="quadratic").matrix(x, y)
    assert np.allclose(Cq, 0.5 * (x[:, None] - y[None, :]) ** 2)
    Cb = CostSpec(kind="bilinear").matrix(x, y)
    assert np.allclose(Cb, -x[:, None] * y[None, :])
    F = lambda z: 2.0 * z
    CqF = CostSpec(kind="quadratic", F=F).matrix(x, y)
    assert np.allclose(CqF, 0.5 * (2.0 * x[:, None] - y[None, :]) ** 2)
    Cc = CostSpec(kind="custom", c=lambda z, y: z + y).matrix(x, y)
    assert np.allclose(Cc, x[:, None] + y[None, :])


def test_solution_invariants(sol_free, eta_free):
    sol = sol_free
    assert sol.converged and sol.residual < 1e-12
    assert np.all(sol.coupling >= 0)
    # gauge normalization pins the phi average to zero
    assert abs(float(sol.phi @ eta_free.support_masses)) < 1e-12
    # marginals of the coupling reproduce f1/f2, and both are ~1
    wm = eta_free.support_masses
    assert np.allclose(sol.coupling @ wm, sol.f1, atol=1e-14)
    assert np.allclose(wm @ sol.coupling, sol.f2, atol=1e-14)
    assert np.max(np.abs(sol.f2 - 1.0)) < 1e-14  # pinned by the final sweep
    assert np.max(np.abs(sol.f1 - 1.0)) < 1e-11


def test_extra_sweep_is_fixed_point(sol_free, eta_free):
    sol = sol_free
    C = sol.cost.matrix(eta_free.grid.support, eta_free.grid.support)
    logw = np.log(eta_free.support_masses)
    phi_new = -sol.eps * logsumexp((sol.zeta[None, :] - C) / sol.eps
                                   + logw[None, :], axis=1)
    # re-align the gauge before comparing
    phi_new -= float(phi_new @ eta_free.support_masses)
    assert np.max(np.abs(phi_new - sol.phi)) < 1e-9


def test_potentials_match_closed_form(sol_free, eta_free):
    gf = gaussian_closed_form(EPS)
    nodes = eta_free.grid.nodes
    win = np.abs(nodes) <= 6.0
    d_phi = sol_free.phi[win] - gf.phi_quadratic(nodes[win])
    d_zeta = sol_free.zeta[win] - gf.zeta_quadratic(nodes[win])
    c = float(np.mean(d_phi))
    assert np.max(np.abs(d_phi - c)) < 1e-6
    assert np.max(np.abs(d_zeta + c)) < 1e-6


def test_symmetric_problem_symmetric_potentials(sol_free, eta_free):
    w = eta_free.support_masses
    phi_c = sol_free.phi - float(sol_free.phi @ w)
    zeta_c = sol_free.zeta - float(sol_free.zeta @ w)
    assert np.max(np.abs(phi_c - zeta_c)) < 1e-8


def test_large_eps_product_limit():
    grid = QuadratureGrid.uniform(Domain(), n_nodes=401)
    eta = eta_measure(BrownianKernel(), 0.0, grid)
    sol = sinkhorn_solve(eta, eta, CostSpec(kind="quadratic"), 100.0, tol=1e-10)
    # deviation from the product measure decays like z*y/eps
    central = np.abs(grid.nodes) <= 1.0
    f_cc = sol.coupling[np.ix_(central, central)]
    assert np.max(np.abs(f_cc - 1.0)) < 2e-2
    wider = np.abs(grid.nodes) <= 2.0
    assert np.max(np.abs(sol.coupling[np.ix_(wider, wider)] - 1.0)) < 8e-2


def test_bilinear_and_quadratic_costs_share_coupling():
    grid = QuadratureGrid.uniform(Domain(), n_nodes=401)
    eta = eta_measure(BrownianKernel(), 0.0, grid)
    sq = sinkhorn_solve(eta, eta, CostSpec(kind="quadratic"), EPS, tol=1e-12)
    sb = sinkhorn_solve(eta, eta, CostSpec(kind="bilinear"), EPS, tol=1e-12)
    rel = np.abs(sq.coupling - sb.coupling) / np.maximum(sq.coupling, 1.0)
    assert np.max(rel) < 1e-9


def test_system_residual(sol_free, eta_free):
    import dataclasses
    res = kyle_system_residual(sol_free, eta_free)
    assert res < 1e-6
    # invariant under the additive gauge
    shifted = dataclasses.replace(sol_free, phi=sol_free.phi + 0.37,
                                  zeta=sol_free.zeta - 0.37)
    assert abs(kyle_system_residual(shifted, eta_free) - res) < 1e-10
    # breaking one node breaks the fixed point
    phi_bad = sol_free.phi.copy()
    phi_bad[400] += 0.1
    broken = dataclasses.replace(sol_free, phi=phi_bad)
    assert kyle_system_residual(broken, eta_free) > res + 0.01


def test_joint_measure_free(sol_free, eta_free):
    pm = mu1_eps_build(sol_free)
    assert pm.strip_z_atom.sum() == 0.0 and pm.corner == 0.0
    total = pm.interior.sum()
    assert abs(total - 1.0) < 1e-8
    z = pm.z_support
    m_zy = float(z @ pm.interior @ z)
    v_z = float((z**2) @ pm.interior.sum(axis=1))
    assert abs(m_zy - LAM) < 1e-6
    assert abs(v_z - 1.0) < 1e-6
    assert pm.diagnostics["f1_dev_l1"] < 1e-10


def test_joint_measure_killed(sol_killed):
    pm = mu1_eps_build(sol_killed)
    parts = (pm.interior.sum(), pm.strip_z_atom.sum(), pm.strip_y_atom.sum(),
             pm.corner)
    assert all(p > 0 for p in parts)
    assert abs(sum(parts) - 1.0) < 1e-8
    assert pm.diagnostics["corner_mass"] == pm.corner


def test_uniform_density_gives_product_measure(sol_free, eta_free):
    import dataclasses
    n = eta_free.grid.n
    flat = dataclasses.replace(
        sol_free, coupling=np.ones((n, n)), f1=np.ones(n), f2=np.ones(n))
    pm = mu1_eps_build(flat)
    w = eta_free.point_masses
    assert np.allclose(pm.interior, np.outer(w, w))
    assert relative_entropy(flat) == 0.0


def test_relative_entropy_matches_gaussian(sol_free):
    assert abs(relative_entropy(sol_free) - ENTROPY) < 1e-5


def test_killed_solution_carries_atom(sol_killed, eta_killed):
    assert eta_killed.atom_mass > 0.25
    assert sol_killed.phi.size == eta_killed.grid.support.size
    assert sol_killed.mu_has_atom and sol_killed.nu_has_atom
    assert np.max(np.abs(sol_killed.f2 - 1.0)) < 1e-13
    assert np.max(np.abs(sol_killed.f1 - 1.0)) < 1e-10


def test_nonconvergence_raises():
    grid = QuadratureGrid.uniform(Domain(), n_nodes=401)
    eta = eta_measure(BrownianKernel(), 0.0, grid)
    with pytest.raises(SinkhornError) as exc:
        sinkhorn_solve(eta, eta, CostSpec(kind="quadratic"), 0.05,
                       tol=1e-14, max_iter=3)
    assert exc.value.iterations == 3
    assert np.isfinite(exc.value.residual) and exc.value.residual > 1e-14
