import numpy as np
import pytest
from scipy.integrate import quad

from kylebridge import Domain, QuadratureGrid, DiscreteMeasure


def test_domain_flags_and_validation():
    assert not Domain().is_killed
    assert Domain(ell=0.0).is_killed
    with pytest.raises(ValueError):
        Domain(ell=9.0, z_upper=8.0)
    with pytest.raises(ValueError):
        Domain(z_upper=np.inf)


def test_uniform_free_grid():
    g = QuadratureGrid.uniform(Domain(), n_nodes=801)
    assert g.n == 801
    assert g.nodes[0] == -8.0 and g.nodes[-1] == 8.0
    assert not g.has_atom
    assert g.support is g.nodes
    # half weights at both ends, full in the interior
    h = 16.0 / 800
    assert np.allclose([g.weights[0], g.weights[-1]], h / 2.0)
    assert np.allclose(g.weights[1:-1], h)
    dens = np.exp(-g.nodes**2 / 2) / np.sqrt(2 * np.pi)
    assert abs(g.integrate(dens) - 1.0) < 1e-10


def test_uniform_killed_grid_endpoint_correction():
    ell = -1.0
    dom = Domain(ell=ell)
    g = QuadratureGrid.uniform(dom, n_nodes=801)
    h = (dom.z_upper - ell) / 801
    assert abs(g.nodes[0] - (ell + h)) < 1e-12
    assert g.has_atom and g.atom_weight == 1.0
    assert g.support[-1] == ell and g.support.size == g.n + 1
    # corrected weights must integrate a boundary-vanishing integrand far
    # beyond plain-trapezoid accuracy (~1e-5 at this resolution)
    f = lambda y: (y - ell) * np.exp(-(y - ell))
    exact = quad(f, ell, dom.z_upper)[0]
    got = g.integrate(f(g.nodes))
    plain = np.full(g.n, h)
    plain[-1] = h / 2.0
    assert abs(got - exact) < 5e-8
    assert abs(got - exact) < abs(f(g.nodes) @ plain - exact) / 100.0


def test_uniform_killed_below_lower_keeps_atom_slot():
    g = QuadratureGrid.uniform(Domain(ell=-10.0), n_nodes=401)
    assert g.nodes[0] == -8.0
    assert g.has_atom  # measures on this domain may still carry an atom


def test_grid_validation_errors():
    with pytest.raises(ValueError):
        QuadratureGrid.uniform(Domain(), n_nodes=4)
    with pytest.raises(ValueError):
        QuadratureGrid(nodes=np.array([0.0, 0.0, 1.0]), weights=np.ones(3))
    with pytest.raises(ValueError):
        QuadratureGrid(nodes=np.array([0.0, 1.0]), weights=np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        QuadratureGrid(nodes=np.array([0.0, 1.0]), weights=np.ones(2), ell=0.5)
    with pytest.raises(ValueError):
        QuadratureGrid(nodes=np.array([1.0]), weights=np.ones(1))
    with pytest.raises(ValueError):
        QuadratureGrid(nodes=np.array([0.0, 1.0]), weights=np.ones(2),
                       atom_weight=-1.0)


def test_gauss_legendre_rule():
    g = QuadratureGrid.gauss_legendre(-1.0, 1.0, n_panels=4, panel_order=6)
    # degree-11 polynomial is integrated exactly per panel
    assert abs(g.integrate(g.nodes**10) - 2.0 / 11.0) < 1e-14
    g2 = QuadratureGrid.gauss_legendre(-10.0, 10.0, 160, 12)
    dens = np.exp(-g2.nodes**2 / 2) / np.sqrt(2 * np.pi)
    assert abs(g2.integrate(dens) - 1.0) < 1e-14
    with pytest.raises(ValueError):
        QuadratureGrid.gauss_legendre(1.0, 1.0)


def test_integrate_includes_atom():
    g = QuadratureGrid(nodes=np.array([1.0, 2.0]), weights=np.ones(2),
                       atom_weight=1.0, ell=0.0)
    assert g.integrate(np.array([3.0, 4.0]), boundary_value=5.0) == 12.0


@pytest.fixture
def normal_measure():
    g = QuadratureGrid.uniform(Domain(), n_nodes=801)
    dens = np.exp(-g.nodes**2 / 2) / np.sqrt(2 * np.pi)
    return DiscreteMeasure(grid=g, density_values=dens)


def test_measure_masses(normal_measure):
    m = normal_measure
    assert abs(m.total_mass - 1.0) < 1e-8
    assert np.allclose(m.point_masses, m.density_values * m.grid.weights)
    assert m.support_masses.shape == m.grid.support.shape
    # first moment of the standard normal
    assert abs(m.integrate(m.grid.nodes)) < 1e-12
    assert abs(m.integrate(m.grid.nodes**2) - 1.0) < 1e-8


def test_measure_atom_bookkeeping():
    g = QuadratureGrid.uniform(Domain(ell=0.0), n_nodes=401)
    dens = np.zeros(g.n)
    dens[: g.n // 2] = 0.7 / g.integrate(np.ones(g.n) * (np.arange(g.n) < g.n // 2))
    m = DiscreteMeasure(grid=g, density_values=dens, atom_mass=0.3)
    assert abs(m.total_mass - 1.0) < 1e-12
    assert m.support_masses[-1] == 0.3
    assert abs(m.integrate(np.ones(g.n), boundary_value=1.0) - 1.0) < 1e-12


def test_measure_validation():
    g = QuadratureGrid.uniform(Domain(), n_nodes=401)
    dens = np.exp(-g.nodes**2 / 2) / np.sqrt(2 * np.pi)
    with pytest.raises(ValueError):
        DiscreteMeasure(grid=g, density_values=2.0 * dens)
    with pytest.raises(ValueError):
        DiscreteMeasure(grid=g, density_values=-dens)
    with pytest.raises(ValueError):
        DiscreteMeasure(grid=g, density_values=dens * 0.7, atom_mass=0.3)
    with pytest.raises(ValueError):
        DiscreteMeasure(grid=g, density_values=dens[:-1])


def test_sample_support(normal_measure):
    m = normal_measure
    idx = m.sample_support(np.random.default_rng(0), 50_000)
    idx2 = m.sample_support(np.random.default_rng(0), 50_000)
    assert np.array_equal(idx, idx2)
    x = m.grid.support[idx]
    assert abs(np.mean(x)) < 0.02 and abs(np.var(x) - 1.0) < 0.03
    # reweighting by exp(x) tilts the mean to 1 for a standard normal
    w = np.exp(m.grid.support)
    xt = m.grid.support[m.sample_support(np.random.default_rng(1), 50_000,
                                         reweight=w)]
    assert abs(np.mean(xt) - 1.0) < 0.03
    with pytest.raises(ValueError):
        m.sample_support(np.random.default_rng(0), 5,
                         reweight=np.zeros(m.grid.support.size))
