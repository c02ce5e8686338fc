import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from kylebridge import (
    Domain, QuadratureGrid, BrownianKernel, KilledBrownianKernel,
    bm_density, killed_bm_density, default_prob, fd_kernel, eta_measure,
    product_kernel,
)


def test_bm_density_is_heat_kernel():
    ys = np.linspace(-3, 3, 7)
    assert np.allclose(bm_density(0.0, 1.0, 0.0, ys), norm.pdf(ys), atol=1e-15)
    assert np.allclose(bm_density(0.25, 1.0, 0.5, ys),
                       norm.pdf(ys, loc=0.5, scale=np.sqrt(0.75)), atol=1e-15)
    with pytest.raises(ValueError):
        bm_density(1.0, 1.0, 0.0, 0.0)


def test_killed_density_reflection_values():
    # difference of direct and image heat kernels
    v = killed_bm_density(0.0, 1.0, 1.0, 1.0, ell=0.0)
    assert abs(v - (norm.pdf(0.0) - norm.pdf(2.0))) < 1e-15
    # vanishes at the wall from either argument
    assert killed_bm_density(0.0, 1.0, 1e-14, 1.0, ell=0.0) < 1e-13
    assert killed_bm_density(0.0, 1.0, 1.0, 1e-14, ell=0.0) < 1e-13
    ys = np.linspace(0.01, 6.0, 50)
    assert np.all(killed_bm_density(0.3, 1.0, 0.7, ys, ell=0.0) >= 0.0)
    with pytest.raises(ValueError):
        killed_bm_density(0.5, 0.5, 1.0, 1.0, ell=0.0)


def test_default_prob_values():
    assert abs(default_prob(0.0, 1.0, 1.0, ell=0.0) - 2 * norm.cdf(-1.0)) < 1e-15
    assert default_prob(0.3, 1.0, 0.0, ell=0.0) == 1.0
    assert default_prob(0.0, 1.0, 40.0, ell=0.0) < 1e-300
    zs = np.linspace(0.1, 3.0, 20)
    assert np.all(np.diff(default_prob(0.0, 1.0, zs, ell=0.0)) < 0)


def test_conservation_analytic():
    ker = BrownianKernel()
    for s, z in ((0.0, 0.3), (0.6, -1.2)):
        mass = quad(lambda y: ker.q(s, 1.0, z, y), z - 10.0, z + 10.0,
                    points=[z], epsabs=1e-13)[0]
        assert abs(mass - 1.0) < 1e-10
    kk = KilledBrownianKernel(ell=0.0)
    for s, z in ((0.0, 1.0), (0.5, 0.2)):
        mass = quad(lambda y: kk.q(s, 1.0, z, y), 0.0, z + 10.0,
                    points=[z], epsabs=1e-13)[0] + kk.L(s, 1.0, z)
        assert abs(mass - 1.0) < 1e-10


def test_chapman_kolmogorov_analytic():
    kk = KilledBrownianKernel(ell=0.0)
    s, u, t = 0.2, 0.6, 1.0
    for z, y in ((1.3, 0.8), (0.4, 2.0)):
        comp = quad(lambda w: kk.q(s, u, z, w) * kk.q(u, t, w, y),
                    0.0, 12.0, points=[z, y], epsabs=1e-13)[0]
        assert abs(comp - kk.q(s, t, z, y)) < 1e-10


def test_derivative_consistency():
    kk = KilledBrownianKernel(ell=0.0)
    h = 1e-5
    for z, y in ((1.1, 0.6), (2.3, 1.7)):
        fd = (kk.q(0.2, 1.0, z + h, y) - kk.q(0.2, 1.0, z - h, y)) / (2 * h)
        assert abs(kk.qz(0.2, 1.0, z, y) - fd) < 1e-5 * max(abs(fd), 1.0)
        fdL = (kk.L(0.2, 1.0, z + h) - kk.L(0.2, 1.0, z - h)) / (2 * h)
        assert abs(kk.Lz(0.2, 1.0, z) - fdL) < 1e-5 * max(abs(fdL), 1.0)


def test_bridge_ratio_matches_naive_and_stays_finite():
    kk = KilledBrownianKernel(ell=0.0)
    # moderate arguments: agrees with the direct quotient
    for t, z, z1 in ((0.3, 1.0, 0.5), (0.8, 0.4, 1.2)):
        naive = kk.qz(t, 1.0, z, z1) / kk.q(t, 1.0, z, z1)
        assert abs(kk.bridge_ratio(t, z, z1) - naive) < 1e-10 * abs(naive)
    # q underflows here; the factored form reduces to the free pull
    t, z, z1 = 0.999, 0.5, 6.0
    assert kk.q(t, 1.0, z, z1) == 0.0
    r = kk.bridge_ratio(t, z, z1)
    assert np.isfinite(r)
    assert abs(r - (z1 - z) / (1.0 - t)) < 1e-6 * abs(r)
    # free kernel: exact linear pull
    fk = BrownianKernel()
    assert fk.bridge_ratio(0.25, 0.5, 2.0) == (2.0 - 0.5) / 0.75


def test_atom_ratio_log_form():
    kk = KilledBrownianKernel(ell=0.0)
    for t, z in ((0.3, 0.8), (0.7, 1.5)):
        naive = kk.Lz(t, 1.0, z) / kk.L(t, 1.0, z)
        assert abs(kk.atom_ratio(t, z) - naive) < 1e-12 * abs(naive)
    # far above the wall at late times the plain quotient is 0/0
    t, z = 0.999, 1.3
    assert kk.Lz(t, 1.0, z) == 0.0 and kk.L(t, 1.0, z) == 0.0
    r = kk.atom_ratio(t, z)
    sd = np.sqrt(1.0 - t)
    assert np.isfinite(r) and r < 0
    # Mills-ratio asymptote: -x/sd with x = (z - ell)/sd
    assert abs(r + (z / sd) / sd) < 0.01 * abs(r)
    with pytest.raises(ValueError):
        BrownianKernel().atom_ratio(0.5, 1.0)


def test_killed_density_vanishes_at_wall():
    kk = KilledBrownianKernel(ell=0.0)
    ys = np.linspace(0.05, 4.0, 30)
    assert np.all(kk.q(0.25, 1.0, 1e-8, ys) < 1e-6)


def test_kernel_constructor_validation():
    with pytest.raises(ValueError):
        BrownianKernel(sigma0=0.0)
    with pytest.raises(ValueError):
        BrownianKernel(domain=Domain(ell=0.0))
    with pytest.raises(ValueError):
        KilledBrownianKernel(ell=-np.inf)


@pytest.fixture(scope="module")
def fd_free():
    return fd_kernel(None, 1.0, Domain())


@pytest.fixture(scope="module")
def fd_killed():
    return fd_kernel(None, 1.0, Domain(ell=0.0))


def test_fd_kernel_matches_free_oracle(fd_free):
    ker = fd_free
    ys = ker.zgrid[np.abs(ker.zgrid) <= 4.0]
    worst = 0.0
    for s in (0.0, 0.5):
        for z in (-4.0, -2.0, 0.0, 2.0, 4.0):
            got = ker.q(s, 1.0, z, ys)
            worst = max(worst, np.max(np.abs(got - bm_density(s, 1.0, z, ys))))
    assert worst < 1e-4


def test_fd_kernel_matches_killed_oracle(fd_killed):
    ker = fd_killed
    ys = ker.zgrid[(ker.zgrid > 0.0) & (ker.zgrid <= 4.0)]
    worst = worst_L = 0.0
    for s in (0.0, 0.5):
        for z in (0.5, 1.0, 2.0, 3.0):
            got = ker.q(s, 1.0, z, ys)
            worst = max(worst, np.max(np.abs(got - killed_bm_density(s, 1.0, z, ys, 0.0))))
            worst_L = max(worst_L, abs(float(ker.L(s, 1.0, z))
                                       - default_prob(s, 1.0, z, 0.0)))
    assert worst < 1e-4
    assert worst_L < 1e-4


def test_fd_kernel_discrete_balance(fd_killed):
    # lumped-mass row + absorbed + truncation leak accounts for everything
    ker = fd_killed
    w = np.full(ker.zgrid.size, ker.dz)
    w[0] = w[-1] = ker.dz / 2.0
    for s, z in ((0.0, 1.0), (0.25, 3.0)):
        total = (float(ker.q(s, 1.0, z, ker.zgrid) @ w)
                 + float(ker.L(s, 1.0, z)) + float(ker.leak(s, 1.0, z)))
        assert abs(total - 1.0) < 1e-10


def test_fd_kernel_column_route_matches_rows(fd_killed):
    ker = fd_killed
    y = ker.zgrid[500]
    col = ker.q_start(0.25, 1.0, y)
    zs = ker.zgrid[np.linspace(10, 790, 9).astype(int)]
    rows = np.array([float(ker.q(0.25, 1.0, z, y)) for z in zs])
    assert np.max(np.abs(rows - np.interp(zs, ker.zgrid, col))) < 1e-12
    with pytest.raises(ValueError):
        ker.q_start(0.5, 0.5, y)


def test_fd_kernel_qz_consistent(fd_killed):
    got = float(fd_killed.qz(0.25, 1.0, 1.5, 1.0))
    want = KilledBrownianKernel(ell=0.0).qz(0.25, 1.0, 1.5, 1.0)
    assert abs(got - want) < 1e-3


def test_fd_kernel_rejections():
    with pytest.raises(ValueError):
        fd_kernel(None, 0.0, Domain())
    with pytest.raises(ValueError):
        fd_kernel(None, 1.0, Domain(), space_steps=5)
    # ellipticity lost mid-march (sigma(t) crosses zero after t = 0.5)
    ker = fd_kernel(None, lambda t, z: np.full_like(z, 1.0 - 2.0 * t),
                    Domain(), space_steps=51, time_steps=50)
    with pytest.raises(ValueError):
        ker.q(0.5, 1.0, 0.0, np.array([0.0]))
    # off-lattice / reversed times
    with pytest.raises(ValueError):
        ker.q(0.0, 1.5, 0.0, np.array([0.0]))


def test_eta_measure_free_and_killed():
    grid = QuadratureGrid.uniform(Domain(), n_nodes=801)
    eta = eta_measure(BrownianKernel(), 0.0, grid)
    assert eta.atom_mass == 0.0
    assert np.allclose(eta.density_values, norm.pdf(grid.nodes), atol=1e-15)
    assert abs(eta.total_mass - 1.0) < 1e-8

    kk = KilledBrownianKernel(ell=0.0)
    gridk = QuadratureGrid.uniform(kk.domain, n_nodes=801)
    etak = eta_measure(kk, 1.0, gridk)
    assert abs(etak.atom_mass - 2 * norm.cdf(-1.0)) < 1e-15
    assert abs(etak.total_mass - 1.0) < 1e-8
    with pytest.raises(ValueError):
        eta_measure(kk, -0.5, gridk)


def test_product_kernel_factorizes():
    kk = KilledBrownianKernel(ell=0.0)
    pk = product_kernel(kk)
    s, t = 0.2, 0.9
    z, y, zp, yp = 1.0, 0.6, 1.4, 0.3
    assert pk.q_pair(s, t, z, y, zp, yp) == kk.q(s, t, z, zp) * kk.q(s, t, y, yp)
    assert pk.q_pair(s, t, y, z, yp, zp) == pk.q_pair(s, t, z, y, zp, yp)
    Lz, Ly = pk.strata_weights(s, t, z, y)
    assert abs(Lz - kk.L(s, t, z)) < 1e-15 and abs(Ly - kk.L(s, t, y)) < 1e-15
    # four-strata mass: (q-mass + L) in each coordinate tensorizes to 1
    gl = QuadratureGrid.gauss_legendre(0.0, 14.0, 140, 10)
    qz = gl.integrate(kk.q(s, t, z, gl.nodes))
    qy = gl.integrate(kk.q(s, t, y, gl.nodes))
    total = qz * qy + qz * Ly + Lz * qy + Lz * Ly
    assert abs(total - 1.0) < 1e-6
    # free pair has empty boundary strata
    fz, fy = product_kernel(BrownianKernel()).strata_weights(s, t, 0.0, 0.0)
    assert fz == 0.0 and fy == 0.0
