"""Transition kernels for 1-d diffusions with an absorbing boundary.

A kernel is the pair (q, L): ``q(s, t, z, y)`` is the sub-probability
transition density over the open domain E and ``L(s, t, z)`` the
probability of absorption at the boundary by time t starting from z, so
that  integral_E q(s,t;z,y) dy + L(s,t;z) = 1.  ``qz``/``Lz`` are the
derivatives in the starting point z, which drive every bridge drift
downstream.

Analytic Brownian kernels are closed form (reflection principle for the
killed case); general drifted diffusions go through ``fd_kernel``, a
Crank-Nicolson solve of the backward equation with Rannacher startup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr, log_ndtr  # standard normal CDF, vectorized

from .grids import Domain, QuadratureGrid, DiscreteMeasure

__all__ = [
    "TransitionKernel", "BrownianKernel", "KilledBrownianKernel", "GridKernel",
    "bm_density", "killed_bm_density", "default_prob", "fd_kernel",
    "eta_measure", "product_kernel", "ProductKernel",
]

_SQRT2PI = np.sqrt(2.0 * np.pi)


def _phi(x, var):
    return np.exp(-x * x / (2.0 * var)) / (_SQRT2PI * np.sqrt(var))


def bm_density(s, t, z, y, sigma: float = 1.0):
    """Heat kernel: density at y of sigma-Brownian motion at time t given z at s."""
    if np.any(np.asarray(t) <= np.asarray(s)):
        raise ValueError("need t > s")
    return _phi(np.asarray(y, dtype=float) - np.asarray(z, dtype=float),
                sigma * sigma * (t - s))


def killed_bm_density(s, t, z, y, ell: float, sigma: float = 1.0):
    """Transition density of Brownian motion absorbed at ell (reflection principle).

    Vanishes as y -> ell and as z -> ell; callers must keep z, y > ell.
    """
    if np.any(np.asarray(t) <= np.asarray(s)):
        raise ValueError("need t > s")
    var = sigma * sigma * (t - s)
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    return _phi(y - z, var) - _phi(y + z - 2.0 * ell, var)


def default_prob(s, t, z, ell: float, sigma: float = 1.0):
    """P(absorbed by t | state z at s) for Brownian motion: 2 Phi(-(z-ell)/(sigma sqrt(t-s)))."""
    if np.any(np.asarray(t) <= np.asarray(s)):
        raise ValueError("need t > s")
    sd = sigma * np.sqrt(t - s)
    return 2.0 * ndtr(-(np.asarray(z, dtype=float) - ell) / sd)


class TransitionKernel:
    """Interface: q, L, qz, Lz, all broadcasting over z and y."""

    domain: Domain
    sigma0: float  # diffusion scale used by simulators (constant-sigma kernels)
    closed_form = False  # True when q/qz are exact formulas (selects the
    # analytic differentiation path in htransform.grad_log)

    def q(self, s, t, z, y):
        raise NotImplementedError

    def L(self, s, t, z):
        raise NotImplementedError

    def qz(self, s, t, z, y):
        raise NotImplementedError

    def Lz(self, s, t, z):
        raise NotImplementedError

    def drift(self, t, z):
        """Drift b(t, z) of the underlying diffusion (zero for BM)."""
        return np.zeros_like(np.asarray(z, dtype=float))

    def bridge_ratio(self, t, z, z1):
        """qz(t,1;z,z1)/q(t,1;z,z1), the pull toward a pinned endpoint.

        Generic fallback; closed-form kernels override with forms that
        stay finite when q underflows.
        """
        q = self.q(t, 1.0, z, z1)
        return self.qz(t, 1.0, z, z1) / np.maximum(q, 1e-300)

    def atom_ratio(self, t, z):
        """Lz(t,1;z)/L(t,1;z), the pull when the endpoint is the boundary."""
        return self.Lz(t, 1.0, z) / np.maximum(self.L(t, 1.0, z), 1e-300)


@dataclass
class BrownianKernel(TransitionKernel):
    """sigma * Brownian motion on the whole line (no absorption)."""

    sigma0: float = 1.0
    domain: Domain = None
    closed_form = True

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ValueError("sigma must be positive")
        if self.domain is None:
            self.domain = Domain(ell=-np.inf, z_upper=8.0)
        if self.domain.is_killed:
            raise ValueError("BrownianKernel is the free kernel; use KilledBrownianKernel")

    def q(self, s, t, z, y):
        return bm_density(s, t, z, y, self.sigma0)

    def L(self, s, t, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def qz(self, s, t, z, y):
        var = self.sigma0 ** 2 * (t - s)
        d = np.asarray(y, dtype=float) - np.asarray(z, dtype=float)
        return d / var * _phi(d, var)

    def Lz(self, s, t, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def bridge_ratio(self, t, z, z1):
        d = np.asarray(z1, dtype=float) - np.asarray(z, dtype=float)
        return d / (self.sigma0 ** 2 * (1.0 - t))

    def atom_ratio(self, t, z):
        raise ValueError("free kernel has no boundary atom")


@dataclass
class KilledBrownianKernel(TransitionKernel):
    """sigma * Brownian motion absorbed at a finite lower boundary."""

    ell: float = 0.0
    sigma0: float = 1.0
    z_upper: float = 8.0
    domain: Domain = None
    closed_form = True

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ValueError("sigma must be positive")
        if not np.isfinite(self.ell):
            raise ValueError("ell must be finite; use BrownianKernel otherwise")
        self.domain = Domain(ell=self.ell, z_upper=self.z_upper)

    def q(self, s, t, z, y):
        return killed_bm_density(s, t, z, y, self.ell, self.sigma0)

    def L(self, s, t, z):
        return default_prob(s, t, z, self.ell, self.sigma0)

    def qz(self, s, t, z, y):
        var = self.sigma0 ** 2 * (t - s)
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        d = y - z
        r = y + z - 2.0 * self.ell
        return d / var * _phi(d, var) + r / var * _phi(r, var)

    def Lz(self, s, t, z):
        sd = self.sigma0 * np.sqrt(t - s)
        x = (np.asarray(z, dtype=float) - self.ell) / sd
        return -2.0 * _phi(x, 1.0) / sd

    def bridge_ratio(self, t, z, z1):
        # qz/q with the image term factored out: safe when q underflows
        var = self.sigma0 ** 2 * (1.0 - t)
        z = np.asarray(z, dtype=float)
        z1 = np.asarray(z1, dtype=float)
        d = z1 - z
        r = z1 + z - 2.0 * self.ell
        a = 2.0 * (z - self.ell) * (z1 - self.ell) / var
        return (d + r * np.exp(-a)) / (var * -np.expm1(-a))

    def atom_ratio(self, t, z):
        # -phi(x)/(sd Phi(-x)) in log form; the plain ratio is 0/0 for
        # states far above the boundary at late times
        sd = self.sigma0 * np.sqrt(1.0 - t)
        x = (np.asarray(z, dtype=float) - self.ell) / sd
        return -np.exp(-0.5 * x * x - np.log(_SQRT2PI * sd) - log_ndtr(-x))


# ---------------------------------------------------------------------------
# finite-difference kernel (Crank-Nicolson, backward equation)
# ---------------------------------------------------------------------------

class GridKernel(TransitionKernel):
    """Kernel tabulated by a Crank-Nicolson solve of the backward equation.

    The scheme marches  u_s + b u_z + (sigma^2/2) u_zz = 0  backward from a
    terminal condition, with Dirichlet (absorbing) rows at both ends of the
    computational grid.  The first two steps from any terminal time are
    Rannacher (implicit-Euler half-steps) to damp the oscillatory modes a
    discrete delta would otherwise excite.

    Mass absorbed at the physical boundary ell is separated from mass
    leaking through the truncation boundary z_upper by auxiliary
    boundary-hit solves; the leak lives in ``leak()`` diagnostics, not
    in L.  Query times snap to the scheme's time lattice (within half a
    step); the starting point of a density row snaps to the nearest space
    node, and the y-argument is interpolated linearly.
    """

    _RANNACHER_STEPS = 2

    def __init__(self, b, sigma, domain: Domain, space_steps: int = 801,
                 time_steps: int = 2000, t_max: float = 1.0, lower: float = -8.0):
        if space_steps < 11 or time_steps < 10:
            raise ValueError("grid too coarse: need space_steps >= 11, time_steps >= 10")
        self.domain = domain
        self.b = b if b is not None else (lambda t, z: np.zeros_like(z))
        self._sigma_fn = sigma if callable(sigma) else (lambda t, z, s=sigma: np.full_like(z, float(s)))
        lo = domain.ell if domain.is_killed else lower
        if lo >= domain.z_upper:
            raise ValueError("empty computational domain")
        self.zgrid = np.linspace(lo, domain.z_upper, space_steps)
        self.dz = self.zgrid[1] - self.zgrid[0]
        self.tgrid = np.linspace(0.0, t_max, time_steps + 1)
        self.dt = self.tgrid[1] - self.tgrid[0]
        sig = np.asarray(self._sigma_fn(0.0, self.zgrid), dtype=float)
        if np.any(~np.isfinite(sig)) or np.min(sig) <= 0:
            raise ValueError("sigma must be finite and uniformly positive on the grid")
        self.sigma0 = float(np.mean(sig))
        self._row_cache: dict = {}
        self._surv_cache: dict = {}

    # -- tridiagonal generator at one time level (interior rows only) -------
    def _operator(self, t):
        z = self.zgrid[1:-1]
        bvals = np.broadcast_to(np.asarray(self.b(t, z), dtype=float), z.shape)
        svals = np.broadcast_to(np.asarray(self._sigma_fn(t, z), dtype=float), z.shape)
        if np.any(~np.isfinite(bvals)) or np.any(~np.isfinite(svals)) or np.min(svals) <= 0:
            raise ValueError(f"coefficients not finite/elliptic at t={t}")
        diff = svals * svals / (2.0 * self.dz * self.dz)
        adv = bvals / (2.0 * self.dz)
        return diff - adv, -2.0 * diff, diff + adv  # sub, diag, super of G

    @staticmethod
    def _apply(lowd, maind, upd, u, left=0.0, right=0.0):
        res = maind * u
        res[1:] += lowd[1:] * u[:-1]
        res[0] += lowd[0] * left
        res[:-1] += upd[:-1] * u[1:]
        res[-1] += upd[-1] * right
        return res

    @staticmethod
    def _apply_t(lowd, maind, upd, v):
        # G^T v for G given by (sub=lowd[1:], diag=maind, super=upd[:-1])
        res = maind * v
        res[:-1] += lowd[1:] * v[1:]
        res[1:] += upd[:-1] * v[:-1]
        return res

    @staticmethod
    def _solve(lowd, maind, upd, rhs):
        n = maind.size
        ab = np.zeros((3, n))
        ab[0, 1:] = upd[:-1]
        ab[1, :] = maind
        ab[2, :-1] = lowd[1:]
        return solve_banded((1, 1), ab, rhs)

    @staticmethod
    def _solve_t(lowd, maind, upd, rhs):
        n = maind.size
        ab = np.zeros((3, n))
        ab[0, 1:] = lowd[1:]
        ab[1, :] = maind
        ab[2, :-1] = upd[:-1]
        return solve_banded((1, 1), ab, rhs)

    def _step_back(self, k, u, rannacher, left=0.0, right=0.0):
        """One step from time level k+1 down to k (boundary values constant)."""
        t0, t1 = self.tgrid[k], self.tgrid[k + 1]
        c = 0.5 * self.dt
        if rannacher:
            for tt in (0.5 * (t0 + t1), t0):
                lowd, maind, upd = self._operator(tt)
                rhs = u.copy()
                rhs[0] += c * lowd[0] * left
                rhs[-1] += c * upd[-1] * right
                u = self._solve(-c * lowd, 1.0 - c * maind, -c * upd, rhs)
            return u
        l1, m1, u1 = self._operator(t1)
        l0, m0, u0 = self._operator(t0)
        rhs = u + c * self._apply(l1, m1, u1, u, left, right)
        rhs[0] += c * l0[0] * left
        rhs[-1] += c * u0[-1] * right
        return self._solve(-c * l0, 1.0 - c * m0, -c * u0, rhs)

    def _propagate(self, k_from, k_to, terminal, left=0.0, right=0.0, collect=None):
        """March terminal data at level k_to back to level k_from.

        ``collect``: optional set of levels at which to store snapshots.
        """
        u = np.array(terminal, dtype=float)
        out = {}
        if collect is not None and k_to in collect:
            out[k_to] = u.copy()
        for j, k in enumerate(range(k_to - 1, k_from - 1, -1)):
            u = self._step_back(k, u, rannacher=(j < self._RANNACHER_STEPS),
                                left=left, right=right)
            if collect is not None and k in collect:
                out[k] = u.copy()
        if collect is not None:
            return u, out
        return u

    def _adjoint_row(self, ks, kt, zi):
        """Row z = zgrid[zi] of the propagator from level ks to kt.

        The primal march applies steps at k = kt-1, ..., ks (first two
        Rannacher); the adjoint applies transposed steps in the reverse
        order, so Rannacher transposes come last.
        """
        n = self.zgrid.size - 2
        v = np.zeros(n)
        v[zi - 1] = 1.0
        c = 0.5 * self.dt
        steps = list(enumerate(range(kt - 1, ks - 1, -1)))
        for j, k in reversed(steps):
            t0, t1 = self.tgrid[k], self.tgrid[k + 1]
            if j < self._RANNACHER_STEPS:
                for tt in (t0, 0.5 * (t0 + t1)):  # reversed half-step order
                    lowd, maind, upd = self._operator(tt)
                    v = self._solve_t(-c * lowd, 1.0 - c * maind, -c * upd, v)
            else:
                l0, m0, u0 = self._operator(t0)
                l1, m1, u1 = self._operator(t1)
                v = self._solve_t(-c * l0, 1.0 - c * m0, -c * u0, v)
                v = v + c * self._apply_t(l1, m1, u1, v)
        return v

    def _index(self, t):
        k = int(round((t - self.tgrid[0]) / self.dt))
        if k < 0 or k >= self.tgrid.size or abs(self.tgrid[k] - t) > 0.5 * self.dt + 1e-12:
            raise ValueError(f"time {t} outside the scheme's lattice")
        return k

    def _q_row(self, ks, kt, zi):
        key = (ks, kt, zi)
        if key not in self._row_cache:
            # lumped-mass delta: divide by dz to get a density per unit length
            self._row_cache[key] = self._adjoint_row(ks, kt, zi) / self.dz
        return self._row_cache[key]

    # -- public kernel interface --------------------------------------------
    def q(self, s, t, z, y):
        ks, kt = self._index(s), self._index(t)
        if kt <= ks:
            raise ValueError("need t > s on the lattice")
        scalar_z = np.ndim(z) == 0
        zs = np.atleast_1d(np.asarray(z, dtype=float))
        y = np.asarray(y, dtype=float)
        inner = self.zgrid[1:-1]
        rows = []
        for zv in zs:
            zi = int(round((zv - self.zgrid[0]) / self.dz))
            zi = min(max(zi, 1), self.zgrid.size - 2)
            rows.append(np.interp(y, inner, self._q_row(ks, kt, zi), left=0.0, right=0.0))
        out = rows[0] if scalar_z else np.array(rows)
        return out

    def q_start(self, s, t, y):
        """Density q(s, t, ., y) over every lattice start (one primal march).

        ``y`` snaps to an interior node; the terminal condition is a
        lumped-mass delta there.  Boundary starts carry zero density.
        """
        ks, kt = self._index(s), self._index(t)
        if kt <= ks:
            raise ValueError("need t > s on the lattice")
        yi = int(round((float(y) - self.zgrid[0]) / self.dz))
        yi = min(max(yi, 1), self.zgrid.size - 2)
        g = np.zeros(self.zgrid.size - 2)
        g[yi - 1] = 1.0 / self.dz
        out = np.zeros(self.zgrid.size)
        out[1:-1] = self._propagate(ks, kt, g)
        return out

    def _survival(self, ks, kt):
        key = (ks, kt)
        if key not in self._surv_cache:
            n = self.zgrid.size - 2
            alive = self._propagate(ks, kt, np.ones(n))
            hit_lo = self._propagate(ks, kt, np.zeros(n), left=1.0, right=0.0)
            hit_up = self._propagate(ks, kt, np.zeros(n), left=0.0, right=1.0)
            self._surv_cache[key] = (alive, hit_lo, hit_up)
        return self._surv_cache[key]

    def survival_split(self, s, t, z):
        """(alive, hit_lower, hit_upper) probabilities at (s, z)."""
        ks, kt = self._index(s), self._index(t)
        alive, hit_lo, hit_up = self._survival(ks, kt)
        inner = self.zgrid[1:-1]
        z = np.asarray(z, dtype=float)
        a = np.interp(z, inner, alive, left=0.0, right=0.0)
        lo = np.interp(z, inner, hit_lo, left=1.0, right=0.0)
        up = np.interp(z, inner, hit_up, left=0.0, right=1.0)
        return a, lo, up

    def L(self, s, t, z):
        a, lo, up = self.survival_split(s, t, z)
        if self.domain.is_killed:
            return lo
        return np.zeros_like(np.asarray(z, dtype=float))

    def leak(self, s, t, z):
        """Truncation-boundary mass (diagnostics; not part of L)."""
        a, lo, up = self.survival_split(s, t, z)
        return up if self.domain.is_killed else lo + up

    def qz(self, s, t, z, y):
        # step must clear the start-point snapping, so at least one node
        h = max(1e-4 * (self.zgrid[-1] - self.zgrid[0]), self.dz)
        return (self.q(s, t, np.asarray(z) + h, y) - self.q(s, t, np.asarray(z) - h, y)) / (2.0 * h)

    def Lz(self, s, t, z):
        h = max(1e-4 * (self.zgrid[-1] - self.zgrid[0]), self.dz)
        return (self.L(s, t, np.asarray(z) + h) - self.L(s, t, np.asarray(z) - h)) / (2.0 * h)

    def drift(self, t, z):
        return np.asarray(self.b(t, np.asarray(z, dtype=float)), dtype=float)


def fd_kernel(b, sigma, domain: Domain, space_steps: int = 801,
              time_steps: int = 2000, lower: float = -8.0) -> GridKernel:
    """Crank-Nicolson kernel for dZ = b(t,Z) dt + sigma(t,Z) dW, absorbed at ell."""
    return GridKernel(b, sigma, domain, space_steps, time_steps, lower=lower)


# ---------------------------------------------------------------------------

def eta_measure(kernel: TransitionKernel, z0: float, grid: QuadratureGrid) -> DiscreteMeasure:
    """Time-1 law of the kernel started at z0: density on the grid plus default atom."""
    dens = np.asarray(kernel.q(0.0, 1.0, z0, grid.nodes), dtype=float)
    atom = float(kernel.L(0.0, 1.0, z0)) if kernel.domain.is_killed else 0.0
    return DiscreteMeasure(grid=grid, density_values=dens, atom_mass=atom)


@dataclass
class ProductKernel:
    """Two independent copies of the base dynamics, with boundary strata.

    The pair state is x = (z, y); either coordinate may be absorbed. The
    time-t conditional law of the pair terminal value splits into four
    strata: interior x interior, interior x boundary, boundary x interior
    and boundary x boundary, with the boundary factors weighted by L.
    """

    kz: TransitionKernel
    ky: TransitionKernel

    def q_pair(self, s, t, z, y, zp, yp):
        return self.kz.q(s, t, z, zp) * self.ky.q(s, t, y, yp)

    def strata_weights(self, s, t, z, y):
        Lz = self.kz.L(s, t, z) if self.kz.domain.is_killed else np.zeros_like(np.asarray(z, dtype=float))
        Ly = self.ky.L(s, t, y) if self.ky.domain.is_killed else np.zeros_like(np.asarray(y, dtype=float))
        return Lz, Ly


def product_kernel(k1: TransitionKernel, k2: TransitionKernel | None = None) -> ProductKernel:
    return ProductKernel(kz=k1, ky=k2 if k2 is not None else k1)
