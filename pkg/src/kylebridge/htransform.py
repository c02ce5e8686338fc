"""Conditional fields built from a coupling: h, rho, pi, the limit field h0,
and the enlargement drift, plus the lattice tables that feed the simulator.

Every field is a quadrature of the coupling density against transition
densities.  With a finite lower boundary the transition law has an atom,
so each integral splits into four strata: interior x interior, two
boundary strips, and the corner.  The free case keeps only the first.

Evaluation is exact quadrature on the coupling's own grid, contracted in
linear space (tail values underflow gracefully instead of polluting
ratios; the coupling density spans many orders of magnitude, which rules
out a single global low-rank truncation).  The DriftTable layer trades
the quadrature for O(1) lookups (linear in t, bilinear in space) so a
path ensemble never touches the dense coupling during stepping.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .grids import QuadratureGrid
from .kernels import TransitionKernel
from .schrodinger import SchrodingerSolution

_CHUNK = 1024
_FIELD_KINDS = ("h", "rho", "pi1", "pi2", "h0", "gamma")
# minimum terminal-density standard deviations per grid spacing before the
# trapezoid quadrature of near-t=1 transition rows starts aliasing
_PEAK_RESOLUTION = 1.2
_TAIL_TOL = 1e-6
_TINY = 1e-300


def _tail_indices(quad: QuadratureGrid, kernel: TransitionKernel) -> np.ndarray:
    """Nodes close to the artificial ends of the integration range.

    A noticeable integrand contribution there means the range truncates
    real mass.  A killing boundary is a real end (the integrand vanishes
    at ell), so only the free end(s) are watched.
    """
    wn = quad.nodes
    margin = 2.0 * kernel.sigma0
    mask = wn > wn[-1] - margin
    if not kernel.domain.is_killed:
        mask |= wn < wn[0] + margin
    return np.where(mask)[0]


def _pair_arrays(*xs):
    arrs = np.broadcast_arrays(*[np.asarray(x, dtype=float) for x in xs])
    scalar = arrs[0].ndim == 0
    return [np.atleast_1d(a).ravel() for a in arrs], scalar


def _ret(values, scalar):
    return float(values[0]) if scalar else values


def limit_quadrature(kernel: TransitionKernel, delta_guard: float = 1e-3,
                     inner_half: float = 9.5, outer: float = 24.0,
                     inner_order: int = 8) -> QuadratureGrid:
    """Graded integration grid for the limit field.

    Near t = 1 the integrand is a transition-density product of standard
    deviation sigma0 * sqrt(delta_guard), always centred inside the state
    range; early times produce wide smooth integrands that reach far out.
    So: panels about that sd wide on |w| <= inner_half, coarse panels out
    to ``outer``.
    """
    sd = kernel.sigma0 * np.sqrt(delta_guard)
    lo = kernel.domain.ell if kernel.domain.is_killed else -outer
    if lo >= outer:
        raise ValueError("domain boundary at or beyond the integration range")
    fine_lo, fine_hi = max(lo, -inner_half), min(outer, inner_half)
    pieces = []

    def _panels(a, b, width, order):
        n = max(int(np.ceil((b - a) / width)), 1)
        g = QuadratureGrid.gauss_legendre(a, b, n_panels=n, panel_order=order)
        pieces.append((g.nodes, g.weights))

    if lo < fine_lo:
        _panels(lo, fine_lo, 0.25, 12)
    _panels(fine_lo, fine_hi, 1.2 * sd, inner_order)
    if outer > fine_hi:
        _panels(fine_hi, outer, 0.25, 12)
    nodes = np.concatenate([p[0] for p in pieces])
    weights = np.concatenate([p[1] for p in pieces])
    return QuadratureGrid(nodes=nodes, weights=weights, ell=kernel.domain.ell)


class HField:
    """One conditional field of a fixed kind over (time, state).

    kind "h"              value(t, z, y)   joint density process
    kind "rho"            value(t, y, z1)  terminal-conditioned demand field
    kind "pi1" / "pi2"    value(t, x)      own-filtration marginal fields
    kind "h0"             value(t, z, y)   small-regularization limit field
    kind "gamma"          value(t, u, z)   enlargement drift (already a
                                           log-gradient, not a density)

    h/rho/pi need a SchrodingerSolution; h0/gamma need the start point z0
    and integrate over a dedicated wide quadrature grid.  ``delta_guard``
    is the closest admissible approach to t = 1.
    """

    def __init__(self, kind: str, kernel_z: TransitionKernel,
                 kernel_y: TransitionKernel | None = None,
                 solution: SchrodingerSolution | None = None,
                 z0: float | None = None,
                 delta_guard: float = 1e-3,
                 quad: QuadratureGrid | None = None):
        if kind not in _FIELD_KINDS:
            raise ValueError(f"unknown field kind {kind!r}")
        self.kind = kind
        self.kz = kernel_z
        self.ky = kernel_y if kernel_y is not None else kernel_z
        self.solution = solution
        self.z0 = z0
        self.delta_guard = float(delta_guard)
        self._factors = None
        self._cache = {}
        if kind in ("h", "rho", "pi1", "pi2"):
            if solution is None:
                raise ValueError(f"kind {kind!r} needs a SchrodingerSolution")
            if solution.mu_has_atom != solution.nu_has_atom:
                raise ValueError("mixed atom/no-atom marginals are not supported")
        else:
            if z0 is None:
                raise ValueError(f"kind {kind!r} needs the start point z0")
            if quad is None:
                quad = limit_quadrature(self.kz, delta_guard=delta_guard)
            self._tail_idx = _tail_indices(quad, self.kz)
        self.quad = quad

    # -- time admissibility --------------------------------------------------

    def _check_t(self, t: float) -> float:
        t = float(t)
        if t >= 1.0:
            raise ValueError("fields are undefined at t >= 1; use the coupling directly")
        if t > 1.0 - self.delta_guard + 1e-12:
            raise ValueError(
                f"t={t} is inside the guard window (1 - {self.delta_guard:g}, 1); "
                "the simulator freezes drift there instead of evaluating")
        if t < 0.0:
            raise ValueError("t must lie in [0, 1)")
        return t

    # -- cached contraction factors -------------------------------------------

    def factors(self) -> dict:
        """Weighted coupling matrix and atom strips, assembled once.

        B = diag(w_mu) f diag(w_nu), so the interior stratum of every
        joint quadrature is a plain bilinear form q_z B q_y.
        """
        if self._factors is not None:
            return self._factors
        sol = self.solution
        wz = sol.mu.grid.weights
        wy = sol.nu.grid.weights
        fac = {
            "B": wz[:, None] * sol.f_interior * wy[None, :],
            "wz": wz, "wy": wy,
            "nz": sol.mu.grid.nodes, "ny": sol.nu.grid.nodes,
            "w_fcol": None, "w_frow": None,
            "fc": sol.f_corner,
            "atoms": sol.mu_has_atom and sol.nu_has_atom,
        }
        if fac["atoms"]:
            fac["w_fcol"] = wz * sol.f_nu_atom_col
            fac["w_frow"] = wy * sol.f_mu_atom_row
        self._factors = fac
        return fac

    # -- h ---------------------------------------------------------------------

    def _h_chunk(self, t, z, y, grads=False):
        fac = self.factors()
        Qz = self.kz.q(t, 1.0, z[:, None], fac["nz"][None, :])
        Qy = self.ky.q(t, 1.0, y[:, None], fac["ny"][None, :])
        T = Qz @ fac["B"]
        val = np.einsum("ij,ij->i", T, Qy)
        hz = hy = None
        if grads:
            Qzd = self.kz.qz(t, 1.0, z[:, None], fac["nz"][None, :])
            Qyd = self.ky.qz(t, 1.0, y[:, None], fac["ny"][None, :])
            hz = np.einsum("ij,ij->i", Qzd @ fac["B"], Qy)
            hy = np.einsum("ij,ij->i", T, Qyd)
        if fac["atoms"]:
            a = Qz @ fac["w_fcol"]
            b = Qy @ fac["w_frow"]
            Lz = self.kz.L(t, 1.0, z)
            Ly = self.ky.L(t, 1.0, y)
            fc = fac["fc"]
            val = val + a * Ly + Lz * b + fc * Lz * Ly
            if grads:
                ad = Qzd @ fac["w_fcol"]
                bd = Qyd @ fac["w_frow"]
                Lzd = self.kz.Lz(t, 1.0, z)
                Lyd = self.ky.Lz(t, 1.0, y)
                hz = hz + ad * Ly + Lzd * b + fc * Lzd * Ly
                hy = hy + a * Lyd + Lz * bd + fc * Lz * Lyd
        return val, hz, hy

    def _h_eval(self, t, z, y, grads=False):
        (z, y), scalar = _pair_arrays(z, y)
        out = np.empty(z.size)
        gz = np.empty(z.size) if grads else None
        gy = np.empty(z.size) if grads else None
        for lo in range(0, z.size, _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            v, hz, hy = self._h_chunk(t, z[sl], y[sl], grads=grads)
            out[sl] = v
            if grads:
                gz[sl], gy[sl] = hz, hy
        if grads:
            return (out, gz, gy), scalar
        return out, scalar

    # -- rho --------------------------------------------------------------------

    def _cond_rows(self, z1):
        """Coupling rows and atom-column values at conditioning points,
        blended linearly between grid nodes (exact at nodes; the boundary
        atom selects the boundary row)."""
        sol = self.solution
        nodes = sol.mu.grid.nodes
        F = sol.f_interior
        z1 = np.asarray(z1, dtype=float)
        atom = np.zeros(z1.size, dtype=bool)
        if sol.mu_has_atom:
            atom = np.isclose(z1, sol.mu.grid.ell, rtol=0.0, atol=1e-12)
        inside = ~atom
        if np.any(inside & ((z1 < nodes[0]) | (z1 > nodes[-1]))):
            raise ValueError("conditioning point outside the coupling grid")
        rows = np.empty((z1.size, F.shape[1]))
        colv = np.zeros(z1.size)
        f1v = np.empty(z1.size)
        if np.any(inside):
            zi = z1[inside]
            i = np.clip(np.searchsorted(nodes, zi) - 1, 0, nodes.size - 2)
            w = np.clip((zi - nodes[i]) / (nodes[i + 1] - nodes[i]), 0.0, 1.0)
            rows[inside] = F[i] * (1.0 - w)[:, None] + F[i + 1] * w[:, None]
            f1v[inside] = sol.f1[i] * (1.0 - w) + sol.f1[i + 1] * w
            if sol.nu_has_atom:
                fcol = sol.f_nu_atom_col
                colv[inside] = fcol[i] * (1.0 - w) + fcol[i + 1] * w
        if np.any(atom):
            rows[atom] = sol.f_mu_atom_row
            colv[atom] = sol.f_corner
            f1v[atom] = sol.f1[-1]
        return rows, colv, f1v

    def _rho_eval(self, t, y, z1, grads=False, normalized=True):
        (y, z1), scalar = _pair_arrays(y, z1)
        sol = self.solution
        ny = sol.nu.grid.nodes
        wy = sol.nu.grid.weights
        killed = self.ky.domain.is_killed
        out = np.empty(y.size)
        gy = np.empty(y.size) if grads else None
        for lo in range(0, y.size, _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            rows, colv, f1v = self._cond_rows(z1[sl])
            yc = y[sl]
            Qy = self.ky.q(t, 1.0, yc[:, None], ny[None, :])
            v = np.einsum("ij,ij->i", rows * wy[None, :], Qy)
            if killed:
                v = v + colv * self.ky.L(t, 1.0, yc)
            if normalized:
                v = v / f1v
            out[sl] = v
            if grads:
                Qyd = self.ky.qz(t, 1.0, yc[:, None], ny[None, :])
                g = np.einsum("ij,ij->i", rows * wy[None, :], Qyd)
                if killed:
                    g = g + colv * self.ky.Lz(t, 1.0, yc)
                if normalized:
                    g = g / f1v
                gy[sl] = g
        if grads:
            return (out, gy), scalar
        return out, scalar

    # -- pi ---------------------------------------------------------------------

    def _pi_eval(self, t, x, grads=False):
        """pi1(t, y) and pi2(t, z).

        Defined as the h average against the reference time-t marginal of
        the other coordinate; collapsing that integral through the
        Chapman-Kolmogorov identity leaves a single quadrature of the
        other coordinate's terminal marginal density (f2 for pi1, f1 for
        pi2) against this coordinate's transition row, which is what is
        evaluated here.  Valid at t = 0 as well.
        """
        (x,), scalar = _pair_arrays(x)
        first = self.kind == "pi1"
        sol = self.solution
        ker = self.ky if first else self.kz
        grid = sol.nu.grid if first else sol.mu.grid
        fvals = sol.f2 if first else sol.f1
        killed = ker.domain.is_killed
        if killed:
            fw = fvals[:-1] * grid.weights
            f_atom = float(fvals[-1])
        else:
            fw = fvals * grid.weights
            f_atom = 0.0
        out = np.empty(x.size)
        g = np.empty(x.size) if grads else None
        for lo in range(0, x.size, _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            xc = x[sl]
            v = ker.q(t, 1.0, xc[:, None], grid.nodes[None, :]) @ fw
            if killed:
                v = v + f_atom * ker.L(t, 1.0, xc)
            out[sl] = v
            if grads:
                gv = ker.qz(t, 1.0, xc[:, None], grid.nodes[None, :]) @ fw
                if killed:
                    gv = gv + f_atom * ker.Lz(t, 1.0, xc)
                g[sl] = gv
        if grads:
            return (out, g), scalar
        return out, scalar

    # -- h0 / gamma ----------------------------------------------------------------

    def _h0_eval(self, t, z, y, grads=(False, False)):
        (z, y), scalar = _pair_arrays(z, y)
        wn = self.quad.nodes
        gw = self.quad.weights / self.kz.q(0.0, 1.0, self.z0, wn)
        killed = self.kz.domain.is_killed
        L0 = float(self.kz.L(0.0, 1.0, self.z0)) if killed else 1.0
        out = np.empty(z.size)
        gz = np.empty(z.size) if grads[0] else None
        gy = np.empty(z.size) if grads[1] else None
        for lo in range(0, z.size, _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            zc, yc = z[sl], y[sl]
            Qz = self.kz.q(t, 1.0, zc[:, None], wn[None, :]) * gw[None, :]
            Qy = self.ky.q(t, 1.0, yc[:, None], wn[None, :])
            terms = Qz * Qy
            v = terms.sum(axis=1)
            tail = np.abs(terms[:, self._tail_idx]).sum(axis=1)
            bad = tail > _TAIL_TOL * np.maximum(np.abs(v), _TINY)
            if np.any(bad):
                i = int(np.argmax(bad))
                raise RuntimeError(
                    f"h0 quadrature tail exceeds {_TAIL_TOL:g} of the integral at "
                    f"(t={t:g}, z={zc[i]:.4g}, y={yc[i]:.4g}); widen the grid")
            if killed:
                Lz = self.kz.L(t, 1.0, zc)
                Ly = self.ky.L(t, 1.0, yc)
                v = v + Lz * Ly / L0
            out[sl] = v
            if grads[0]:
                Qzd = self.kz.qz(t, 1.0, zc[:, None], wn[None, :]) * gw[None, :]
                gv = (Qzd * Qy).sum(axis=1)
                if killed:
                    gv = gv + self.kz.Lz(t, 1.0, zc) * Ly / L0
                gz[sl] = gv
            if grads[1]:
                Qyd = self.ky.qz(t, 1.0, yc[:, None], wn[None, :])
                gv = (Qz * Qyd).sum(axis=1)
                if killed:
                    gv = gv + Lz * self.ky.Lz(t, 1.0, yc) / L0
                gy[sl] = gv
        res = [out]
        if grads[0]:
            res.append(gz)
        if grads[1]:
            res.append(gy)
        return res, scalar

    # -- public dispatch --------------------------------------------------------

    def value(self, t, *state):
        t = self._check_t(t)
        key = None
        if all(np.ndim(s) == 0 for s in state):
            key = (t,) + tuple(float(s) for s in state)
            hit = self._cache.get(key)
            if hit is not None:
                return hit
        if self.kind == "h":
            v, scalar = self._h_eval(t, *state)
        elif self.kind == "rho":
            v, scalar = self._rho_eval(t, *state)
        elif self.kind in ("pi1", "pi2"):
            v, scalar = self._pi_eval(t, *state)
        elif self.kind == "h0":
            (v,), scalar = self._h0_eval(t, *state)
        else:  # gamma: the value IS the drift ratio
            (v, gu), scalar = self._h0_eval(t, *state, grads=(True, False))
            v = gu / v
        out = _ret(v, scalar)
        if key is not None:
            if len(self._cache) >= 1 << 16:
                self._cache.clear()
            self._cache[key] = out
        return out


def h_eval(field: HField, t, z, y):
    """Joint conditional field h(t, (z, y)); rejects t >= 1."""
    if field.kind != "h":
        raise ValueError("h_eval needs a field of kind 'h'")
    return field.value(t, z, y)


def rho_eval(field: HField, t, y, z1, normalized: bool = True):
    """Terminal-conditioned field rho(t, y; z1), divided by f1(z1) unless
    ``normalized`` is off (the drift ratio is insensitive to the choice)."""
    if field.kind != "rho":
        raise ValueError("rho_eval needs a field of kind 'rho'")
    t = field._check_t(t)
    v, scalar = field._rho_eval(t, y, z1, normalized=normalized)
    return _ret(v, scalar)


def pi_eval(field: HField, t, x):
    """Own-filtration marginal field pi^i(t, x)."""
    if field.kind not in ("pi1", "pi2"):
        raise ValueError("pi_eval needs a field of kind 'pi1' or 'pi2'")
    return field.value(t, x)


def h0_eval(t, z, y, kernel: TransitionKernel, z0: float,
            quad: QuadratureGrid | None = None, delta_guard: float = 1e-3):
    """Limit field h0; convenience wrapper over a transient HField."""
    f = HField("h0", kernel, z0=z0, quad=quad, delta_guard=delta_guard)
    return f.value(t, z, y)


def gamma_drift(t, u, z, kernel: TransitionKernel, z0: float,
                quad: QuadratureGrid | None = None, delta_guard: float = 1e-3):
    """Enlargement drift: d/du of log of the h0-type integral."""
    f = HField("gamma", kernel, z0=z0, quad=quad, delta_guard=delta_guard)
    return f.value(t, u, z)


# ---------------------------------------------------------------------------
# log-gradients
# ---------------------------------------------------------------------------

def _fd_span(field: HField) -> float:
    nodes = field.solution.mu.grid.nodes if field.solution is not None \
        else field.quad.nodes
    return float(nodes[-1] - nodes[0])


def _fd_log_grad(evalf, x, ell, h):
    """Central difference of log(evalf), shrinking the step near a killing
    boundary so the stencil stays in the open domain."""
    x = np.asarray(x, dtype=float)
    step = np.full(x.shape, h)
    if np.isfinite(ell):
        step = np.minimum(step, np.maximum((x - ell) / 2.0, 1e-14))
    up = np.log(evalf(x + step))
    dn = np.log(evalf(x - step))
    out = (up - dn) / (2.0 * step)
    return float(out) if x.ndim == 0 else out


def grad_log(field: HField, t, *state, method: str = "auto"):
    """Log-gradient of a field: (h_z/h, h_y/h) for h and h0, rho_y/rho for
    rho, pi_x/pi for the pi fields.

    "analytic" differentiates the transition density under the integral;
    "fd" central-differences the field itself with step 1e-4 x grid span;
    "check" runs both, warns above 1e-4 relative disagreement, and returns
    the analytic value; "auto" picks analytic for closed-form kernels.
    """
    if field.kind == "gamma":
        raise ValueError("gamma already is a drift; evaluate it directly")
    t = field._check_t(t)
    if method == "auto":
        method = "analytic" if field.kz.closed_form else "fd"
    if method not in ("analytic", "fd", "check"):
        raise ValueError(f"unknown method {method!r}")
    analytic = _grad_log_analytic(field, t, state) if method != "fd" else None
    fd = _grad_log_fd(field, t, state) if method != "analytic" else None
    if method == "check":
        pairs = list(zip(analytic, fd)) if isinstance(analytic, tuple) \
            else [(analytic, fd)]
        rel = 0.0
        for a, b in pairs:
            a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
            rel = max(rel, float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1.0))))
        if rel > 1e-4:
            warnings.warn(f"analytic and fd log-gradients disagree by {rel:.2e} "
                          "(relative)", RuntimeWarning)
        return analytic
    return analytic if method == "analytic" else fd


def _grad_log_analytic(field, t, state):
    if field.kind == "h":
        (v, gz, gy), scalar = field._h_eval(t, *state, grads=True)
        return _ret(gz / v, scalar), _ret(gy / v, scalar)
    if field.kind == "h0":
        (v, gz, gy), scalar = field._h0_eval(t, *state, grads=(True, True))
        return _ret(gz / v, scalar), _ret(gy / v, scalar)
    if field.kind == "rho":
        (v, gy), scalar = field._rho_eval(t, *state, grads=True)
        return _ret(gy / v, scalar)
    (v, g), scalar = field._pi_eval(t, *state, grads=True)
    return _ret(g / v, scalar)


def _grad_log_fd(field, t, state):
    h = 1e-4 * _fd_span(field)
    if field.kind in ("h", "h0"):
        z, y = [np.asarray(s, dtype=float) for s in state]
        gz = _fd_log_grad(lambda v: field.value(t, v, y), z, field.kz.domain.ell, h)
        gy = _fd_log_grad(lambda v: field.value(t, z, v), y, field.ky.domain.ell, h)
        return gz, gy
    if field.kind == "rho":
        y, z1 = state
        return _fd_log_grad(lambda v: field.value(t, v, z1),
                            np.asarray(y, dtype=float), field.ky.domain.ell, h)
    x = np.asarray(state[0], dtype=float)
    ker = field.ky if field.kind == "pi1" else field.kz
    return _fd_log_grad(lambda v: field.value(t, v), x, ker.domain.ell, h)


# ---------------------------------------------------------------------------
# drift fields and lattice tables
# ---------------------------------------------------------------------------

@dataclass
class DriftField:
    """System drift (t, z, y) -> (driftZ, driftY) with absorption masking.

    Zeroes the drift of absorbed coordinates, matching the SDE indicator;
    masking the noise is the simulator's job.  Raises on non-finite drift
    at alive entries, reporting the offending state.
    """

    system: str
    fn: object  # callable(t, z, y, z_alive, y_alive) -> (dz, dy)

    def __call__(self, t, z, y, z_alive=None, y_alive=None):
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        if z_alive is None:
            z_alive = np.ones(z.shape, dtype=bool)
        if y_alive is None:
            y_alive = np.ones(y.shape, dtype=bool)
        dz, dy = self.fn(t, z, y, z_alive, y_alive)
        dz = np.where(z_alive, dz, 0.0)
        dy = np.where(y_alive, dy, 0.0)
        bad_z = z_alive & ~np.isfinite(dz)
        bad_y = y_alive & ~np.isfinite(dy)
        if np.any(bad_z) or np.any(bad_y):
            i = int(np.argmax(bad_z | bad_y))
            raise FloatingPointError(
                f"non-finite drift at t={t:g}, state=({z.flat[i]:.4g}, {y.flat[i]:.4g})")
        return dz, dy


def time_lattice(n: int = 161, delta_sim: float = 1e-3,
                 dense_from: float = 0.9) -> np.ndarray:
    """Table times on [0, 1-delta]: uniform early, geometric near 1."""
    if not 0.0 < delta_sim <= 1.0 - dense_from:
        raise ValueError("need 0 < delta_sim <= 1 - dense_from")
    n_lo = n // 2
    lo = np.linspace(0.0, dense_from, n_lo, endpoint=False)
    hi = 1.0 - np.geomspace(1.0 - dense_from, delta_sim, n - n_lo)
    return np.concatenate([lo, hi])


@dataclass
class DriftTable:
    """Drift values on times x lattice (x conditioning lattice).

    eval() blends linearly in t and (bi)linearly in space with edge
    clamping; lattices are built to cover the reachable region so the
    clamp only fires on stray excursions.  ``time_scaled`` interpolates
    (1 - t) * drift instead, which stays smooth for drifts growing like
    1/(1 - t) (the unregularized bridge pull); leave it off for drifts
    that stay bounded at t = 1.  ``atom_values`` holds the drift when
    the conditioning coordinate sits at the boundary atom.
    Interpolation error has no a-priori bound here; measure it with
    ``compare`` against a finer build (Richardson style).
    """

    times: np.ndarray
    x: np.ndarray
    values: np.ndarray
    cond: np.ndarray | None = None
    atom_values: np.ndarray | None = None
    sigma_sq: float = 1.0
    time_scaled: bool = False

    def __post_init__(self):
        if self.values.shape[0] != self.times.size \
                or self.values.shape[1] != self.x.size:
            raise ValueError("table shape mismatch")
        if self.cond is not None and self.values.shape[2] != self.cond.size:
            raise ValueError("conditioning lattice mismatch")

    def _time_blend(self, t: float):
        ts = self.times
        if t <= ts[0]:
            return 0, 0, 0.0
        if t >= ts[-1]:
            return ts.size - 1, ts.size - 1, 0.0
        i = int(np.searchsorted(ts, t)) - 1
        return i, i + 1, float((t - ts[i]) / (ts[i + 1] - ts[i]))

    @staticmethod
    def _locate(lat, q):
        i = np.clip(np.searchsorted(lat, q) - 1, 0, lat.size - 2)
        w = np.clip((q - lat[i]) / (lat[i + 1] - lat[i]), 0.0, 1.0)
        return i, w

    def _eval_slice(self, k: int, xq, condq, atom_mask):
        ix, wx = self._locate(self.x, xq)
        v = self.values[k]
        if self.cond is None:
            out = v[ix] * (1.0 - wx) + v[ix + 1] * wx
        else:
            ic, wc = self._locate(self.cond, condq)
            out = (v[ix, ic] * (1.0 - wx) * (1.0 - wc)
                   + v[ix + 1, ic] * wx * (1.0 - wc)
                   + v[ix, ic + 1] * (1.0 - wx) * wc
                   + v[ix + 1, ic + 1] * wx * wc)
        if atom_mask is not None and np.any(atom_mask):
            if self.atom_values is None:
                raise ValueError("table has no atom stratum")
            av = self.atom_values[k]
            out = np.where(atom_mask, av[ix] * (1.0 - wx) + av[ix + 1] * wx, out)
        return out

    def eval(self, t: float, xq, condq=None, atom_mask=None):
        xq = np.asarray(xq, dtype=float)
        if self.cond is not None and condq is None:
            raise ValueError("table needs conditioning values")
        if condq is not None:
            condq = np.asarray(condq, dtype=float)
        t = float(min(max(t, self.times[0]), self.times[-1]))
        i, j, a = self._time_blend(t)
        ci = (1.0 - self.times[i]) if self.time_scaled else 1.0
        s = self._eval_slice(i, xq, condq, atom_mask) * ci
        if j != i and a > 0.0:
            cj = (1.0 - self.times[j]) if self.time_scaled else 1.0
            s = s * (1.0 - a) + self._eval_slice(j, xq, condq, atom_mask) * (cj * a)
        return s / (1.0 - t) if self.time_scaled else s

    def compare(self, other: "DriftTable", n: int = 2000, seed: int = 0) -> float:
        """Sup |self - other| on random in-range probes."""
        rng = np.random.default_rng(seed)
        ts = rng.uniform(self.times[0], self.times[-1], n)
        xq = rng.uniform(self.x[0], self.x[-1], n)
        cq = rng.uniform(self.cond[0], self.cond[-1], n) if self.cond is not None else None
        gap = 0.0
        for k in range(n):
            c = None if cq is None else cq[k:k + 1]
            gap = max(gap, float(np.max(np.abs(
                self.eval(ts[k], xq[k:k + 1], c) - other.eval(ts[k], xq[k:k + 1], c)))))
        return gap


@dataclass
class HDriftTables:
    """Both coordinates' tables for the jointly conditioned system."""

    dz: DriftTable
    dy: DriftTable
    min_h: float

    def rows(self, stride_t: int = 1, stride_x: int = 1, stride_c: int = 1):
        """(t, z, y, driftZ, driftY) rows for export."""
        for it in range(0, self.dz.times.size, stride_t):
            t = float(self.dz.times[it])
            vz = self.dz.values[it]
            vy = self.dy.values[it]
            for iz in range(0, self.dz.x.size, stride_x):
                for iy in range(0, self.dz.cond.size, stride_c):
                    yield (t, float(self.dz.x[iz]), float(self.dz.cond[iy]),
                           float(vz[iz, iy]), float(vy[iy, iz]))


def _lattice_guard(kernel: TransitionKernel, grid: QuadratureGrid, delta_sim: float):
    sd = kernel.sigma0 * np.sqrt(delta_sim)
    spacing = float(np.max(np.diff(grid.nodes)))
    if sd < _PEAK_RESOLUTION * spacing:
        raise ValueError(
            f"delta_sim={delta_sim:g} puts the terminal transition density "
            f"below grid resolution (sd {sd:.3g} < {_PEAK_RESOLUTION} x "
            f"{spacing:.3g}); refine the coupling grid or raise delta_sim")


def _default_lattice(kernel: TransitionKernel, n: int) -> np.ndarray:
    dom = kernel.domain
    if not dom.is_killed:
        return np.linspace(-dom.z_upper, dom.z_upper, n)
    # the image term of the killed kernel makes log-gradients vary on the
    # scale (1-t)/(2(u-ell)) next to the boundary, so spend a third of the
    # budget on a geometric layer there and keep the bulk uniform
    span = dom.z_upper - dom.ell
    k = max(8, n // 3)
    edge = 0.08 * span
    layer = dom.ell + np.geomspace(1e-3 * span, edge, k)
    bulk = np.linspace(dom.ell + edge, dom.z_upper, n - k + 1)[1:]
    return np.concatenate([layer, bulk])


def h_drift_tables(field: HField, *, delta_sim: float = 1e-3,
                   times: np.ndarray | None = None,
                   z_lat: np.ndarray | None = None,
                   y_lat: np.ndarray | None = None,
                   n_times: int = 161, n_lat: int = 161) -> HDriftTables:
    """Tabulated sigma^2 grad log h for the jointly conditioned system.

    On killed domains the default lattice is graded toward the boundary,
    but the image-term layer (scale (1-t)/(2(u-ell))) still limits
    interpolation accuracy within ~5% of the span of the boundary; expect
    ~1e-3 sup error in the bulk and ~1e-2 inside that strip at the
    default resolution.  Probe with DriftTable.compare against a finer
    build when it matters.
    """
    if field.kind != "h":
        raise ValueError("needs a field of kind 'h'")
    sol = field.solution
    kz, ky = field.kz, field.ky
    _lattice_guard(kz, sol.mu.grid, delta_sim)
    _lattice_guard(ky, sol.nu.grid, delta_sim)
    if times is None:
        times = time_lattice(n_times, delta_sim)
    if times[-1] > 1.0 - delta_sim + 1e-12:
        raise ValueError("table times reach past 1 - delta_sim")
    if z_lat is None:
        z_lat = _default_lattice(kz, n_lat)
    if y_lat is None:
        y_lat = _default_lattice(ky, n_lat)
    fac = field.factors()
    same_side = (kz is ky and z_lat.shape == y_lat.shape
                 and np.array_equal(z_lat, y_lat)
                 and np.array_equal(fac["nz"], fac["ny"]))
    s2z, s2y = kz.sigma0 ** 2, ky.sigma0 ** 2
    vz = np.empty((times.size, z_lat.size, y_lat.size))
    vy = np.empty((times.size, y_lat.size, z_lat.size))
    az_atom = np.empty((times.size, z_lat.size)) if fac["atoms"] else None
    ay_atom = np.empty((times.size, y_lat.size)) if fac["atoms"] else None
    min_h = np.inf
    for it, t in enumerate(times):
        Qz = kz.q(t, 1.0, z_lat[:, None], fac["nz"][None, :])
        Qzd = kz.qz(t, 1.0, z_lat[:, None], fac["nz"][None, :])
        if same_side:
            Qy, Qyd = Qz, Qzd
        else:
            Qy = ky.q(t, 1.0, y_lat[:, None], fac["ny"][None, :])
            Qyd = ky.qz(t, 1.0, y_lat[:, None], fac["ny"][None, :])
        T = Qz @ fac["B"]
        Td = Qzd @ fac["B"]
        h = T @ Qy.T
        hz = Td @ Qy.T
        hy = T @ Qyd.T
        if fac["atoms"]:
            a, ad = Qz @ fac["w_fcol"], Qzd @ fac["w_fcol"]
            b, bd = Qy @ fac["w_frow"], Qyd @ fac["w_frow"]
            Lz, Lzd = kz.L(t, 1.0, z_lat), kz.Lz(t, 1.0, z_lat)
            Ly, Lyd = ky.L(t, 1.0, y_lat), ky.Lz(t, 1.0, y_lat)
            fc = fac["fc"]
            h = h + np.outer(a, Ly) + np.outer(Lz, b) + fc * np.outer(Lz, Ly)
            hz = hz + np.outer(ad, Ly) + np.outer(Lzd, b) + fc * np.outer(Lzd, Ly)
            hy = hy + np.outer(a, Lyd) + np.outer(Lz, bd) + fc * np.outer(Lz, Lyd)
            az_atom[it] = s2z * (ad + fc * Lzd) / np.maximum(a + fc * Lz, _TINY)
            ay_atom[it] = s2y * (bd + fc * Lyd) / np.maximum(b + fc * Ly, _TINY)
        min_h = min(min_h, float(h.min()))
        hsafe = np.maximum(h, _TINY)
        vz[it] = s2z * hz / hsafe
        vy[it] = (s2y * hy / hsafe).T
    dz = DriftTable(times=times, x=z_lat, cond=y_lat, values=vz,
                    atom_values=az_atom, sigma_sq=s2z)
    dy = DriftTable(times=times, x=y_lat, cond=z_lat, values=vy,
                    atom_values=ay_atom, sigma_sq=s2y)
    return HDriftTables(dz=dz, dy=dy, min_h=min_h)


def rho_drift_table(field: HField, *, delta_sim: float = 1e-3,
                    times: np.ndarray | None = None,
                    y_lat: np.ndarray | None = None,
                    n_times: int = 161, n_lat: int = 161,
                    n_cond: int = 201) -> DriftTable:
    """Tabulated sigma^2 rho_y / rho over (t, y, conditioning z1).

    Conditioning points are coupling grid nodes (a strided subset), so the
    tabulated rows are exact; z1 queries in between blend linearly.  The
    f1 normalization cancels in the ratio.
    """
    if field.kind != "rho":
        raise ValueError("needs a field of kind 'rho'")
    sol = field.solution
    ky = field.ky
    _lattice_guard(ky, sol.nu.grid, delta_sim)
    if times is None:
        times = time_lattice(n_times, delta_sim)
    if y_lat is None:
        y_lat = _default_lattice(ky, n_lat)
    nodes_z = sol.mu.grid.nodes
    idx = np.unique(np.round(
        np.linspace(0, nodes_z.size - 1, min(n_cond, nodes_z.size))).astype(int))
    cond = nodes_z[idx]
    ny = sol.nu.grid.nodes
    Fw = sol.f_interior[idx] * sol.nu.grid.weights[None, :]
    killed = ky.domain.is_killed
    colv = sol.f_nu_atom_col[idx] if killed else None
    s2 = ky.sigma0 ** 2
    values = np.empty((times.size, y_lat.size, cond.size))
    atom_values = np.empty((times.size, y_lat.size)) if killed else None
    for it, t in enumerate(times):
        Qy = ky.q(t, 1.0, y_lat[:, None], ny[None, :])
        Qyd = ky.qz(t, 1.0, y_lat[:, None], ny[None, :])
        den = Fw @ Qy.T
        num = Fw @ Qyd.T
        if killed:
            Ly, Lyd = ky.L(t, 1.0, y_lat), ky.Lz(t, 1.0, y_lat)
            den = den + np.outer(colv, Ly)
            num = num + np.outer(colv, Lyd)
            row = sol.f_mu_atom_row * sol.nu.grid.weights
            dena = Qy @ row + sol.f_corner * Ly
            numa = Qyd @ row + sol.f_corner * Lyd
            atom_values[it] = s2 * numa / np.maximum(dena, _TINY)
        values[it] = (s2 * num / np.maximum(den, _TINY)).T
    return DriftTable(times=times, x=y_lat, cond=cond, values=values,
                      atom_values=atom_values, sigma_sq=s2)


def h0_drift_table(field: HField, *, delta_sim: float = 1e-3,
                   times: np.ndarray | None = None,
                   x_lat: np.ndarray | None = None,
                   other_lat: np.ndarray | None = None,
                   n_times: int = 161, n_lat: int = 161) -> DriftTable:
    """Tabulated enlargement drift sigma^2 d_u log h0(t, (u, other)).

    One table serves both coordinates of the limit system when their
    kernels coincide (the integrand is symmetric in the pair).
    """
    if field.kind not in ("h0", "gamma"):
        raise ValueError("needs a field of kind 'h0' or 'gamma'")
    ker = field.kz
    if times is None:
        times = time_lattice(n_times, delta_sim)
    if x_lat is None:
        x_lat = _default_lattice(ker, n_lat)
    if other_lat is None:
        other_lat = x_lat
    wn = field.quad.nodes
    gw = field.quad.weights / ker.q(0.0, 1.0, field.z0, wn)
    killed = ker.domain.is_killed
    L0 = float(ker.L(0.0, 1.0, field.z0)) if killed else 1.0
    s2 = ker.sigma0 ** 2
    tail = field._tail_idx
    values = np.empty((times.size, x_lat.size, other_lat.size))
    atom_values = np.empty((times.size, x_lat.size)) if killed else None
    for it, t in enumerate(times):
        Qx = ker.q(t, 1.0, x_lat[:, None], wn[None, :]) * gw[None, :]
        Qxd = ker.qz(t, 1.0, x_lat[:, None], wn[None, :]) * gw[None, :]
        Qo = ker.q(t, 1.0, other_lat[:, None], wn[None, :])
        den = Qx @ Qo.T
        num = Qxd @ Qo.T
        tail_part = np.abs(Qx[:, tail]) @ np.abs(Qo[:, tail]).T
        if np.any(tail_part > _TAIL_TOL * np.maximum(np.abs(den), _TINY)):
            raise RuntimeError(f"h0 table quadrature tail above {_TAIL_TOL:g} "
                               f"at t={t:g}; widen the integration grid")
        if killed:
            Lx, Lxd = ker.L(t, 1.0, x_lat), ker.Lz(t, 1.0, x_lat)
            Lo = ker.L(t, 1.0, other_lat)
            den = den + np.outer(Lx, Lo) / L0
            num = num + np.outer(Lxd, Lo) / L0
            atom_values[it] = s2 * Lxd / np.maximum(Lx, _TINY)
        values[it] = s2 * num / np.maximum(den, _TINY)
    # the limit drift keeps the full 1/(1-t) bridge pull
    return DriftTable(times=times, x=x_lat, cond=other_lat, values=values,
                      atom_values=atom_values, sigma_sq=s2, time_scaled=True)
