"""Euler-Maruyama path ensembles for the bridged demand systems.

Each tag names one drift construction on the pair (Z, Y): two
independent copies of the base diffusion (REFERENCE), the jointly
steered pair driven by the coupling (UNCONSTRAINED_BRIDGE), the first
coordinate pinned to its drawn endpoint with the second following the
conditional field given that draw (CONSTRAINED; FIVE_LEMMA is the same
with the draw tilted by the coupling marginal), both coordinates pinned
to one common draw (LIMIT), and the explicit Brownian bridge strategy
(CLASSICAL_KYLE).

Reproducibility: path blocks get independent counter-based streams
keyed (seed, block index), and the number of draws consumed per step is
fixed by the config alone (absorbed paths keep consuming), so a given
SimConfig yields a bit-identical ensemble however blocks are scheduled.

Absorption inside a step uses the crossing probability
exp(-2 (X_k - ell)(X_{k+1} - ell) / (sigma^2 dt)); a plain sign test
undercounts crossings by O(sqrt(dt)).  The final interval
[1 - delta_sim, 1] is closed by one deterministic step carrying the
frozen drift, since the pinned drifts blow up at t = 1.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field as dc_field

import numpy as np

from .kernels import TransitionKernel, BrownianKernel
from .htransform import DriftField, HDriftTables, DriftTable, HField, rho_drift_table
from .schrodinger import SchrodingerSolution

__all__ = [
    "SystemTag", "SimConfig", "PathEnsemble", "simulate", "drift_field",
    "EntropyEstimate", "entropy_estimate",
    "EquivalenceReport", "GapRow", "equivalence_check", "energy_distance",
    "BinnedDrift", "binned_drift",
]


class SystemTag(str, enum.Enum):
    REFERENCE = "reference"
    UNCONSTRAINED_BRIDGE = "unconstrained_bridge"
    CONSTRAINED = "constrained"
    FIVE_LEMMA = "five_lemma"
    LIMIT = "limit"
    CLASSICAL_KYLE = "classical_kyle"


_PINNED = (SystemTag.CONSTRAINED, SystemTag.FIVE_LEMMA, SystemTag.LIMIT,
           SystemTag.CLASSICAL_KYLE)


@dataclass
class SimConfig:
    """Ensemble size, discretization, and model references.

    ``snapshot_times`` are snapped to the step grid; 1 - delta_sim is
    always included as the last snapshot.  ``z1_fixed`` pins the
    endpoint draw of CLASSICAL_KYLE to a constant.
    """

    paths: int = 10_000
    steps: int = 2000
    seed: int = 0
    delta_sim: float = 1e-3
    z0: float = 0.0
    kernel: TransitionKernel | None = None
    solution: SchrodingerSolution | None = None
    z1_fixed: float | None = None
    snapshot_times: tuple = (0.25, 0.5, 0.75)
    block_size: int = 32_768
    store_paths: bool = False

    def __post_init__(self):
        if self.steps < 100:
            raise ValueError("steps must be >= 100")
        if not 0.0 < self.delta_sim <= 0.01:
            raise ValueError("delta_sim must lie in (0, 0.01]")
        if self.paths < 1 or self.block_size < 1:
            raise ValueError("paths and block_size must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")
        horizon = 1.0 - self.delta_sim
        for t in self.snapshot_times:
            if not 0.0 <= t <= horizon + 1e-12:
                raise ValueError(f"snapshot time {t} outside [0, 1 - delta_sim]")
        if self.store_paths and self.paths * (self.steps + 1) * 16 > (4 << 30):
            raise ValueError("store_paths would exceed 4 GiB; reduce paths or steps")


@dataclass
class PathEnsemble:
    """Simulated ensemble: snapshots, terminal states, absorption record.

    Paths are constant at ell from their absorption time on and the
    absorbed coordinate receives no further drift or noise.  ``energy_z``
    and ``energy_y`` accumulate the pathwise steering cost
    1/2 int_0^{1 and zeta} (drift/sigma)^2 dt for the conditioning part
    of the drift only (the base drift b does not count).
    """

    tag: SystemTag
    seed: int
    sigma: float
    ell: float
    delta_sim: float
    times: np.ndarray
    snapshot_times: np.ndarray
    snap_z: np.ndarray
    snap_y: np.ndarray
    alive_z: np.ndarray
    alive_y: np.ndarray
    terminal_z: np.ndarray
    terminal_y: np.ndarray
    absorb_t_z: np.ndarray
    absorb_t_y: np.ndarray
    energy_z: np.ndarray
    energy_y: np.ndarray
    z1: np.ndarray | None = None
    z1_atom: np.ndarray | None = None
    aborted: int = 0
    paths_z: np.ndarray | None = None
    paths_y: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.terminal_z.size

    def snapshot_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.snapshot_times - t)))
        # snapshots are snapped to the step grid, so allow one step of slack
        if abs(self.snapshot_times[i] - t) > self.times[1] - self.times[0] + 1e-12:
            raise KeyError(f"no snapshot near t={t}; have {self.snapshot_times}")
        return i

    def state_at(self, t: float):
        i = self.snapshot_index(t)
        return self.snap_z[i], self.snap_y[i]


def _sample_eta(rng, nb, kernel, z0):
    """Exact draw from the terminal law of the base diffusion.

    Free case: the endpoint Gaussian.  Killed case: propose the free
    endpoint and accept with the no-crossing bridge probability
    1 - exp(-2 (z0-ell)(y-ell)/sigma^2); rejected proposals are exactly
    the absorbed mass, so the atom comes out with probability L(0,1;z0).
    """
    g = rng.standard_normal(nb)
    u = rng.random(nb)
    y = z0 + kernel.sigma0 * g
    if not kernel.domain.is_killed:
        return y, np.zeros(nb, dtype=bool)
    ell = kernel.domain.ell
    s2 = kernel.sigma0 ** 2
    acc = np.where(y > ell, -np.expm1(-2.0 * (z0 - ell) * (y - ell) / s2), 0.0)
    atom = u >= acc
    return np.where(atom, ell, y), atom


def _sample_tilted(rng, nb, solution):
    """Draw from f1 d(eta): inverse cdf over the support masses, uniform
    jitter inside each node cell (piecewise-constant density)."""
    mu = solution.mu
    masses = solution.f1 * mu.support_masses
    cum = np.cumsum(masses)
    u = rng.random(nb) * cum[-1]
    jit = rng.random(nb)
    idx = np.minimum(np.searchsorted(cum, u), masses.size - 1)
    nodes = mu.grid.nodes
    if mu.grid.has_atom:
        atom = idx >= nodes.size
        idx = np.minimum(idx, nodes.size - 1)
    else:
        atom = np.zeros(nb, dtype=bool)
    h = nodes[1] - nodes[0]
    z1 = np.clip(nodes[idx] + (jit - 0.5) * h, nodes[0], nodes[-1])
    if mu.grid.has_atom:
        z1 = np.where(atom, mu.grid.ell, z1)
    return z1, atom


def _pinned_drift(kernel, s2, t, x, z1, atom, alive):
    """sigma^2 times the stratified pull toward the drawn endpoint."""
    out = np.zeros_like(x)
    m = alive & ~atom
    if m.any():
        out[m] = s2 * kernel.bridge_ratio(t, x[m], z1[m])
    m = alive & atom
    if m.any():
        out[m] = s2 * kernel.atom_ratio(t, x[m])
    return out


def _check_horizon(table: DriftTable, horizon: float, name: str):
    if table.times[-1] < horizon - 1e-12:
        raise ValueError(
            f"{name} table ends at t={table.times[-1]:.6f} but the simulation "
            f"needs drift up to {horizon:.6f}; rebuild with a smaller delta_sim")


def _cond_closure(tag, kernel, *, h_tables=None, rho_table=None,
                  z1=None, z1_atom=None):
    """Conditioning drift (t, z, y, alive_z, alive_y) -> (dz, dy).

    Returns the steering part only; the caller adds the base drift b.
    Entries of absorbed coordinates are zero.
    """
    s2 = kernel.sigma0 ** 2

    if tag is SystemTag.REFERENCE:
        def fn(t, z, y, za, ya):
            return np.zeros_like(z), np.zeros_like(y)
    elif tag is SystemTag.UNCONSTRAINED_BRIDGE:
        def fn(t, z, y, za, ya):
            dz = np.where(za, h_tables.dz.eval(t, z, y), 0.0)
            dy = np.where(ya, h_tables.dy.eval(t, y, z), 0.0)
            return dz, dy
    elif tag in (SystemTag.CONSTRAINED, SystemTag.FIVE_LEMMA):
        def fn(t, z, y, za, ya):
            dz = _pinned_drift(kernel, s2, t, z, z1, z1_atom, za)
            dy = np.where(ya, rho_table.eval(t, y, z1, atom_mask=z1_atom), 0.0)
            return dz, dy
    elif tag is SystemTag.LIMIT:
        def fn(t, z, y, za, ya):
            return (_pinned_drift(kernel, s2, t, z, z1, z1_atom, za),
                    _pinned_drift(kernel, s2, t, y, z1, z1_atom, ya))
    elif tag is SystemTag.CLASSICAL_KYLE:
        def fn(t, z, y, za, ya):
            w = 1.0 / (1.0 - t)
            return np.where(za, (z1 - z) * w, 0.0), np.where(ya, (z1 - y) * w, 0.0)
    else:  # pragma: no cover
        raise ValueError(f"unknown tag {tag}")
    return fn


def drift_field(tag, *, kernel, h_tables=None, rho_table=None,
                z1=None, z1_atom=None) -> DriftField:
    """The full system drift (base b plus conditioning) as a DriftField.

    Pinned tags need the endpoint draw: scalars broadcast, arrays must
    match the state shape at call time.
    """
    tag = SystemTag(tag)
    if tag in _PINNED:
        if z1 is None:
            raise ValueError(f"{tag.value} needs the endpoint draw z1")
        z1 = np.asarray(z1, dtype=float)
        if z1_atom is None:
            z1_atom = np.zeros(z1.shape, dtype=bool)
    if tag is SystemTag.UNCONSTRAINED_BRIDGE and h_tables is None:
        raise ValueError("unconstrained_bridge needs h_tables")
    if tag in (SystemTag.CONSTRAINED, SystemTag.FIVE_LEMMA) and rho_table is None:
        raise ValueError(f"{tag.value} needs rho_table")
    cond = _cond_closure(tag, kernel, h_tables=h_tables, rho_table=rho_table,
                         z1=z1, z1_atom=z1_atom)

    def fn(t, z, y, za, ya):
        dz, dy = cond(t, z, y, za, ya)
        return dz + kernel.drift(t, z), dy + kernel.drift(t, y)

    return DriftField(tag.value, fn)


def simulate(tag, cfg: SimConfig, *, h_tables: HDriftTables | None = None,
             rho_table: DriftTable | None = None,
             override_drift: DriftField | None = None) -> PathEnsemble:
    """Run the tagged system under cfg and collect the ensemble.

    UNCONSTRAINED_BRIDGE requires prebuilt ``h_tables``;
    CONSTRAINED/FIVE_LEMMA build ``rho_table`` from cfg.solution when
    not supplied.  ``override_drift`` replaces the whole drift (base
    plus steering) and is mostly for experiments; the energy
    accumulators then record the override minus the base drift.
    """
    tag = SystemTag(tag)
    kernel = cfg.kernel
    if kernel is None:
        if tag is SystemTag.CLASSICAL_KYLE:
            kernel = BrownianKernel()
        else:
            raise ValueError(f"{tag.value} needs cfg.kernel")
    if tag is SystemTag.CLASSICAL_KYLE and kernel.domain.is_killed:
        raise ValueError("the classical bridge strategy is for the free kernel")
    killed = kernel.domain.is_killed
    ell = kernel.domain.ell if killed else -np.inf
    sigma = kernel.sigma0
    s2 = sigma * sigma

    horizon = 1.0 - cfg.delta_sim
    if override_drift is None:
        if tag is SystemTag.UNCONSTRAINED_BRIDGE:
            if h_tables is None:
                raise ValueError(
                    "unconstrained_bridge needs h_tables; build once with "
                    "h_drift_tables(HField('h', kernel, solution=...))")
            _check_horizon(h_tables.dz, horizon, "h drift")
        if tag in (SystemTag.CONSTRAINED, SystemTag.FIVE_LEMMA):
            if rho_table is None:
                if cfg.solution is None:
                    raise ValueError(f"{tag.value} needs rho_table or cfg.solution")
                rho_table = rho_drift_table(
                    HField("rho", kernel, solution=cfg.solution),
                    delta_sim=cfg.delta_sim)
            _check_horizon(rho_table, horizon, "conditional drift")
    if tag is SystemTag.FIVE_LEMMA and cfg.solution is None:
        raise ValueError("five_lemma draws its endpoint from the coupling "
                         "marginal; cfg.solution is required")

    n = cfg.paths
    dt = horizon / cfg.steps
    times = np.arange(cfg.steps + 1) * dt
    times[-1] = horizon
    snap_idx = sorted({int(round(t / dt)) for t in cfg.snapshot_times} | {cfg.steps})
    snap_idx = np.array(snap_idx, dtype=int)
    snap_times = times[snap_idx]
    ns = snap_idx.size
    sqdt = sigma * np.sqrt(dt)

    snap_z = np.empty((ns, n)); snap_y = np.empty((ns, n))
    alive_z_s = np.ones((ns, n), dtype=bool); alive_y_s = np.ones((ns, n), dtype=bool)
    term_z = np.empty(n); term_y = np.empty(n)
    abs_z = np.full(n, np.inf); abs_y = np.full(n, np.inf)
    en_z = np.zeros(n); en_y = np.zeros(n)
    z1_all = np.full(n, np.nan) if tag in _PINNED else None
    atom_all = np.zeros(n, dtype=bool) if tag in _PINNED else None
    pz = np.empty((cfg.steps + 1, n)) if cfg.store_paths else None
    py = np.empty((cfg.steps + 1, n)) if cfg.store_paths else None
    aborted = 0

    n_blocks = (n + cfg.block_size - 1) // cfg.block_size
    for bi in range(n_blocks):
        lo = bi * cfg.block_size
        hi = min(lo + cfg.block_size, n)
        nb = hi - lo
        rng = np.random.Generator(
            np.random.Philox(key=np.array([cfg.seed, bi], dtype=np.uint64)))

        # endpoint draws first so the per-step stream layout is fixed
        z1 = atom = None
        if tag is SystemTag.CLASSICAL_KYLE:
            if cfg.z1_fixed is not None:
                z1 = np.full(nb, float(cfg.z1_fixed))
                atom = np.zeros(nb, dtype=bool)
            else:
                z1, atom = _sample_eta(rng, nb, kernel, cfg.z0)
        elif tag in (SystemTag.CONSTRAINED, SystemTag.LIMIT):
            z1, atom = _sample_eta(rng, nb, kernel, cfg.z0)
        elif tag is SystemTag.FIVE_LEMMA:
            z1, atom = _sample_tilted(rng, nb, cfg.solution)
        if z1 is not None:
            z1_all[lo:hi] = z1
            atom_all[lo:hi] = atom

        cond = None
        if override_drift is None:
            cond = _cond_closure(tag, kernel, h_tables=h_tables,
                                 rho_table=rho_table, z1=z1, z1_atom=atom)

        Z = np.full(nb, float(cfg.z0)); Y = np.full(nb, float(cfg.z0))
        az = np.ones(nb, dtype=bool); ay = np.ones(nb, dtype=bool)
        bez = np.zeros(nb); bey = np.zeros(nb)
        batz = np.full(nb, np.inf); baty = np.full(nb, np.inf)
        bab = np.zeros(nb, dtype=bool)
        if cfg.store_paths:
            pz[0, lo:hi] = Z; py[0, lo:hi] = Y
        si = 0
        if snap_idx[0] == 0:
            snap_z[0, lo:hi] = Z; snap_y[0, lo:hi] = Y
            si = 1

        for k in range(cfg.steps):
            t = times[k]
            bz = kernel.drift(t, Z); by = kernel.drift(t, Y)
            if cond is not None:
                cz, cy = cond(t, Z, Y, az, ay)
            else:
                dz_tot, dy_tot = override_drift(t, Z, Y, az, ay)
                cz = np.where(az, dz_tot - bz, 0.0)
                cy = np.where(ay, dy_tot - by, 0.0)
            bad = (az & ~np.isfinite(cz)) | (ay & ~np.isfinite(cy))
            if np.any(bad):
                i = int(np.argmax(bad))
                raise FloatingPointError(
                    f"non-finite drift at t={t:g}, state=({Z[i]:.4g}, {Y[i]:.4g})")
            bez += np.where(az, 0.5 * cz * cz / s2 * dt, 0.0)
            bey += np.where(ay, 0.5 * cy * cy / s2 * dt, 0.0)

            g = rng.standard_normal((2, nb))
            Zn = np.where(az, Z + (bz + cz) * dt + sqdt * g[0], Z)
            Yn = np.where(ay, Y + (by + cy) * dt + sqdt * g[1], Y)

            if killed:
                u = rng.random((2, nb))
                for X, Xn, al, bat, uu in ((Z, Zn, az, batz, u[0]),
                                           (Y, Yn, ay, baty, u[1])):
                    crossed = al & (Xn <= ell)
                    inside = al & ~crossed
                    p = np.zeros(nb)
                    p[inside] = np.exp(-2.0 * (X[inside] - ell)
                                       * (Xn[inside] - ell) / (s2 * dt))
                    dead = crossed | (inside & (uu < p))
                    Xn[dead] = ell
                    bat[dead] = times[k + 1]
                    al &= ~dead

            for Xn, al in ((Zn, az), (Yn, ay)):
                nf = al & ~np.isfinite(Xn)
                if np.any(nf):
                    Xn[nf] = Z[nf] if Xn is Zn else Y[nf]
                    al &= ~nf
                    bab |= nf
            Z, Y = Zn, Yn
            if cfg.store_paths:
                pz[k + 1, lo:hi] = Z; py[k + 1, lo:hi] = Y
            if si < ns and k + 1 == snap_idx[si]:
                snap_z[si, lo:hi] = Z; snap_y[si, lo:hi] = Y
                alive_z_s[si, lo:hi] = az; alive_y_s[si, lo:hi] = ay
                si += 1

        # deterministic closure over [1 - delta, 1] with the frozen drift
        t = horizon
        bz = kernel.drift(t, Z); by = kernel.drift(t, Y)
        if cond is not None:
            cz, cy = cond(t, Z, Y, az, ay)
        else:
            dz_tot, dy_tot = override_drift(t, Z, Y, az, ay)
            cz = np.where(az, dz_tot - bz, 0.0)
            cy = np.where(ay, dy_tot - by, 0.0)
        bez += np.where(az, 0.5 * cz * cz / s2 * cfg.delta_sim, 0.0)
        bey += np.where(ay, 0.5 * cy * cy / s2 * cfg.delta_sim, 0.0)
        Zt = np.where(az, Z + (bz + cz) * cfg.delta_sim, Z)
        Yt = np.where(ay, Y + (by + cy) * cfg.delta_sim, Y)
        if killed:
            for Xt, al, bat in ((Zt, az, batz), (Yt, ay, baty)):
                dead = al & (Xt <= ell)
                Xt[dead] = ell
                bat[dead] = 1.0

        term_z[lo:hi] = Zt; term_y[lo:hi] = Yt
        abs_z[lo:hi] = batz; abs_y[lo:hi] = baty
        en_z[lo:hi] = bez; en_y[lo:hi] = bey
        aborted += int(bab.sum())

    return PathEnsemble(
        tag=tag, seed=cfg.seed, sigma=sigma, ell=ell, delta_sim=cfg.delta_sim,
        times=times, snapshot_times=snap_times,
        snap_z=snap_z, snap_y=snap_y, alive_z=alive_z_s, alive_y=alive_y_s,
        terminal_z=term_z, terminal_y=term_y,
        absorb_t_z=abs_z, absorb_t_y=abs_y,
        energy_z=en_z, energy_y=en_y,
        z1=z1_all, z1_atom=atom_all, aborted=aborted,
        paths_z=pz, paths_y=py)


# ---------------------------------------------------------------------------
# pathwise entropy
# ---------------------------------------------------------------------------

@dataclass
class EntropyEstimate:
    value: float
    stderr: float
    n_paths: int


def entropy_estimate(ens: PathEnsemble, drift=None, coord: str = "y") -> EntropyEstimate:
    """Monte Carlo mean of the steering cost 1/2 int (alpha/sigma)^2 dt.

    With ``drift`` None, reads the accumulators filled during the run
    (alpha is the conditioning drift of the chosen coordinate; "both"
    sums the two).  Passing a drift callable re-integrates it along the
    stored paths instead, which requires store_paths and lets the same
    noise draws price a perturbed strategy.
    """
    if drift is None:
        if coord == "y":
            e = ens.energy_y
        elif coord == "z":
            e = ens.energy_z
        elif coord == "both":
            e = ens.energy_z + ens.energy_y
        else:
            raise ValueError("coord must be 'z', 'y' or 'both'")
    else:
        if ens.paths_z is None:
            raise ValueError("re-integration needs an ensemble with store_paths")
        if coord not in ("z", "y"):
            raise ValueError("re-integration is per coordinate: 'z' or 'y'")
        dt = ens.times[1] - ens.times[0]
        s2 = ens.sigma ** 2
        e = np.zeros(ens.n_paths)
        ci = 0 if coord == "z" else 1
        # one dt leg per step, then the frozen-drift closure leg, exactly
        # mirroring the accumulation done during the run
        for k in range(ens.times.size):
            Z = ens.paths_z[k]; Y = ens.paths_y[k]
            az = Z > ens.ell; ay = Y > ens.ell
            a = drift(ens.times[k], Z, Y, az, ay)[ci]
            alive = az if coord == "z" else ay
            step = dt if k < ens.times.size - 1 else ens.delta_sim
            e += np.where(alive, 0.5 * a * a / s2 * step, 0.0)
    n = e.size
    se = float(np.std(e, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return EntropyEstimate(value=float(np.mean(e)), stderr=se, n_paths=n)


# ---------------------------------------------------------------------------
# two-sample comparison
# ---------------------------------------------------------------------------

@dataclass
class GapRow:
    time: float
    stat: str
    value_a: float
    value_b: float
    gap: float
    stderr: float
    zscore: float


@dataclass
class EquivalenceReport:
    rows: list
    energy: dict

    def max_zscore(self) -> float:
        return max(abs(r.zscore) for r in self.rows)

    def passed(self, z: float = 3.0) -> bool:
        return self.max_zscore() <= z


def _mean_row(t, name, a, b):
    ga = float(np.mean(a)); gb = float(np.mean(b))
    se = float(np.sqrt(np.var(a, ddof=1) / a.size + np.var(b, ddof=1) / b.size))
    gap = ga - gb
    return GapRow(t, name, ga, gb, gap, se, gap / se if se > 0 else 0.0)


def _var_row(t, name, a, b):
    va = float(np.var(a, ddof=1)); vb = float(np.var(b, ddof=1))
    # distribution-free stderr of a sample variance via the fourth moment
    m4a = float(np.mean((a - a.mean()) ** 4)); m4b = float(np.mean((b - b.mean()) ** 4))
    se = float(np.sqrt(max(m4a - va ** 2, 0.0) / a.size
                       + max(m4b - vb ** 2, 0.0) / b.size))
    gap = va - vb
    return GapRow(t, name, va, vb, gap, se, gap / se if se > 0 else 0.0)


def _corr_row(t, za, ya, zb, yb):
    ra = float(np.corrcoef(za, ya)[0, 1]); rb = float(np.corrcoef(zb, yb)[0, 1])
    # Fisher z-transform gap; stderr depends on n only
    fa = np.arctanh(np.clip(ra, -1 + 1e-12, 1 - 1e-12))
    fb = np.arctanh(np.clip(rb, -1 + 1e-12, 1 - 1e-12))
    se = float(np.sqrt(1.0 / (za.size - 3) + 1.0 / (zb.size - 3)))
    return GapRow(t, "corr", ra, rb, ra - rb, se, (fa - fb) / se)


def energy_distance(a: np.ndarray, b: np.ndarray, max_points: int = 2000,
                    seed: int = 0) -> float:
    """Energy distance between two 2-d samples (rows are points)."""
    from scipy.spatial.distance import cdist
    rng = np.random.default_rng(seed)
    if a.shape[0] > max_points:
        a = a[rng.choice(a.shape[0], max_points, replace=False)]
    if b.shape[0] > max_points:
        b = b[rng.choice(b.shape[0], max_points, replace=False)]
    dab = cdist(a, b).mean()
    daa = cdist(a, a).mean()
    dbb = cdist(b, b).mean()
    return float(2.0 * dab - daa - dbb)


def equivalence_check(ens_a: PathEnsemble, ens_b: PathEnsemble,
                      times=None) -> EquivalenceReport:
    """Moment gaps and energy distances of (Z_t, Y_t) between two runs.

    Samples include absorbed paths (sitting at ell), so the comparison
    covers the full law on the closed state space.  The terminal
    closure states are compared under time label 1.0.
    """
    # grids may snap the same nominal time slightly differently
    slack = (ens_a.times[1] - ens_a.times[0]) + (ens_b.times[1] - ens_b.times[0])
    if times is None:
        times = [t for t in ens_a.snapshot_times
                 if np.min(np.abs(ens_b.snapshot_times - t)) <= slack]
    rows: list = []
    energy: dict = {}
    pairs = []
    for t in times:
        ia = int(np.argmin(np.abs(ens_a.snapshot_times - t)))
        ib = int(np.argmin(np.abs(ens_b.snapshot_times - t)))
        if (abs(ens_a.snapshot_times[ia] - t) > slack
                or abs(ens_b.snapshot_times[ib] - t) > slack):
            raise KeyError(f"no shared snapshot near t={t}")
        pairs.append((float(t), (ens_a.snap_z[ia], ens_a.snap_y[ia]),
                      (ens_b.snap_z[ib], ens_b.snap_y[ib])))
    pairs.append((1.0, (ens_a.terminal_z, ens_a.terminal_y),
                  (ens_b.terminal_z, ens_b.terminal_y)))
    for t, (za, ya), (zb, yb) in pairs:
        rows.append(_mean_row(t, "mean_z", za, zb))
        rows.append(_mean_row(t, "mean_y", ya, yb))
        rows.append(_var_row(t, "var_z", za, zb))
        rows.append(_var_row(t, "var_y", ya, yb))
        rows.append(_corr_row(t, za, ya, zb, yb))
        energy[t] = energy_distance(np.column_stack([za, ya]),
                                    np.column_stack([zb, yb]))
    return EquivalenceReport(rows=rows, energy=energy)


# ---------------------------------------------------------------------------
# binned empirical drift (own-filtration diagnostics)
# ---------------------------------------------------------------------------

@dataclass
class BinnedDrift:
    t_centers: np.ndarray
    x_centers: np.ndarray
    estimate: np.ndarray   # (nt, nx), nan where empty
    stderr: np.ndarray
    count: np.ndarray


def binned_drift(ens: PathEnsemble, coord: str = "y",
                 t_edges=None, x_edges=None) -> BinnedDrift:
    """Empirical drift of one coordinate from stored paths.

    Bins the per-step increments by (t, X_t) and reports mean
    increment / dt per bin.  Steps that end absorbed are excluded, so
    near-boundary bins estimate the drift conditional on survival.
    """
    if ens.paths_z is None:
        raise ValueError("binned_drift needs an ensemble with store_paths")
    P = ens.paths_y if coord == "y" else ens.paths_z
    if t_edges is None:
        t_edges = np.linspace(0.0, 0.9, 10)
    if x_edges is None:
        x_edges = np.linspace(-2.0, 2.0, 9)
    t_edges = np.asarray(t_edges, dtype=float)
    x_edges = np.asarray(x_edges, dtype=float)
    dt = ens.times[1] - ens.times[0]
    nt = t_edges.size - 1; nx = x_edges.size - 1
    s = np.zeros(nt * nx); s2 = np.zeros(nt * nx); c = np.zeros(nt * nx)
    for k in range(ens.times.size - 1):
        ti = int(np.searchsorted(t_edges, ens.times[k], side="right")) - 1
        if ti < 0 or ti >= nt:
            continue
        x = P[k]
        inc = P[k + 1] - x
        ok = (x > ens.ell) & (P[k + 1] > ens.ell)
        xi = np.searchsorted(x_edges, x, side="right") - 1
        ok &= (xi >= 0) & (xi < nx)
        flat = ti * nx + xi[ok]
        np.add.at(s, flat, inc[ok])
        np.add.at(s2, flat, inc[ok] ** 2)
        np.add.at(c, flat, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = np.where(c > 0, s / c, np.nan) / dt
        var_inc = np.where(c > 1, s2 / c - (s / c) ** 2, np.nan)
        se = np.sqrt(var_inc / np.maximum(c, 1.0)) / dt
    return BinnedDrift(
        t_centers=0.5 * (t_edges[:-1] + t_edges[1:]),
        x_centers=0.5 * (x_edges[:-1] + x_edges[1:]),
        estimate=est.reshape(nt, nx),
        stderr=se.reshape(nt, nx),
        count=c.reshape(nt, nx).astype(int))
