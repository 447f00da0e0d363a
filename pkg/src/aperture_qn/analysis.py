"""Fixed-point maps, their spectra, root finding and parameter sweeps.

The two solvers are viewed as maps ``p -> K(p)``:

* quasi-Newton  ``K(p) = (A + F(A p))^{-1} (q + w_old)``
* Newton        ``K(p) = p - J(p)^{-1} R(p)``

A root is an attracting fixed point of a map when the spectral radius of
``K'`` there is below one. Sweeps cover a log grid of (Pi1, Pi2) on
normalized cases and record, per case, what the solvers and maps do.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import ApertureQNError, State, case_from_groups
from .ds1_model import (
    Ds1Operators,
    _A_cumulative,
    build_operators,
    from_increments,
    increment_jacobian,
    increment_qn_matrix,
    increment_residual,
    to_increments,
)
from .solvers import CONVERGED, SingularMatrixError, SolverConfig, linear_solve, newton_solve, quasi_newton_solve

__all__ = [
    "SpectralError",
    "FixedPointMap",
    "RootClassification",
    "Root",
    "SweepRecord",
    "SweepResult",
    "map_jacobian",
    "qn_map_derivative",
    "spectral_radius",
    "map_spectral_radius",
    "find_roots",
    "classify_root",
    "stability_case",
    "contraction_case",
    "stability_sweep",
    "contraction_sweep",
    "log_grid",
    "PI1_RANGE",
    "PI2_RANGE",
    "SWEEP_SOLVER",
    "ROOT_SOLVER",
]

# the parameter box of the stability and contraction studies
PI1_RANGE = (1e-17, 1.5e-1)
PI2_RANGE = (1e-5, 2e-2)

# sweeps stop on the aperture-change criterion alone
SWEEP_SOLVER = SolverConfig(max_iters=100, rms_tol=1e-8, res_tol=None)
# root finding wants tightly converged endpoints
ROOT_SOLVER = SolverConfig(max_iters=200, rms_tol=1e-8, res_tol=1e-9, variant="newton")

# finite-difference step ladder for K' (relative to the coordinate scale)
FD_LADDER = 10.0 ** -np.arange(2, 13)
# per-coordinate step floor relative to max|z|
FD_FLOOR = 1e-6

DEDUP_RTOL = 1e-6
RESTART_PERTURBATION = 1e-4


class SpectralError(ApertureQNError):
    """The eigenvalue iteration did not converge."""


# --- maps ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FixedPointMap:
    """A solver viewed as a map on pressures.

    Parameters
    ----------
    ops : Ds1Operators
    w_old : ndarray
        Aperture at the previous time level.
    variant : {"qn", "newton"}
    """

    ops: Ds1Operators
    w_old: np.ndarray
    variant: str = "qn"

    def __post_init__(self):
        if self.variant not in ("qn", "newton"):
            raise ValueError(f"unknown map variant {self.variant!r}")
        object.__setattr__(self, "w_old", np.asarray(self.w_old, dtype=float))
        object.__setattr__(self, "_AP", _A_cumulative(self.ops))

    def increments(self, z) -> np.ndarray:
        """The map in increment coordinates."""
        z = np.asarray(z, dtype=float)
        AP = self._AP
        if self.variant == "qn":
            return linear_solve(increment_qn_matrix(self.ops, AP @ z, AP), self.ops.q_vec + self.w_old)
        r = increment_residual(self.ops, z, self.w_old, AP)
        return z + linear_solve(increment_jacobian(self.ops, z, AP), -r)

    def __call__(self, p) -> np.ndarray:
        return from_increments(self.increments(to_increments(p)))


def _fd_jacobian(f, z0, steps):
    n = z0.size
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = steps[j]
        J[:, j] = (f(z0 + e) - f(z0 - e)) / (2.0 * steps[j])
    return J


def _to_pressure_coords(Jz):
    # K'_p = P K'_z P^{-1}
    Pz = np.cumsum(Jz, axis=0)
    return Pz - np.concatenate([Pz[:, 1:], np.zeros((Pz.shape[0], 1))], axis=1)


def map_jacobian(fmap, p0, h: float | None = None, coords: str = "pressure") -> np.ndarray:
    """Central finite-difference derivative of a map at ``p0``.

    With ``h`` given, the step for column j is ``h (1 + |p0_j|)`` in
    pressure coordinates and ``fmap`` may be any callable on arrays.

    With ``h=None`` (default) the derivative of a :class:`FixedPointMap` is
    taken in increment coordinates with steps ``h |z_j|`` (floored at
    ``1e-6 max|z|``) over a ladder of ``h`` from 1e-2 down to 1e-12. The
    ladder entry whose spectral radius agrees best with both neighbours is
    kept. Near-zero interface apertures make the map strongly nonlinear on
    tiny scales, so no single step works across the parameter box.

    Parameters
    ----------
    coords : {"pressure", "increments"}
        Coordinates of the returned matrix. Both share the spectrum.
    """
    p0 = np.asarray(p0, dtype=float)
    if h is not None:
        steps = h * (1.0 + np.abs(p0))
        J = _fd_jacobian(lambda p: np.asarray(fmap(p), dtype=float), p0, steps)
        if coords == "increments":
            # K'_z = P^{-1} K'_p P
            JP = np.cumsum(J[:, ::-1], axis=1)[:, ::-1]
            return np.diff(JP, axis=0, prepend=0.0)
        return J
    if not isinstance(fmap, FixedPointMap):
        raise TypeError("the adaptive step needs a FixedPointMap")
    Jz, _ = _adaptive_jacobian(fmap, to_increments(p0))
    return Jz if coords == "increments" else _to_pressure_coords(Jz)


def _adaptive_jacobian(fmap: FixedPointMap, z0):
    scale = np.abs(z0).max()
    if scale == 0.0:
        scale = 1.0
    base = np.maximum(np.abs(z0), FD_FLOOR * scale)
    mats, rhos = [], []
    for h in FD_LADDER:
        try:
            J = _fd_jacobian(fmap.increments, z0, h * base)
            rho = spectral_radius(J)[0]
        except (SingularMatrixError, SpectralError, FloatingPointError):
            J, rho = None, np.nan
        mats.append(J)
        rhos.append(rho)
    rhos = np.array(rhos)
    d = np.abs(np.diff(rhos)) / np.maximum(np.fmax(rhos[1:], rhos[:-1]), 1.0)
    d = np.where(np.isfinite(d), d, np.inf)
    spread = np.maximum(d[:-1], d[1:])
    k = int(np.argmin(spread)) + 1
    if mats[k] is None:
        raise SingularMatrixError("map evaluation failed at every finite-difference step")
    return mats[k], float(spread[k - 1])


def qn_map_derivative(ops: Ds1Operators, w_old, p, coords: str = "pressure") -> np.ndarray:
    """Closed-form derivative of the quasi-Newton map at a fixed point.

    At a fixed point ``K'(p) = -(A + F)^{-1} D(p)`` with D the flux
    derivative term of the Newton Jacobian. Away from a fixed point this is
    not the map derivative.
    """
    z = to_increments(p)
    AP = _A_cumulative(ops)
    M = increment_qn_matrix(ops, AP @ z, AP)
    Dz = increment_jacobian(ops, z, AP) - M
    Kz = -linear_solve(M, Dz)
    return Kz if coords == "increments" else _to_pressure_coords(Kz)


def spectral_radius(M) -> tuple[float, np.ndarray]:
    """Spectral radius and full complex spectrum of a square matrix.

    Uses LAPACK ``geev`` through :func:`numpy.linalg.eigvals` (Hessenberg
    reduction followed by shifted QR).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("spectral_radius needs a square matrix")
    if not np.all(np.isfinite(M)):
        raise SpectralError("non-finite matrix entries")
    try:
        lam = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(str(exc)) from exc
    return float(np.abs(lam).max()) if lam.size else 0.0, lam


def map_spectral_radius(fmap: FixedPointMap, p0) -> tuple[float, np.ndarray]:
    """Spectrum of the adaptive finite-difference ``K'`` at ``p0``."""
    Jz, _ = _adaptive_jacobian(fmap, to_increments(p0))
    return spectral_radius(Jz)


# --- roots -------------------------------------------------------------------


@dataclass(frozen=True)
class Root:
    state: State
    is_physical: bool
    origin: str
    min_w_dimless: float


@dataclass(frozen=True)
class RootClassification:
    root: State
    is_physical: bool
    variant: str
    spectral_radius: float
    eigenvalues: np.ndarray


def _is_physical(ops: Ds1Operators, w, eps0: float) -> tuple[bool, float]:
    s = ops.params.aperture_scale
    if s <= 0:
        return bool(np.min(w) >= 0.0), float("nan")
    m = float(np.min(w) / s)
    return bool(m >= eps0), m


def classify_root(ops: Ds1Operators, w_old, state: State, variant: str = "qn", eps0: float = -1e-4):
    """Tag a root physical or not and attach ``rho(K')`` of one map."""
    fmap = FixedPointMap(ops, w_old, variant)
    rho, lam = map_spectral_radius(fmap, state.p)
    phys, _ = _is_physical(ops, state.w, eps0)
    return RootClassification(state, phys, variant, rho, lam)


def _pressure_scale(ops: Ds1Operators) -> float:
    prm = ops.params
    pi2 = prm.injection_rate * prm.dt / prm.half_length**2
    return prm.youngs_modulus * pi2 if pi2 > 0 else prm.youngs_modulus * 1e-6


def find_roots(
    ops: Ds1Operators,
    w_old,
    n_starts: int = 20,
    seed: int = 0,
    eps0: float = -1e-4,
    newton_cfg: SolverConfig | None = None,
) -> list:
    """Distinct roots reached by quasi-Newton and multi-start Newton.

    The first entry comes from quasi-Newton on the designed path, then
    polished with Newton. The rest are Newton endpoints from random starts
    ``p = s u 10^v`` with ``u ~ U(-1, 1)`` per cell, ``v ~ U(-1, 2)`` and
    ``s = E Pi2``, plus a zero start and sign-alternating starts
    ``+-m s (1, -1, 1, ...)`` for m in {0.5, 1, 2, 5, 10}. Endpoints closer
    than 1e-6 (relative) are merged.

    Returns
    -------
    list of Root
    """
    if n_starts < 2:
        raise ValueError("n_starts must be at least 2")
    cfg = ROOT_SOLVER if newton_cfg is None else newton_cfg
    w_old = np.asarray(w_old, dtype=float)
    n = ops.n_c
    roots: list = []

    def add(sol, origin):
        if not sol.converged:
            return
        p = sol.state.p
        for r in roots:
            if np.linalg.norm(p - r.state.p) <= DEDUP_RTOL * max(np.linalg.norm(r.state.p), 1e-300):
                return
        phys, m = _is_physical(ops, sol.state.w, eps0)
        roots.append(Root(sol.state, phys, origin, m))

    qn = quasi_newton_solve(ops, w_old, SWEEP_SOLVER)
    if qn.converged:
        add(newton_solve(ops, w_old, cfg, qn.state.p), "qn")

    rng = np.random.default_rng(seed)
    s = _pressure_scale(ops)
    starts = [rng.uniform(-1.0, 1.0, n) * s * 10.0 ** rng.uniform(-1.0, 2.0) for _ in range(n_starts)]
    starts.append(np.zeros(n))
    alt = (-1.0) ** np.arange(n)
    for sign in (1.0, -1.0):
        for m in (0.5, 1.0, 2.0, 5.0, 10.0):
            starts.append(sign * m * s * alt)
    with np.errstate(all="ignore"):
        for p0 in starts:
            add(newton_solve(ops, w_old, cfg, p0), "newton")
    return roots


# --- sweeps ------------------------------------------------------------------


SWEEP_COLUMNS = (
    "pi1",
    "pi2",
    "rho_qn_physical",
    "rho_qn_nonphysical",
    "rho_newton_physical",
    "rho_newton_nonphysical",
    "restart_iters",
    "max_c",
    "min_w_dimless",
    "iters",
    "status",
)


@dataclass
class SweepRecord:
    """One (Pi1, Pi2) case.

    For several nonphysical roots, ``rho_qn_nonphysical`` is the smallest
    quasi-Newton radius, ``rho_newton_nonphysical`` the largest Newton
    radius and ``restart_iters`` the largest restart count, i.e. the values
    closest to contradicting the stability picture.
    """

    i: int
    j: int
    pi1: float
    pi2: float
    seed: int
    rho_qn_physical: float = float("nan")
    rho_qn_nonphysical: float = float("nan")
    rho_newton_physical: float = float("nan")
    rho_newton_nonphysical: float = float("nan")
    restart_iters: int = -1
    max_c: float = float("nan")
    min_w_dimless: float = float("nan")
    iters: int = -1
    status: str = "ok"
    n_nonphysical: int = 0
    restarts_to_physical: bool = True
    max_mass_gap: float = float("nan")
    qn_fd_vs_analytic: float = float("nan")
    front_steps_ok: bool = True

    def row(self) -> list:
        return [getattr(self, c) for c in SWEEP_COLUMNS]


@dataclass
class SweepResult:
    kind: str
    n_c: int
    seed: int
    pi1: np.ndarray
    pi2: np.ndarray
    records: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def log_grid(lo: float, hi: float, count: int) -> np.ndarray:
    if count < 2:
        raise ValueError("grid count must be at least 2")
    if not (0 < lo < hi):
        raise ValueError("grid bounds must satisfy 0 < lo < hi")
    return np.logspace(np.log10(lo), np.log10(hi), count)


def _case_seed(seed: int, i: int, j: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(i), int(j)]).generate_state(1)[0])


def _front_advances_by_one(trace) -> bool:
    """Front index grows by one per iteration until it stops, then stays."""
    f = trace.column("front_index")
    if f.size == 0:
        return False
    steps = np.diff(np.concatenate([[0], f]))
    k = 0
    while k < steps.size and steps[k] == 1:
        k += 1
    return bool(np.all(steps[k:] == 0))


def stability_case(pi1, pi2, n_c=4, seed=0, n_starts=20, cfg=SWEEP_SOLVER, i=0, j=0) -> SweepRecord:
    """Roots, map spectra and perturbed restarts for one case."""
    rec = SweepRecord(i=i, j=j, pi1=float(pi1), pi2=float(pi2), seed=int(seed))
    try:
        ops = build_operators(case_from_groups(pi1, pi2, n_c))
        w0 = np.zeros(n_c)
        qn = quasi_newton_solve(ops, w0, cfg)
        rec.iters = qn.iterations
        rec.max_c = qn.trace.max_c
        rec.min_w_dimless = qn.trace.min_w_dimless
        gaps = [qn.trace.column("mass_gap").max()]
        if not qn.converged:
            rec.status = f"qn_{qn.status}"
            return rec
        roots = find_roots(ops, w0, n_starts=n_starts, seed=seed, eps0=cfg.eps0)
        rng = np.random.default_rng(seed + 1)
        rq_non, rn_non, restarts = [], [], []
        for k, r in enumerate(roots):
            rq = map_spectral_radius(FixedPointMap(ops, w0, "qn"), r.state.p)[0]
            rn = map_spectral_radius(FixedPointMap(ops, w0, "newton"), r.state.p)[0]
            if k == 0:
                rec.rho_qn_physical = rq if r.is_physical else float("nan")
                rec.rho_newton_physical = rn if r.is_physical else float("nan")
                if not r.is_physical:
                    rec.status = "qn_root_nonphysical"
                ra = spectral_radius(qn_map_derivative(ops, w0, r.state.p, coords="increments"))[0]
                rec.qn_fd_vs_analytic = abs(ra - rq) / max(ra, 1.0)
                continue
            if r.is_physical:
                # a second physical root would contradict uniqueness; record it
                rec.status = "extra_physical_root"
                continue
            rq_non.append(rq)
            rn_non.append(rn)
            p_pert = r.state.p * (1.0 + RESTART_PERTURBATION * rng.uniform(-1.0, 1.0, n_c))
            rs = quasi_newton_solve(ops, w0, cfg, p_init=p_pert)
            restarts.append(rs.iterations)
            gaps.append(rs.trace.column("mass_gap").max())
            dist = [np.sqrt(np.mean((rs.state.w - q.state.w) ** 2)) for q in roots]
            if not (rs.converged and rs.is_physical and int(np.argmin(dist)) == 0):
                rec.restarts_to_physical = False
        rec.n_nonphysical = len(rq_non)
        if rq_non:
            rec.rho_qn_nonphysical = float(min(rq_non))
            rec.rho_newton_nonphysical = float(max(rn_non))
            rec.restart_iters = int(max(restarts))
        elif rec.status == "ok":
            rec.status = "no_nonphysical_root"
        if not rec.restarts_to_physical:
            rec.status = "restart_not_physical"
        rec.max_mass_gap = float(max(gaps))
    except (ApertureQNError, np.linalg.LinAlgError, ValueError) as exc:
        rec.status = f"error:{type(exc).__name__}"
    return rec


def contraction_case(pi1, pi2, n_c=15, seed=0, cfg=SWEEP_SOLVER, i=0, j=0) -> SweepRecord:
    """Designed-path quasi-Newton diagnostics for one dry-start case."""
    rec = SweepRecord(i=i, j=j, pi1=float(pi1), pi2=float(pi2), seed=int(seed))
    try:
        ops = build_operators(case_from_groups(pi1, pi2, n_c))
        qn = quasi_newton_solve(ops, np.zeros(n_c), cfg)
        rec.iters = qn.iterations
        rec.max_c = qn.trace.max_c
        rec.min_w_dimless = qn.trace.min_w_dimless
        rec.max_mass_gap = float(qn.trace.column("mass_gap").max())
        rec.front_steps_ok = _front_advances_by_one(qn.trace)
        if not qn.converged:
            rec.status = f"qn_{qn.status}"
        elif not qn.is_physical:
            rec.status = "qn_root_nonphysical"
    except (ApertureQNError, np.linalg.LinAlgError, ValueError) as exc:
        rec.status = f"error:{type(exc).__name__}"
    return rec


def _run_case(args):
    kind, kw = args
    return stability_case(**kw) if kind == "stability" else contraction_case(**kw)


def _sweep(kind, pi1_grid, pi2_grid, n_c, seed, workers, extra):
    pi1_grid = np.asarray(pi1_grid, dtype=float)
    pi2_grid = np.asarray(pi2_grid, dtype=float)
    jobs = []
    for i, a in enumerate(pi1_grid):
        for j, b in enumerate(pi2_grid):
            kw = dict(pi1=float(a), pi2=float(b), n_c=n_c, seed=_case_seed(seed, i, j), i=i, j=j, **extra)
            jobs.append((kind, kw))
    workers = resolve_workers(workers)
    if workers <= 1:
        records = [_run_case(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_case, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    records.sort(key=lambda r: (r.i, r.j))
    return SweepResult(kind, n_c, int(seed), pi1_grid, pi2_grid, records)


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get("APERTURE_QN_WORKERS")
        workers = int(env) if env else 1
    if workers < 1:
        raise ValueError("worker count must be at least 1")
    return int(workers)


def stability_sweep(pi1_grid, pi2_grid, n_c=4, seed=0, workers=None, n_starts=20, cfg=SWEEP_SOLVER):
    """Stability study over a (Pi1, Pi2) grid; rows ordered by grid index."""
    return _sweep("stability", pi1_grid, pi2_grid, n_c, seed, workers, dict(n_starts=n_starts, cfg=cfg))


def contraction_sweep(pi1_grid, pi2_grid, n_c=15, seed=0, workers=None, cfg=SWEEP_SOLVER):
    """Contraction study (dry start, one step) over a (Pi1, Pi2) grid."""
    return _sweep("contraction", pi1_grid, pi2_grid, n_c, seed, workers, dict(cfg=cfg))
