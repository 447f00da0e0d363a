"""Fluid-driven propagation of a plane-strain (KGD) fracture.

The tip advances by a fixed length ``da`` whenever the stress intensity
factor reaches the toughness, and the time step is adapted so that each
advance happens at equilibrium ``K = K_c``. Between advances the fracture is
static and the step grows geometrically up to ``max_dt``. Each step is one
quasi-Newton solve on the current uniform mesh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ApertureQNError, CaseParams, FractureMesh1D
from .ds1_model import build_operators
from .solvers import SolverConfig, quasi_newton_solve

__all__ = [
    "PropagationConfig",
    "PropagationState",
    "PropagationError",
    "StepRecord",
    "KGDHistory",
    "RegimeNumber",
    "regime_number",
    "stress_intensity",
    "timestep_update",
    "remesh_on_advance",
    "project_conservative",
    "run_kgd",
    "kgd_viscosity_length",
    "GAMMA_M0",
    "GROW",
    "CORRECT",
    "PROPAGATE",
    "BISECT",
]

GROW = "grow"
CORRECT = "correct"
PROPAGATE = "propagate"
BISECT = "bisect"
ABORT = "abort"

# prefactor of the zero-toughness plane-strain similarity solution
GAMMA_M0 = 0.61524


class PropagationError(ApertureQNError):
    """A propagation step could not be completed."""


@dataclass(frozen=True)
class RegimeNumber:
    K_m: float
    convention: str

    @property
    def regime(self) -> str:
        if self.K_m < 1.0:
            return "viscosity"
        if self.K_m > 4.0:
            return "toughness"
        return "transitional"


def regime_number(params: CaseParams, K_c: float, q_total: float, convention: str = "formula") -> RegimeNumber:
    """Dimensionless toughness of a KGD fracture.

    ``convention="formula"`` evaluates ``8 K_c / (2 E'^3 mu' q)^{1/4}``.
    ``convention="detournay"`` evaluates ``K' / (E'^3 mu' q)^{1/4}`` with
    ``K' = 4 sqrt(2/pi) K_c``. In both, ``mu' = 12 mu`` and ``q`` is the
    total rate into both wings.
    """
    if not (K_c > 0 and q_total > 0):
        raise ValueError("K_c and q_total must be positive")
    Ep = params.plane_strain_modulus
    mup = 12.0 * params.viscosity
    if convention == "formula":
        K_m = 8.0 * K_c / (2.0 * Ep**3 * mup * q_total) ** 0.25
    elif convention == "detournay":
        K_m = 4.0 * math.sqrt(2.0 / math.pi) * K_c / (Ep**3 * mup * q_total) ** 0.25
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return RegimeNumber(float(K_m), convention)


def kgd_viscosity_length(t, E_prime: float, mu: float, q_total: float):
    """Half-length of the zero-toughness KGD solution,
    ``a(t) = 0.61524 (E' q^3 t^4 / mu')^{1/6}`` with ``mu' = 12 mu``."""
    t = np.asarray(t, dtype=float)
    return GAMMA_M0 * (E_prime * q_total**3 * t**4 / (12.0 * mu)) ** (1.0 / 6.0)


def stress_intensity(p, a: float, edges=None) -> float:
    """Mode-I SIF of a symmetric crack loaded by cellwise-constant pressure.

    ``K = 2 sqrt(a/pi) * integral_0^a p(x) / sqrt(a^2 - x^2) dx``; the
    weight is integrated exactly on each cell, giving
    ``sum_j p_j (asin(x_{j+1}/a) - asin(x_j/a))``.
    """
    p = np.asarray(p, dtype=float)
    if edges is None:
        edges = np.linspace(0.0, a, p.size + 1)
    ratio = np.clip(np.asarray(edges, dtype=float) / a, -1.0, 1.0)
    weights = np.diff(np.arcsin(ratio))
    return float(2.0 * math.sqrt(a / math.pi) * np.dot(p, weights))


def timestep_update(K_eq, K_eq_old, K_c, dt_old, alpha, tol: float = 1e-3):
    """Next time step and the controller action.

    Returns
    -------
    (dt_new, action) : (float, str)
        ``propagate`` when ``|K_eq/K_c - 1| <= tol`` (dt unchanged),
        ``grow`` when ``K_eq < K_c`` (dt times alpha),
        ``correct`` when ``K_eq > K_c`` (secant toward K_c),
        ``bisect`` when the secant is degenerate (dt halved).
    """
    if not dt_old > 0:
        raise ValueError("dt_old must be positive")
    if abs(K_eq / K_c - 1.0) <= tol:
        return dt_old, PROPAGATE
    if K_eq < K_c:
        return alpha * dt_old, GROW
    if K_eq <= K_eq_old:
        return 0.5 * dt_old, BISECT
    return (K_c - K_eq_old) / (K_eq - K_eq_old) * dt_old, CORRECT


def project_conservative(values, old_edges, new_edges) -> np.ndarray:
    """Cell averages on ``new_edges`` preserving ``sum(v * dx)``.

    Parts of new cells outside the old mesh receive zero.
    """
    v = np.asarray(values, dtype=float)
    oe = np.asarray(old_edges, dtype=float)
    ne = np.asarray(new_edges, dtype=float)
    lo = np.maximum(ne[:-1, None], oe[None, :-1])
    hi = np.minimum(ne[1:, None], oe[None, 1:])
    overlap = np.clip(hi - lo, 0.0, None)
    return overlap @ v / np.diff(ne)


@dataclass(frozen=True)
class PropagationConfig:
    """Controller settings.

    ``advancement_length`` is the tip jump ``da``; ``growth_factor`` the
    factor alpha applied after a static step. Cell size is set by the
    initial case (``dx0 = a0 / n_c0``) and kept on remesh.
    """

    advancement_length: float = 2.0
    growth_factor: float = 1.2
    critical_sif: float = 0.5e6
    max_dt: float = 0.5
    total_time: float = 90.0
    secant_max_corrections: int = 30
    initial_dt: float = 0.01
    min_dt: float = 1e-9
    propagate_tol: float = 1e-3
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(max_iters=200, res_tol=None))

    def __post_init__(self):
        if not self.advancement_length > 0:
            raise ValueError("advancement_length must be positive")
        if not self.growth_factor > 1:
            raise ValueError("growth_factor must exceed 1")
        if not self.critical_sif > 0:
            raise ValueError("critical_sif must be positive")
        if not (self.max_dt > 0 and self.total_time > 0 and self.initial_dt > 0):
            raise ValueError("time settings must be positive")
        if self.secant_max_corrections < 1:
            raise ValueError("secant_max_corrections must be at least 1")


@dataclass
class PropagationState:
    params: CaseParams
    mesh: FractureMesh1D
    w_old: np.ndarray
    t: float
    dt: float
    K_eq_old: float
    dx0: float

    @property
    def half_length(self) -> float:
        return self.mesh.half_length


def remesh_on_advance(state: PropagationState, da: float) -> PropagationState:
    """Lengthen the fracture by ``da`` on a new uniform mesh.

    The cell count is ``round(a'/dx0)`` so cells stay near the initial
    size. Aperture moves by conservative projection and new tip cells are
    dry. The SIF memory is reset because the geometry changed.
    """
    if da < 0:
        raise ValueError("da must be non-negative")
    if da == 0:
        return state
    a_new = state.half_length + da
    n_new = max(1, int(round(a_new / state.dx0)))
    mesh = FractureMesh1D(n_new, a_new)
    w_new = project_conservative(state.w_old, state.mesh.edges, mesh.edges)
    params = state.params.replace(half_length=a_new, n_cells=n_new)
    return PropagationState(params, mesh, w_new, state.t, state.dt, 0.0, state.dx0)


@dataclass(frozen=True)
class StepRecord:
    """One solve attempt of the controller."""

    step: int
    t: float
    dt: float
    a: float
    iters: int
    max_c: float
    K_eq: float
    action: str
    accepted: bool
    min_w_dimless: float


@dataclass
class KGDHistory:
    """Attempts, accepted states and the final status of a run."""

    attempts: list = field(default_factory=list)
    times: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    profiles: list = field(default_factory=list)
    volumes: list = field(default_factory=list)
    status: str = "running"
    message: str = ""

    @property
    def completed(self) -> bool:
        return self.status == "completed"


def run_kgd(params: CaseParams, prop: PropagationConfig, max_attempts: int = 100000) -> KGDHistory:
    """Run the propagation driver from a dry fracture.

    ``params`` gives material, fluid and the initial half-length and mesh;
    ``params.injection_rate`` is the rate into the modeled half.
    ``params.dt`` is ignored in favour of ``prop.initial_dt``.
    """
    mesh = FractureMesh1D.for_case(params)
    state = PropagationState(
        params=params.replace(dt=prop.initial_dt),
        mesh=mesh,
        w_old=np.zeros(mesh.n_c),
        t=0.0,
        dt=min(prop.initial_dt, prop.max_dt),
        K_eq_old=0.0,
        dx0=mesh.dx,
    )
    hist = KGDHistory()
    ops = None
    corrections = 0
    eps_t = 1e-12 * prop.total_time
    for attempt in range(max_attempts):
        if state.t >= prop.total_time - eps_t:
            hist.status = "completed"
            return hist
        dt = min(state.dt, prop.max_dt, prop.total_time - state.t)
        if ops is None or ops.params.dt != dt or ops.mesh is not state.mesh:
            ops = build_operators(state.params.replace(dt=dt), state.mesh)
        sol = quasi_newton_solve(ops, state.w_old, prop.solver)
        if not sol.converged:
            hist.attempts.append(_attempt(attempt, state, dt, sol, float("nan"), ABORT, False))
            hist.status = "aborted"
            hist.message = f"quasi-Newton {sol.status} at t={state.t + dt:.6g}"
            return hist
        if not sol.is_physical:
            hist.attempts.append(_attempt(attempt, state, dt, sol, float("nan"), ABORT, False))
            hist.status = "aborted"
            hist.message = f"nonphysical converged state at t={state.t + dt:.6g}"
            return hist
        K = stress_intensity(sol.state.p, state.half_length, state.mesh.edges)
        at_end = state.t + dt >= prop.total_time - eps_t
        dt_new, action = timestep_update(K, state.K_eq_old, prop.critical_sif, dt, prop.growth_factor, prop.propagate_tol)
        if action in (GROW, PROPAGATE):
            # accept the step
            hist.attempts.append(_attempt(attempt, state, dt, sol, K, action, True))
            corrections = 0
            state = PropagationState(
                state.params, state.mesh, sol.state.w.copy(), state.t + dt,
                min(dt_new, prop.max_dt) if action == GROW else dt, K, state.dx0,
            )
            _record_accepted(hist, state, sol)
            if action == PROPAGATE and not at_end:
                state = remesh_on_advance(state, prop.advancement_length)
            continue
        hist.attempts.append(_attempt(attempt, state, dt, sol, K, action, False))
        corrections += 1
        if corrections > prop.secant_max_corrections:
            hist.status = "aborted"
            hist.message = f"no equilibrium step after {prop.secant_max_corrections} corrections at t={state.t:.6g}"
            return hist
        if dt_new < prop.min_dt:
            hist.status = "aborted"
            hist.message = f"time step {dt_new:.3e} below min_dt at t={state.t:.6g}"
            return hist
        state.dt = dt_new
    hist.status = "aborted"
    hist.message = "attempt limit reached"
    return hist


def _attempt(k, state, dt, sol, K, action, accepted):
    return StepRecord(
        step=k,
        t=state.t + dt,
        dt=dt,
        a=state.half_length,
        iters=sol.iterations,
        max_c=sol.trace.max_c,
        K_eq=K,
        action=action,
        accepted=accepted,
        min_w_dimless=sol.trace.min_w_dimless,
    )


def _record_accepted(hist, state, sol):
    hist.times.append(state.t)
    hist.lengths.append(state.half_length)
    x = state.mesh.centers
    hist.profiles.append((state.t, state.half_length, x.copy(), sol.state.p.copy(), sol.state.w.copy()))
    hist.volumes.append(float(np.sum(sol.state.w) * state.mesh.dx))
