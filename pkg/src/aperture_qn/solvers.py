"""Newton and quasi-Newton drivers with per-iteration traces.

Quasi-Newton iterates the frozen-flux fixed point::

    (A + F(w^v)) p^{v+1} = q + w_old

starting from ``w^0 = w_old`` (the designed path) unless a start pressure is
given. Newton iterates ``J dp = -R``. Both solve in pressure-increment
coordinates (see :mod:`aperture_qn.ds1_model`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import ApertureQNError, State
from .ds1_model import (
    Ds1Operators,
    _A_cumulative,
    from_increments,
    increment_jacobian,
    increment_qn_matrix,
    increment_residual,
    to_increments,
)

__all__ = [
    "SingularMatrixError",
    "SolverConfig",
    "IterationRecord",
    "SolveTrace",
    "Solution",
    "linear_solve",
    "quasi_newton_solve",
    "newton_solve",
    "front_index",
    "CONVERGED",
    "MAX_ITERS",
    "LINEAR_SOLVE_FAILURE",
]

CONVERGED = "converged"
MAX_ITERS = "max_iters"
LINEAR_SOLVE_FAILURE = "linear_solve_failure"

# relative pivot threshold of linear_solve
PIVOT_RTOL = 1e-14
# apertures below this fraction of max|w| count as dry for the front index
FRONT_RTOL = 1e-12


class SingularMatrixError(ApertureQNError, np.linalg.LinAlgError):
    """A pivot fell below the relative threshold during factorization."""


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule and classification threshold.

    Parameters
    ----------
    max_iters : int
    rms_tol : float
        Bound on ``sqrt(mean((w^{v+1} - w^v)^2))`` in m.
    res_tol : float or None
        Bound on ``||R|| / ||q + w_old||``. ``None`` drops the residual test
        and leaves the aperture-change test alone.
    variant : {"quasi_newton", "newton"}
    eps0 : float
        A state is physical when ``min w / sqrt(Q dt) >= eps0``.
    """

    max_iters: int = 100
    rms_tol: float = 1e-8
    res_tol: float | None = 1e-9
    variant: str = "quasi_newton"
    eps0: float = -1e-4

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if not self.rms_tol > 0:
            raise ValueError("rms_tol must be positive")
        if self.res_tol is not None and not self.res_tol > 0:
            raise ValueError("res_tol must be positive or None")
        if self.variant not in ("quasi_newton", "newton"):
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class IterationRecord:
    """One iterate. ``c`` is NaN before the second iteration."""

    iteration: int
    p: np.ndarray
    w: np.ndarray
    residual_norm: float
    rms_change: float
    c: float
    min_w_dimless: float
    front_index: int
    mass_gap: float


@dataclass
class SolveTrace:
    records: list = field(default_factory=list)
    status: str = MAX_ITERS
    message: str = ""

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def max_c(self) -> float:
        c = self.column("c") if self.records else np.array([])
        c = c[np.isfinite(c)]
        return float(c.max()) if c.size else float("nan")

    @property
    def min_w_dimless(self) -> float:
        return float(np.min(self.column("min_w_dimless"))) if self.records else float("nan")


@dataclass
class Solution:
    state: State
    trace: SolveTrace
    is_physical: bool
    rhs_norm: float

    @property
    def status(self) -> str:
        return self.trace.status

    @property
    def converged(self) -> bool:
        return self.trace.status == CONVERGED

    @property
    def iterations(self) -> int:
        return len(self.trace)


def linear_solve(M, b) -> np.ndarray:
    """Solve ``M x = b`` by LU with partial pivoting.

    Columns are equilibrated by powers of two first (exact in floating
    point), which matters when flux and elastic columns differ by many
    orders of magnitude.

    Raises
    ------
    SingularMatrixError
        If ``min |U_ii| < 1e-14 max |U_ii|`` or M is not square.
    """
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or b.shape[0] != M.shape[0]:
        raise ValueError(f"incompatible shapes {M.shape} and {b.shape}")
    if not np.all(np.isfinite(M)) or not np.all(np.isfinite(b)):
        raise SingularMatrixError("non-finite entries in linear system")
    colmax = np.abs(M).max(axis=0)
    if np.any(colmax == 0.0):
        raise SingularMatrixError("matrix has a zero column")
    scale = np.exp2(np.round(np.log2(colmax)))
    with warnings.catch_warnings():
        # exact zero pivots are caught by the ratio test below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M / scale, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() < PIVOT_RTOL * d.max():
        raise SingularMatrixError(f"pivot ratio {d.min() / d.max():.3e} below {PIVOT_RTOL:g}")
    x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    return (x.T / scale).T


def front_index(w) -> int:
    """Number of cells with positive aperture (tiny values count as dry)."""
    w = np.asarray(w, dtype=float)
    m = np.abs(w).max() if w.size else 0.0
    if m == 0.0:
        return 0
    return int(np.count_nonzero(w > FRONT_RTOL * m))


class _Tracker:
    """Shared bookkeeping for both drivers."""

    def __init__(self, ops: Ds1Operators, w_old, cfg: SolverConfig, w_start):
        self.ops = ops
        self.cfg = cfg
        self.w_old = np.asarray(w_old, dtype=float)
        self.rhs = ops.q_vec + self.w_old
        self.rhs_norm = float(np.linalg.norm(self.rhs))
        self.rhs_l1 = float(np.sum(np.abs(self.rhs)))
        self.scale = ops.params.aperture_scale
        self.trace = SolveTrace()
        self.w_prev = np.asarray(w_start, dtype=float)
        self.step_prev = None

    def record(self, z, w, r) -> bool:
        n = len(self.trace) + 1
        step = float(np.linalg.norm(w - self.w_prev))
        if self.step_prev is None:
            c = float("nan")
        elif self.step_prev > 0:
            c = step / self.step_prev
        else:
            c = 0.0 if step == 0 else float("inf")
        rms = step / np.sqrt(w.size)
        rnorm = float(np.linalg.norm(r))
        gap = abs(float(np.sum(w) - np.sum(self.rhs)))
        gap = gap / self.rhs_l1 if self.rhs_l1 > 0 else gap
        mwd = float(w.min() / self.scale) if self.scale > 0 else float("nan")
        self.trace.records.append(
            IterationRecord(
                iteration=n,
                p=from_increments(z),
                w=w.copy(),
                residual_norm=rnorm,
                rms_change=rms,
                c=c,
                min_w_dimless=mwd,
                front_index=front_index(w),
                mass_gap=gap,
            )
        )
        self.w_prev = w
        self.step_prev = step
        ok = rms < self.cfg.rms_tol
        if ok and self.cfg.res_tol is not None:
            ok = rnorm <= self.cfg.res_tol * self.rhs_norm
        return ok

    def finish(self, z) -> Solution:
        if self.trace.records:
            last = self.trace.records[-1]
            state = State(last.p, last.w)
        else:
            p = from_increments(z)
            state = State(p, self.ops.A @ p)
        if self.scale > 0:
            physical = bool(state.w.min() / self.scale >= self.cfg.eps0)
        else:
            physical = bool(state.w.min() >= 0.0)
        return Solution(state=state, trace=self.trace, is_physical=physical, rhs_norm=self.rhs_norm)


def quasi_newton_solve(
    ops: Ds1Operators, w_old, cfg: SolverConfig | None = None, p_init=None
) -> Solution:
    """Frozen-flux fixed-point iteration.

    Without ``p_init`` the first flux matrix is built from ``w_old``.
    With ``p_init`` it is built from ``A p_init``.
    """
    cfg = SolverConfig() if cfg is None else cfg
    w_old = np.asarray(w_old, dtype=float)
    if w_old.shape != (ops.n_c,):
        raise ValueError(f"w_old must have shape ({ops.n_c},)")
    AP = _A_cumulative(ops)
    if p_init is None:
        z = np.zeros(ops.n_c)
        w = w_old.copy()
    else:
        z = to_increments(p_init)
        w = AP @ z
    tr = _Tracker(ops, w_old, cfg, w)
    for _ in range(cfg.max_iters):
        M = increment_qn_matrix(ops, w, AP)
        try:
            z = linear_solve(M, tr.rhs)
        except SingularMatrixError as exc:
            tr.trace.status = LINEAR_SOLVE_FAILURE
            tr.trace.message = str(exc)
            return tr.finish(z)
        w = AP @ z
        r = increment_residual(ops, z, w_old, AP)
        if tr.record(z, w, r):
            tr.trace.status = CONVERGED
            break
    else:
        tr.trace.status = MAX_ITERS
    return tr.finish(z)


def newton_solve(ops: Ds1Operators, w_old, cfg: SolverConfig | None, p_init) -> Solution:
    """Plain Newton iteration from ``p_init``. No damping, no clipping."""
    cfg = SolverConfig(variant="newton") if cfg is None else cfg
    w_old = np.asarray(w_old, dtype=float)
    if w_old.shape != (ops.n_c,):
        raise ValueError(f"w_old must have shape ({ops.n_c},)")
    if p_init is None:
        raise ValueError("newton_solve needs an initial pressure")
    AP = _A_cumulative(ops)
    z = to_increments(p_init)
    if z.shape != (ops.n_c,):
        raise ValueError(f"p_init must have shape ({ops.n_c},)")
    tr = _Tracker(ops, w_old, cfg, AP @ z)
    r = increment_residual(ops, z, w_old, AP)
    for _ in range(cfg.max_iters):
        try:
            dz = linear_solve(increment_jacobian(ops, z, AP), -r)
        except SingularMatrixError as exc:
            tr.trace.status = LINEAR_SOLVE_FAILURE
            tr.trace.message = str(exc)
            return tr.finish(z)
        z = z + dz
        if not np.all(np.isfinite(z)):
            tr.trace.status = LINEAR_SOLVE_FAILURE
            tr.trace.message = "non-finite iterate"
            return tr.finish(z - dz)
        w = AP @ z
        r = increment_residual(ops, z, w_old, AP)
        if tr.record(z, w, r):
            tr.trace.status = CONVERGED
            break
    else:
        tr.trace.status = MAX_ITERS
    return tr.finish(z)
