"""Discrete operators of the Green's-function fracture model.

A single straight fracture of half-length ``a`` sits in an infinite
plane-strain medium. Pressure and aperture are co-located at the centres of
``n_c`` uniform cells. Elasticity is the dense linear map ``w = A p`` and
lubrication is a cubic-law two-point flux, so one backward-Euler step is::

    R(p) = A p - w_old + F(A p) p - q = 0

``F(w)`` is the tridiagonal flux matrix built from interface apertures
``(w_i + w_{i+1}) / 2`` cubed, scaled by ``T = dt / (12 mu dx^2)``.

Pressure increments
-------------------
At small viscosity ``T`` is enormous (``~1e17`` for Pi1 = 1e-17) and
``F p`` is a difference of huge, nearly equal numbers. Forming
``(A + F) P`` with ``p = P z`` loses everything. The solvers therefore work
in the increment coordinates ``z = (p_1, p_2 - p_1, ..., p_n - p_{n-1})``
and build the products with ``P`` structurally, so the transmissibility
multiplies the increments directly. The public functions below keep the
plain pressure form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ApertureQNError, CaseParams, FractureMesh1D

__all__ = [
    "SingularKernelError",
    "Ds1Operators",
    "green_kernel",
    "assemble_elasticity",
    "assemble_flux",
    "interface_aperture",
    "build_operators",
    "residual",
    "newton_jacobian",
    "flux_derivative",
    "quasi_newton_matrix",
    "mass_balance_gap",
    "to_increments",
    "from_increments",
]

# Quadrature nodes are kept this far (relative to a) from the tips.
TIP_GUARD = 1e-12


class SingularKernelError(ApertureQNError, ValueError):
    """The kernel was evaluated at its singularity or outside (0, a)."""


def green_kernel(s, x, a: float) -> np.ndarray:
    """Log kernel mapping a pressure at ``s`` to an opening at ``x``.

    ``G(s; x) = ln |(X - S) / (X + S)|`` with ``X = sqrt(a^2 - x^2)`` and
    ``S = sqrt(a^2 - s^2)``. It is negative and symmetric in (s, x).

    Parameters
    ----------
    s, x : array_like
        Points in (0, a), broadcast against each other.
    a : float
        Half-length.

    Raises
    ------
    SingularKernelError
        If any pair has ``s == x`` or a point is not strictly inside (0, a).
    """
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(s <= 0.0) or np.any(s >= a) or np.any(x <= 0.0) or np.any(x >= a):
        raise SingularKernelError("kernel arguments must lie strictly inside (0, a)")
    if np.any(s == x):
        raise SingularKernelError("kernel is singular at s == x")
    return _kernel(s, x, a)


def _kernel(s, x, a):
    # X - S = (s - x)(s + x) / (X + S) avoids cancellation near s = x
    X = np.sqrt((a - x) * (a + x))
    S = np.sqrt((a - s) * (a + s))
    return np.log(np.abs((s - x) * (s + x))) - 2.0 * np.log(X + S)


def assemble_elasticity(params: CaseParams, mesh: FractureMesh1D | None = None) -> np.ndarray:
    """Dense elasticity matrix A with ``w = A p``.

    ``A_ij = -(2 (1 - nu^2) / (pi E)) * integral of G(s; x_i) over cell j``
    by Gauss-Legendre quadrature with ``n_quad`` nodes. The cell containing
    the collocation point is split there and each half gets its own rule,
    which keeps the log singularity on an endpoint.

    Returns
    -------
    ndarray, shape (n_c, n_c)
        Every entry is positive.
    """
    if mesh is None:
        mesh = FractureMesh1D.for_case(params)
    a = mesh.half_length
    n = mesh.n_c
    xi, wi = np.polynomial.legendre.leggauss(params.n_quad)
    lo = mesh.edges[:-1]
    hi = mesh.edges[1:]
    x = mesh.centers
    guard = TIP_GUARD * a

    # regular cells: nodes (n_c, n_g), same for every collocation point
    s = 0.5 * (hi - lo)[:, None] * xi + 0.5 * (hi + lo)[:, None]
    ws = 0.5 * (hi - lo)[:, None] * wi
    s = np.clip(s, guard, a - guard)
    with np.errstate(divide="ignore", invalid="ignore"):
        # odd n_quad puts a node on x_i; the diagonal is overwritten below
        G = _kernel(s[None, :, :], x[:, None, None], a)
        integ = np.einsum("ijk,jk->ij", G, ws)

    # diagonal cells: split at x_i
    for half_lo, half_hi in ((lo, x), (x, hi)):
        sd = 0.5 * (half_hi - half_lo)[:, None] * xi + 0.5 * (half_hi + half_lo)[:, None]
        wd = 0.5 * (half_hi - half_lo)[:, None] * wi
        sd = np.clip(sd, guard, a - guard)
        if np.any(sd == x[:, None]):
            raise SingularKernelError("quadrature node coincides with a collocation point")
        if half_lo is lo:
            diag = np.sum(_kernel(sd, x[:, None], a) * wd, axis=1)
        else:
            diag += np.sum(_kernel(sd, x[:, None], a) * wd, axis=1)
    integ[np.arange(n), np.arange(n)] = diag

    if not np.all(np.isfinite(integ)):
        raise SingularKernelError("non-finite kernel value during assembly")
    coef = 2.0 * (1.0 - params.poisson_ratio**2) / (np.pi * params.youngs_modulus)
    return -coef * integ


def interface_aperture(w) -> np.ndarray:
    """Arithmetic mean of neighbouring cell apertures, length n_c - 1."""
    w = np.asarray(w, dtype=float)
    return 0.5 * (w[:-1] + w[1:])


def assemble_flux(w, T: float) -> np.ndarray:
    """Tridiagonal flux matrix F(w) with conductivities ``T w_{i+1/2}^3``.

    Row and column sums vanish. Negative apertures are allowed; F is then
    indefinite.
    """
    w = np.asarray(w, dtype=float)
    n = w.size
    F = np.zeros((n, n))
    if n < 2:
        return F
    cond = T * interface_aperture(w) ** 3
    k = np.arange(n - 1)
    F[k, k] += cond
    F[k + 1, k + 1] += cond
    F[k, k + 1] = -cond
    F[k + 1, k] = -cond
    return F


@dataclass(frozen=True, eq=False)
class Ds1Operators:
    """Assembled discrete system for one case.

    Attributes
    ----------
    params : CaseParams
    mesh : FractureMesh1D
    A : ndarray
        Elasticity matrix (m/Pa).
    T : float
        Static transmissibility ``dt / (12 mu dx^2)`` (1/(Pa s) * s).
    q_vec : ndarray
        Source term, ``dt Q / dx`` in the first cell and zero elsewhere (m).
    """

    params: CaseParams
    mesh: FractureMesh1D
    A: np.ndarray
    T: float
    q_vec: np.ndarray

    @property
    def n_c(self) -> int:
        return self.mesh.n_c

    def flux(self, w) -> np.ndarray:
        return assemble_flux(w, self.T)

    def aperture(self, p) -> np.ndarray:
        return self.A @ np.asarray(p, dtype=float)


def build_operators(params: CaseParams, mesh: FractureMesh1D | None = None) -> Ds1Operators:
    """Assemble A, T and q for ``params`` on a uniform mesh."""
    if mesh is None:
        mesh = FractureMesh1D.for_case(params)
    A = assemble_elasticity(params, mesh)
    A.setflags(write=False)
    T = params.dt / (12.0 * params.viscosity * mesh.dx**2)
    q = np.zeros(mesh.n_c)
    q[0] = params.dt * params.injection_rate / mesh.dx
    q.setflags(write=False)
    return Ds1Operators(params=params, mesh=mesh, A=A, T=T, q_vec=q)


def residual(ops: Ds1Operators, p_new, w_old) -> np.ndarray:
    """Component form of ``R = (A + F(A p)) p - q - w_old``."""
    p = np.asarray(p_new, dtype=float)
    return _residual_from(ops, ops.A @ p, np.diff(p), w_old)


def _residual_from(ops, w, g, w_old):
    flux = ops.T * interface_aperture(w) ** 3 * g
    div = np.zeros_like(w)
    div[:-1] -= flux
    div[1:] += flux
    return w - np.asarray(w_old, dtype=float) + div - ops.q_vec


def flux_derivative(ops: Ds1Operators, p) -> np.ndarray:
    """Chain-rule term D = d(F(A p))/dp applied to p, a dense matrix."""
    p = np.asarray(p, dtype=float)
    D = np.zeros((p.size, p.size))
    if p.size < 2:
        return D
    w = ops.A @ p
    wi = interface_aperture(w)
    S = 0.5 * (ops.A[:-1] + ops.A[1:])
    dfl = (3.0 * ops.T * wi**2 * np.diff(p))[:, None] * S
    D[:-1] -= dfl
    D[1:] += dfl
    return D


def newton_jacobian(ops: Ds1Operators, p) -> np.ndarray:
    """Full Jacobian ``J = A + F(A p) + D(p)`` of :func:`residual`."""
    p = np.asarray(p, dtype=float)
    return ops.A + ops.flux(ops.A @ p) + flux_derivative(ops, p)


def quasi_newton_matrix(ops: Ds1Operators, w_prev) -> np.ndarray:
    """Frozen-flux matrix ``A + F(w_prev)``; no derivative of the cubic law."""
    return ops.A + ops.flux(w_prev)


def mass_balance_gap(ops: Ds1Operators, p_star, w_old) -> float:
    """``|sum(A p*) - sum(q + w_old)|``; zero for exact quasi-Newton iterates."""
    w = ops.A @ np.asarray(p_star, dtype=float)
    return float(abs(np.sum(w) - np.sum(ops.q_vec + np.asarray(w_old, dtype=float))))


# --- increment coordinates -------------------------------------------------


def to_increments(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.concatenate([p[:1], np.diff(p)])


def from_increments(z) -> np.ndarray:
    return np.cumsum(np.asarray(z, dtype=float))


def _A_cumulative(ops: Ds1Operators) -> np.ndarray:
    # A @ P, with P the lower-triangular ones matrix
    return np.cumsum(ops.A[:, ::-1], axis=1)[:, ::-1]


def increment_qn_matrix(ops: Ds1Operators, w_prev, AP: np.ndarray | None = None) -> np.ndarray:
    """``(A + F(w_prev)) P`` assembled without forming ``F P``."""
    M = (_A_cumulative(ops) if AP is None else AP).copy()
    n = M.shape[0]
    if n > 1:
        cond = ops.T * interface_aperture(w_prev) ** 3
        k = np.arange(n - 1)
        M[k, k + 1] -= cond
        M[k + 1, k + 1] += cond
    return M


def increment_jacobian(ops: Ds1Operators, z, AP: np.ndarray | None = None) -> np.ndarray:
    """Newton Jacobian in increment coordinates, ``J P``."""
    z = np.asarray(z, dtype=float)
    AP = _A_cumulative(ops) if AP is None else AP
    w = AP @ z
    M = increment_qn_matrix(ops, w, AP)
    if z.size > 1:
        wi = interface_aperture(w)
        S = 0.5 * (AP[:-1] + AP[1:])
        dfl = (3.0 * ops.T * wi**2 * z[1:])[:, None] * S
        M[:-1] -= dfl
        M[1:] += dfl
    return M


def increment_residual(ops: Ds1Operators, z, w_old, AP: np.ndarray | None = None) -> np.ndarray:
    """Residual evaluated from increments; the flux uses ``z[1:]`` exactly."""
    z = np.asarray(z, dtype=float)
    w = (_A_cumulative(ops) if AP is None else AP) @ z
    return _residual_from(ops, w, z[1:], w_old)
