"""Domain types, nondimensionalization and case construction.

Everything downstream works in dimensional SI units. The Buckingham groups
are only used to build normalized cases and to report results.

    Pi1 = mu / (E t)        viscous-to-elastic time ratio
    Pi2 = Q t / a**2        injected volume relative to the fracture size
    Pi3 = p / E             dimensionless pressure (the unknown)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ApertureQNError",
    "CaseParams",
    "DimensionlessGroups",
    "FractureMesh1D",
    "State",
    "case_from_groups",
    "groups_from_case",
    "dimensionless_aperture",
    "NU_SWEEP",
]

# Poisson ratio held fixed in group-driven cases.
NU_SWEEP = 0.25


class ApertureQNError(Exception):
    """Base class for errors raised by this package."""


def _as_positive(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be a finite positive number, got {value!r}")
    return value


@dataclass(frozen=True)
class CaseParams:
    """Dimensional inputs of a single-step solve.

    Parameters
    ----------
    youngs_modulus : float
        E in Pa.
    poisson_ratio : float
        nu, in [0, 0.5).
    viscosity : float
        mu in Pa s.
    injection_rate : float
        Q in m^2/s, the rate entering the modeled half-fracture.
    half_length : float
        a in m.
    dt : float
        Time step in s.
    n_cells : int
        Number of uniform cells on (0, a).
    n_quad : int
        Gauss-Legendre points per (sub)interval in the elasticity assembly.
    """

    youngs_modulus: float
    poisson_ratio: float
    viscosity: float
    injection_rate: float
    half_length: float
    dt: float
    n_cells: int
    n_quad: int = 20

    def __post_init__(self):
        _as_positive("youngs_modulus", self.youngs_modulus)
        _as_positive("viscosity", self.viscosity)
        _as_positive("half_length", self.half_length)
        _as_positive("dt", self.dt)
        q = float(self.injection_rate)
        if not np.isfinite(q) or q < 0.0:
            raise ValueError(f"injection_rate must be >= 0, got {q!r}")
        nu = float(self.poisson_ratio)
        if not (0.0 <= nu < 0.5):
            raise ValueError(f"poisson_ratio must lie in [0, 0.5), got {nu!r}")
        for name in ("n_cells", "n_quad"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or int(v) < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def plane_strain_modulus(self) -> float:
        """E' = E / (1 - nu^2)."""
        return self.youngs_modulus / (1.0 - self.poisson_ratio**2)

    @property
    def aperture_scale(self) -> float:
        """sqrt(Q dt), the length used to make apertures dimensionless."""
        return float(np.sqrt(self.injection_rate * self.dt))

    def replace(self, **changes) -> "CaseParams":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return CaseParams(**kw)


@dataclass(frozen=True)
class DimensionlessGroups:
    """Pi1, Pi2 and (optionally) the dimensionless pressure field Pi3."""

    pi1: float
    pi2: float
    pi3: np.ndarray | None = None

    def __post_init__(self):
        _as_positive("pi1", self.pi1)
        if not np.isfinite(self.pi2) or self.pi2 < 0.0:
            raise ValueError(f"pi2 must be >= 0, got {self.pi2!r}")


@dataclass(frozen=True)
class FractureMesh1D:
    """Uniform cell-centred mesh on the half-fracture (0, a)."""

    n_c: int
    half_length: float
    dx: float = field(init=False)
    centers: np.ndarray = field(init=False, repr=False)
    edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.n_c) != self.n_c or self.n_c < 1:
            raise ValueError(f"n_c must be a positive integer, got {self.n_c!r}")
        a = _as_positive("half_length", self.half_length)
        n = int(self.n_c)
        dx = a / n
        centers = (np.arange(n) + 0.5) * dx
        edges = np.arange(n + 1) * dx
        edges[-1] = a
        centers.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "n_c", n)
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def for_case(cls, params: CaseParams) -> "FractureMesh1D":
        return cls(params.n_cells, params.half_length)


@dataclass(frozen=True)
class State:
    """Co-located pressure (Pa) and aperture (m) fields."""

    p: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        w = np.array(self.w, dtype=float)
        if p.ndim != 1 or p.shape != w.shape:
            raise ValueError(f"p and w must be 1-D arrays of equal length, got {p.shape} and {w.shape}")
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "w", w)

    @property
    def n_c(self) -> int:
        return self.p.size


def case_from_groups(pi1: float, pi2: float, n_c: int, n_g: int = 20) -> CaseParams:
    """Normalized case realizing the groups (pi1, pi2).

    Uses E = 1, dt = t = 1, a = 1 and nu = 0.25, so mu = pi1 and Q = pi2.
    The solved p is then Pi3 directly.
    """
    pi1 = float(pi1)
    pi2 = float(pi2)
    if not np.isfinite(pi1) or pi1 <= 0.0:
        raise ValueError(f"pi1 must be > 0, got {pi1!r}")
    if not np.isfinite(pi2) or pi2 < 0.0:
        raise ValueError(f"pi2 must be >= 0, got {pi2!r}")
    E, t, a = 1.0, 1.0, 1.0
    return CaseParams(
        youngs_modulus=E,
        poisson_ratio=NU_SWEEP,
        viscosity=pi1 * E * t,
        injection_rate=pi2 * a * a / t,
        half_length=a,
        dt=t,
        n_cells=n_c,
        n_quad=n_g,
    )


def groups_from_case(params: CaseParams, p: np.ndarray | None = None) -> DimensionlessGroups:
    """Recover (Pi1, Pi2[, Pi3]) from a dimensional case."""
    E, t, a = params.youngs_modulus, params.dt, params.half_length
    pi3 = None if p is None else np.asarray(p, dtype=float) / E
    return DimensionlessGroups(params.viscosity / (E * t), params.injection_rate * t / a**2, pi3)


def dimensionless_aperture(w, Q: float, t: float) -> np.ndarray:
    """Return w / sqrt(Q t) elementwise."""
    qt = float(Q) * float(t)
    if not qt > 0.0:
        raise ValueError(f"Q*t must be positive, got {qt!r}")
    return np.asarray(w, dtype=float) / np.sqrt(qt)
