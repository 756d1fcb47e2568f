"""Benchmark objectives with gradients, curvature metadata, and sanity checks.

Objectives are plain callables bundled in an :class:`ObjectiveSpec` together
with what the convergence theory needs to know about them: the minimum value
f_min > 0, the minimizer when known, a lower bound f_lo used by weight-floor
schedules, and curvature constants (c0, c1) such that

    hess f(x)  <=  c0 * I + c1 * grad f(x) grad f(x)^T

in the positive-semidefinite order.  Evaluators are ``functools.partial`` of
module-level functions so specs pickle cleanly into worker processes.

Array convention: ``eval`` maps (..., d) -> (...,), ``grad`` maps
(..., d) -> (..., d), ``hess`` maps (..., d) -> (..., d, d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional

import numpy as np

from . import theory
from .errors import InvalidParameterError, UnsupportedObjectiveError

__all__ = [
    "ObjectiveSpec",
    "rastrigin",
    "shifted_quadratic",
    "check_assumptions",
    "AssumptionReport",
    "by_name",
]


@dataclass(frozen=True)
class ObjectiveSpec:
    """An objective function plus the metadata the convergence theory consumes.

    ``grad``/``hess``/``argmin`` are optional: a merely-Lipschitz objective can
    still be simulated, but gradient-based diagnostics (Lipschitz estimate of
    the Gibbs weight, Hessian domination checks, minimizer distances) are
    disabled for it.
    """

    name: str
    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    f_min: float
    f_lower_bound: float
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    argmin: Optional[np.ndarray] = None
    hessian_c0: Optional[float] = None
    hessian_c1: Optional[float] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (isinstance(self.dim, (int, np.integer)) and self.dim >= 1):
            raise InvalidParameterError(f"dim must be a positive integer, got {self.dim}")
        if not (self.f_min > 0 and math.isfinite(self.f_min)):
            raise InvalidParameterError(
                f"f_min must be positive (the theory assumes inf f > 0), got {self.f_min}"
            )
        if self.f_lower_bound > self.f_min:
            raise InvalidParameterError(
                f"f_lower_bound {self.f_lower_bound} exceeds f_min {self.f_min}"
            )
        if self.argmin is not None:
            object.__setattr__(self, "argmin", np.asarray(self.argmin, dtype=float))
            if self.argmin.shape != (self.dim,):
                raise InvalidParameterError("argmin must be a length-dim vector")
        for label in ("hessian_c0", "hessian_c1"):
            v = getattr(self, label)
            if v is not None and not (v >= 0 and math.isfinite(v)):
                raise InvalidParameterError(f"{label} must be >= 0, got {v}")

    def omega(self, x: np.ndarray, alpha: float) -> np.ndarray:
        """Gibbs weight exp(-alpha * f(x)); lies in (0, exp(-alpha*f_min)]."""
        return np.exp(-alpha * np.asarray(self.eval(x), dtype=float))


def _rastrigin_eval(x: np.ndarray, b: float, c: float, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = x - b
    return np.sum(z * z - 10.0 * np.cos(2.0 * np.pi * z) + 10.0, axis=-1) / d + c


def _rastrigin_grad(x: np.ndarray, b: float, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = x - b
    return (2.0 * z + 20.0 * np.pi * np.sin(2.0 * np.pi * z)) / d


def _rastrigin_hess(x: np.ndarray, b: float, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = x - b
    diag = (2.0 + 40.0 * np.pi**2 * np.cos(2.0 * np.pi * z)) / d
    out = np.zeros(x.shape + (d,), dtype=float)
    idx = np.arange(d)
    out[..., idx, idx] = diag
    return out


def rastrigin(d: int, b: float = 0.0, c: float = 1.0) -> ObjectiveSpec:
    """Dimension-normalized Rastrigin bowl with minimum value c at b*ones.

        f(x) = (1/d) * sum_i [ (x_i-b)^2 - 10 cos(2 pi (x_i-b)) + 10 ] + c

    The 1/d normalization keeps the per-coordinate curvature bound at
    (2 + 40 pi^2)/d, which is the tightest constant the definition allows
    (cos attains 1 at the minimizer itself).  ``c`` must be positive so that
    the minimum value is positive.
    """
    if not (isinstance(d, (int, np.integer)) and d >= 1):
        raise InvalidParameterError(f"d must be a positive integer, got {d}")
    if not (c > 0 and math.isfinite(c)):
        raise InvalidParameterError(f"c must be positive so min f > 0, got {c}")
    d = int(d)
    return ObjectiveSpec(
        name="rastrigin",
        dim=d,
        eval=partial(_rastrigin_eval, b=float(b), c=float(c), d=d),
        grad=partial(_rastrigin_grad, b=float(b), d=d),
        hess=partial(_rastrigin_hess, b=float(b), d=d),
        f_min=float(c),
        f_lower_bound=float(c),
        argmin=np.full(d, float(b)),
        hessian_c0=(2.0 + 40.0 * np.pi**2) / d,
        hessian_c1=0.0,
        params={"d": d, "b": float(b), "c": float(c)},
    )


def _quadratic_eval(x: np.ndarray, center: np.ndarray, scale: float, offset: float) -> np.ndarray:
    z = np.asarray(x, dtype=float) - center
    return scale * np.sum(z * z, axis=-1) + offset


def _quadratic_grad(x: np.ndarray, center: np.ndarray, scale: float) -> np.ndarray:
    return 2.0 * scale * (np.asarray(x, dtype=float) - center)


def _quadratic_hess(x: np.ndarray, scale: float, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (d,), dtype=float)
    idx = np.arange(d)
    out[..., idx, idx] = 2.0 * scale
    return out


def shifted_quadratic(d: int, center, scale: float = 1.0, offset: float = 1.0) -> ObjectiveSpec:
    """Convex bowl scale*|x-center|^2 + offset; the canonical smooth test case."""
    if not (isinstance(d, (int, np.integer)) and d >= 1):
        raise InvalidParameterError(f"d must be a positive integer, got {d}")
    if not (scale > 0 and math.isfinite(scale)):
        raise InvalidParameterError(f"scale must be positive, got {scale}")
    if not (offset > 0 and math.isfinite(offset)):
        raise InvalidParameterError(f"offset must be positive, got {offset}")
    d = int(d)
    center = np.broadcast_to(np.asarray(center, dtype=float), (d,)).copy()
    return ObjectiveSpec(
        name="shifted_quadratic",
        dim=d,
        eval=partial(_quadratic_eval, center=center, scale=float(scale), offset=float(offset)),
        grad=partial(_quadratic_grad, center=center, scale=float(scale)),
        hess=partial(_quadratic_hess, scale=float(scale), d=d),
        f_min=float(offset),
        f_lower_bound=float(offset),
        argmin=center,
        hessian_c0=2.0 * float(scale),
        hessian_c1=0.0,
        params={"d": d, "center": center.tolist(), "scale": float(scale), "offset": float(offset)},
    )


_BUILDERS = {
    "rastrigin": lambda p: rastrigin(int(p["d"]), float(p.get("b", 0.0)), float(p.get("c", 1.0))),
    "shifted_quadratic": lambda p: shifted_quadratic(
        int(p["d"]),
        p.get("center", 0.0),
        float(p.get("scale", 1.0)),
        float(p.get("offset", 1.0)),
    ),
}


def by_name(name: str, params: dict) -> ObjectiveSpec:
    """Build a named benchmark from config-file parameters."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise UnsupportedObjectiveError(
            f"unknown objective {name!r}; choose from {sorted(_BUILDERS)}"
        ) from None
    return builder(params)


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the structural checks behind the convergence guarantees."""

    lipschitz_estimate: float
    hessian_ok: bool
    worst_eigenvalue: float
    alpha_ge_c1: bool
    n_points: int


def _tensor_grid(box, n_grid: int, d: int) -> np.ndarray:
    low = np.broadcast_to(np.asarray(box[0], dtype=float), (d,))
    high = np.broadcast_to(np.asarray(box[1], dtype=float), (d,))
    if not np.all(high > low):
        raise InvalidParameterError("box must satisfy high > low per axis")
    axes = [np.linspace(low[i], high[i], n_grid) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _fd_hessian(spec: ObjectiveSpec, pts: np.ndarray, step: float = 1e-5) -> np.ndarray:
    # central differences of the gradient, symmetrized
    d = spec.dim
    out = np.empty(pts.shape[:-1] + (d, d), dtype=float)
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        gp = np.asarray(spec.grad(pts + e), dtype=float)
        gm = np.asarray(spec.grad(pts - e), dtype=float)
        out[..., :, j] = (gp - gm) / (2.0 * step)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def check_assumptions(
    spec: ObjectiveSpec,
    alpha: float,
    box,
    n_grid: int = 33,
    tol: float = -1e-8,
) -> AssumptionReport:
    """Check the structural assumptions of the theory on a tensor grid.

    Verifies that ``c0*I + c1*grad grad^T - hess`` is positive semidefinite
    (smallest eigenvalue >= ``tol``, a tolerance absorbing floating-point
    noise) at every grid point, and reports the grid estimate of the Gibbs
    weight's Lipschitz constant.  The drift-vs-curvature side condition
    alpha >= c1 is reported as a flag, not enforced: it is only needed by the
    minimizer-quality guarantee, not by consensus formation.
    """
    if spec.grad is None:
        raise UnsupportedObjectiveError(f"objective {spec.name!r} has no gradient")
    if spec.hessian_c0 is None or spec.hessian_c1 is None:
        raise UnsupportedObjectiveError(
            f"objective {spec.name!r} declares no curvature constants (c0, c1)"
        )
    pts = _tensor_grid(box, n_grid, spec.dim)
    if spec.hess is not None:
        H = np.asarray(spec.hess(pts), dtype=float)
    else:
        H = _fd_hessian(spec, pts)
    g = np.asarray(spec.grad(pts), dtype=float)
    dom = (
        spec.hessian_c0 * np.eye(spec.dim)
        + spec.hessian_c1 * g[..., :, None] * g[..., None, :]
        - H
    )
    worst = float(np.min(np.linalg.eigvalsh(dom)))
    lip = theory.lipschitz_estimate(spec, alpha, box, n_grid)
    return AssumptionReport(
        lipschitz_estimate=lip,
        hessian_ok=bool(worst >= tol),
        worst_eigenvalue=worst,
        alpha_ge_c1=bool(alpha >= spec.hessian_c1),
        n_points=pts.shape[0],
    )
