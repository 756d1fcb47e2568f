"""Empirical-measure statistics: moments, Wasserstein distances, decay fits,
concentration-event frequencies, and the soft-minimum (Laplace) functional.

The Wasserstein methods are deliberately tiered:

* ``exact_1d``          closed-form quantile coupling, any sizes/weights, d = 1
* ``exact_assignment``  optimal assignment for equal-size uniform clouds,
                        exact for any d but O(n^3), capped at n <= 512
* ``sliced``            Monte-Carlo average of exact_1d over random
                        projections; an *estimator* with a standard error,
                        never used inside pass/fail bound checks
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import InvalidInputError, InvalidParameterError

__all__ = [
    "EmpiricalMeasure",
    "MomentSummary",
    "FitResult",
    "moments",
    "wasserstein_p",
    "decay_fit",
    "concentration_frequency",
    "laplace_value",
]


@dataclass(frozen=True)
class EmpiricalMeasure:
    """A finite point cloud, optionally weighted (uniform when weights is None)."""

    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InvalidInputError(f"points must be a nonempty (n, d) array, got {pts.shape}")
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (pts.shape[0],):
                raise InvalidInputError("weights must be one scalar per point")
            if np.any(w < 0) or abs(float(np.sum(w)) - 1.0) > 1e-12:
                raise InvalidInputError("weights must be nonnegative and sum to 1 (1e-12)")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def weight_vector(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights


@dataclass(frozen=True)
class MomentSummary:
    """mean, centered p-th moment V_p, and absolute p-th moment M_p."""

    mean: np.ndarray
    v_p: float
    m_p: float


def moments(mu: EmpiricalMeasure, p: float = 2.0) -> MomentSummary:
    """Weighted mean, centered p-th moment, and absolute p-th moment of a cloud.

    V_p = sum_i w_i |x_i - mean|^p and M_p = sum_i w_i |x_i|^p with the
    Euclidean norm.
    """
    if not p >= 1:
        raise InvalidParameterError(f"moment order p must be >= 1, got {p}")
    w = mu.weight_vector()
    mean = w @ mu.points
    dev = np.linalg.norm(mu.points - mean, axis=1)
    absn = np.linalg.norm(mu.points, axis=1)
    return MomentSummary(mean=mean, v_p=float(w @ dev**p), m_p=float(w @ absn**p))


def _quantile_coupling_cost(x, wx, y, wy, p: float) -> float:
    """integral |F^{-1} - G^{-1}|^p over [0,1] for 1-d weighted samples."""
    ix = np.argsort(x, kind="stable")
    iy = np.argsort(y, kind="stable")
    x, wx = x[ix], wx[ix]
    y, wy = y[iy], wy[iy]
    cx = np.cumsum(wx)
    cy = np.cumsum(wy)
    # merge the two cdf grids; between consecutive levels both quantile
    # functions are constant
    levels = np.union1d(cx, cy)
    levels = levels[levels <= 1.0 + 1e-12]
    prev = 0.0
    total = 0.0
    xi = yi = 0
    for lv in levels:
        seg = lv - prev
        if seg > 0:
            total += seg * abs(x[xi] - y[yi]) ** p
            prev = lv
        while xi < len(x) - 1 and cx[xi] <= lv + 1e-15:
            xi += 1
        while yi < len(y) - 1 and cy[yi] <= lv + 1e-15:
            yi += 1
    return total


def _w1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    x = mu.points[:, 0]
    y = nu.points[:, 0]
    if mu.weights is None and nu.weights is None and mu.n == nu.n:
        xs = np.sort(x)
        ys = np.sort(y)
        return float(np.mean(np.abs(xs - ys) ** p) ** (1.0 / p))
    return float(
        _quantile_coupling_cost(x, mu.weight_vector(), y, nu.weight_vector(), p)
        ** (1.0 / p)
    )


_ASSIGNMENT_CAP = 512


def _w_assignment(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    if mu.weights is not None or nu.weights is not None:
        raise InvalidInputError("exact_assignment requires uniform weights")
    if mu.n != nu.n:
        raise InvalidInputError(
            f"exact_assignment requires equal counts, got {mu.n} and {nu.n}"
        )
    if mu.n > _ASSIGNMENT_CAP:
        raise InvalidInputError(
            f"exact_assignment capped at n <= {_ASSIGNMENT_CAP}, got {mu.n}; use sliced"
        )
    cost = cdist(mu.points, nu.points) ** p
    rows, cols = linear_sum_assignment(cost)
    return float((cost[rows, cols].mean()) ** (1.0 / p))


def _w_sliced(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    p: float,
    n_projections: int,
    seed: int,
):
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    dirs = rng.standard_normal((n_projections, mu.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = np.empty(n_projections)
    for k in range(n_projections):
        pm = EmpiricalMeasure(mu.points @ dirs[k], mu.weights)
        pn = EmpiricalMeasure(nu.points @ dirs[k], nu.weights)
        vals[k] = _w1d(pm, pn, p)
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n_projections)) if n_projections > 1 else 0.0
    return est, se


def wasserstein_p(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    p: float = 2.0,
    method: str = "exact_assignment",
    *,
    n_projections: int = 128,
    seed: int = 0,
    return_se: bool = False,
):
    """p-Wasserstein distance between two empirical measures.

    ``sliced`` is a projection Monte-Carlo estimator: with ``return_se=True``
    it returns ``(estimate, standard_error)``.  The exact methods return the
    distance as a float (standard error 0 when ``return_se`` is set).
    """
    if not p >= 1:
        raise InvalidParameterError(f"order p must be >= 1, got {p}")
    if mu.dim != nu.dim:
        raise InvalidInputError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if method == "exact_1d":
        if mu.dim != 1:
            raise InvalidInputError("exact_1d requires d = 1")
        out = _w1d(mu, nu, p)
        return (out, 0.0) if return_se else out
    if method == "exact_assignment":
        out = _w_assignment(mu, nu, p)
        return (out, 0.0) if return_se else out
    if method == "sliced":
        est, se = _w_sliced(mu, nu, p, n_projections, seed)
        return (est, se) if return_se else est
    raise InvalidParameterError(f"unknown method {method!r}")


class FitResult(NamedTuple):
    rate: float
    r2: float


def decay_fit(ts: Sequence, t_start: float = 0.0) -> FitResult:
    """Least-squares slope of log(value) against t on the window t >= t_start.

    ``ts`` is a sequence of (t, value) pairs or a pair of arrays.  Values must
    be positive on the window; at least 5 samples are required.  Returns the
    slope (an exponential *rate*, negative for decay) and the r^2 of the fit.
    A constant series fits rate 0 with r^2 defined as 1.
    """
    arr = np.asarray(ts, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == 2 and arr.shape[1] != 2:
        t, v = arr[0], arr[1]
    elif arr.ndim == 2 and arr.shape[1] == 2:
        t, v = arr[:, 0], arr[:, 1]
    else:
        raise InvalidInputError("ts must be (t, value) pairs")
    keep = t >= t_start
    t, v = t[keep], v[keep]
    if t.size < 5:
        raise InvalidInputError(f"need at least 5 samples with t >= {t_start}, got {t.size}")
    if np.any(v <= 0):
        raise InvalidInputError("decay_fit needs positive values on the fit window")
    logv = np.log(v)
    slope, intercept = np.polyfit(t, logv, 1)
    resid = logv - (slope * t + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((logv - logv.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return FitResult(rate=float(slope), r2=float(r2))


def concentration_frequency(
    trials: Sequence,
    p: float,
    kappa: float,
    threshold_a: float,
) -> float:
    """Fraction of trials whose sup_t e^{kappa t} V_p exceeds mean V_p(0) + A.

    ``trials`` is a sequence of recorded trajectories exposing ``t`` and
    ``v_p`` arrays on a shared time grid (as produced by the simulator with
    moment order ``p``).  The sup runs over recorded times only, so the
    recording cadence is part of the experiment definition.
    """
    if len(trials) == 0:
        raise InvalidInputError("no trials supplied")
    for ts in trials:
        got = getattr(ts, "p_moment", p)
        if abs(got - p) > 0:
            raise InvalidInputError(f"trial recorded V_p for p={got}, expected p={p}")
    v0 = np.array([ts.v_p[0] for ts in trials])
    mean_init = float(v0.mean())
    hits = 0
    for ts in trials:
        sup = float(np.max(np.exp(kappa * ts.t) * ts.v_p))
        if sup >= mean_init + threshold_a:
            hits += 1
    return hits / len(trials)


def laplace_value(samples, f, alpha: float) -> float:
    """Soft minimum -(1/alpha) * log mean_k exp(-alpha f(x_k)) of f over a cloud.

    Exponent-shifted, so sharp alpha cannot underflow the whole sum.  Always
    lies in [min_k f, min_k f + log(n)/alpha].
    """
    if not (alpha > 0 and math.isfinite(alpha)):
        raise InvalidParameterError(f"alpha must be positive, got {alpha}")
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] == 0:
        raise InvalidInputError("laplace_value of an empty cloud is undefined")
    fx = np.asarray(f.eval(samples), dtype=float)
    n = fx.size
    return float(-(logsumexp(-alpha * fx) - math.log(n)) / alpha)
