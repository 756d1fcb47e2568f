"""Closed-form constants and thresholds for weighted-consensus particle dynamics.

The particle system drifts each particle toward the regularized weighted
average m^h of the ensemble, with multiplicative noise proportional to the
distance from m^h.  Every convergence guarantee is governed by a handful of
scalar constants built from (p, q, sigma, alpha) and the weight-floor
schedule h(alpha):

* ``Lambda_alpha = (exp(-alpha*f_min) + h(alpha)) / h(alpha)`` bounds how far
  the weighted average can sit from the plain average, in p-th moment.
* ``particle_threshold``   lambda_p  = (p-1) * Lambda^(2/p) * sigma^2
* ``meanfield_threshold``  bar-lambda_p = (p-1) * (1 + Lambda^(2/p)) * sigma^2
* ``chaos_threshold``      the drift strength above which the finite-ensemble
  empirical measure tracks the mean-field law uniformly in time
* ``kappa_max``            the supremum of exponential rates admissible in the
  concentration (sup-over-time) estimates

Everything here is a pure function of its inputs; nothing touches an RNG or
mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import (
    InvalidParameterError,
    ThresholdNotMetError,
    UnsupportedObjectiveError,
)

if TYPE_CHECKING:  # pragma: no cover - import only for annotations
    from .objectives import ObjectiveSpec

__all__ = [
    "RegularizerSchedule",
    "ThresholdReport",
    "lambda_alpha",
    "particle_threshold",
    "meanfield_threshold",
    "chaos_threshold",
    "kappa_max",
    "noise_threshold",
    "particle_concentration_constant",
    "coupling_concentration_constant",
    "threshold_report",
    "wellprepared_rhs",
    "wellprepared_margin",
    "weighted_energy_floor",
    "lipschitz_estimate",
]

_NOISE_KINDS = ("baseline_scalar", "common_direction", "anisotropic_hadamard", "isotropic")


@dataclass(frozen=True)
class RegularizerSchedule:
    """Strictly positive floor h(alpha) added to the Gibbs weight exp(-alpha*f).

    Two kinds are supported:

    ``constant``   h(alpha) = eta
    ``exp_floor``  h(alpha) = eta * exp(-alpha * f_lo)

    where ``f_lo`` is a lower-bound estimate of the objective.  With
    ``f_lo <= min f`` the ratio exp(-alpha*min f)/h(alpha) stays bounded in
    alpha, which is what keeps ``Lambda_alpha`` bounded (at most 1 + 1/eta).

    The floor can underflow to 0.0 in double precision for large
    ``alpha*f_lo``; use :meth:`log_h` wherever the magnitude matters.
    """

    kind: str
    eta: float
    f_lo: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "exp_floor"):
            raise InvalidParameterError(f"unknown schedule kind {self.kind!r}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise InvalidParameterError(f"eta must be positive, got {self.eta}")
        if not math.isfinite(self.f_lo):
            raise InvalidParameterError("f_lo must be finite")

    def log_h(self, alpha: float) -> float:
        """log h(alpha), exact even when h itself underflows."""
        if self.kind == "constant":
            return math.log(self.eta)
        return math.log(self.eta) - alpha * self.f_lo

    def h(self, alpha: float) -> float:
        return math.exp(self.log_h(alpha))


def _check_p(p: float) -> None:
    if not (p >= 2 and math.isfinite(p)):
        raise InvalidParameterError(f"moment order p must satisfy p >= 2, got {p}")


def _check_sigma(sigma: float) -> None:
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise InvalidParameterError(f"sigma must be >= 0, got {sigma}")


def _check_lam_alpha(lam_alpha: float) -> None:
    if not lam_alpha >= 1:
        raise InvalidParameterError(f"Lambda_alpha must be >= 1, got {lam_alpha}")


def lambda_alpha(f_min: float, h: RegularizerSchedule, alpha: float) -> float:
    """Weight-ratio constant Lambda_alpha = (exp(-alpha*f_min) + h(alpha)) / h(alpha).

    ``f_min`` is the (positive) minimum value of the objective.  Computed as
    ``1 + exp(-alpha*f_min - log h(alpha))`` so that an underflowing floor
    does not poison the ratio.
    """
    if not (f_min > 0 and math.isfinite(f_min)):
        raise InvalidParameterError(f"f_min must be positive, got {f_min}")
    if not (alpha > 0 and math.isfinite(alpha)):
        raise InvalidParameterError(f"alpha must be positive, got {alpha}")
    return 1.0 + math.exp(-alpha * f_min - h.log_h(alpha))


def particle_threshold(p: float, sigma: float, lam_alpha: float) -> float:
    """Consensus threshold lambda_p = (p-1) * Lambda^(2/p) * sigma^2.

    Drift strengths above this make pairwise p-th moments of the particle
    system contract exponentially.
    """
    _check_p(p)
    _check_sigma(sigma)
    _check_lam_alpha(lam_alpha)
    return (p - 1.0) * lam_alpha ** (2.0 / p) * sigma * sigma


def meanfield_threshold(p: float, sigma: float, lam_alpha: float) -> float:
    """Mean-field consensus threshold bar-lambda_p = (p-1) * (1 + Lambda^(2/p)) * sigma^2.

    Built as ``particle_threshold + (p-1)*sigma^2`` so that difference is
    exact in floating point; the expanded product form is checked against
    this one in the test suite.
    """
    _check_p(p)
    _check_sigma(sigma)
    _check_lam_alpha(lam_alpha)
    return particle_threshold(p, sigma, lam_alpha) + (p - 1.0) * sigma * sigma


def particle_concentration_constant(p: float, sigma: float, lam_alpha: float) -> float:
    """c_con,p = 2 * Lambda^(1-2/p) * lambda_p + 2(p-1) sigma^2.

    Prefactor rate appearing in the sup-over-time tail bound for the spread
    V_p of the finite ensemble.
    """
    lam_p = particle_threshold(p, sigma, lam_alpha)
    return 2.0 * lam_alpha ** (1.0 - 2.0 / p) * lam_p + 2.0 * (p - 1.0) * sigma * sigma


def coupling_concentration_constant(p: float, sigma: float, lam_alpha: float) -> float:
    """bar-c_con,p = 2 * bar-lambda_p + 4(p-1) sigma^2.

    Counterpart of :func:`particle_concentration_constant` for the
    synchronously coupled mean-field copies.
    """
    bar_p = meanfield_threshold(p, sigma, lam_alpha)
    return 2.0 * bar_p + 4.0 * (p - 1.0) * sigma * sigma


def chaos_threshold(p: float, q: float, sigma: float, lam_alpha: float) -> float:
    """Drift strength above which uniform-in-time propagation of chaos holds.

    Maximum of two branch constants::

        b1 = (pq-1)(1 + Lambda^(2/pq)) sigma^2 + 2(p-1)(3 + Lambda^(2/p)) sigma^2
        b2 = (pq-1) Lambda^(2/pq) sigma^2      + 2(p-1)(1 + Lambda) sigma^2

    Algebraically ``b1 = meanfield_threshold(pq) + coupling_concentration_constant(p)``
    and ``b2 = particle_threshold(pq) + particle_concentration_constant(p)``.
    Both constructions are evaluated and must agree to relative 1e-12; a
    mismatch means the constants drifted apart and is a hard internal error.
    """
    _check_p(p)
    if not (q > 2 and math.isfinite(q)):
        raise InvalidParameterError(f"moment order q must satisfy q > 2, got {q}")
    _check_sigma(sigma)
    _check_lam_alpha(lam_alpha)
    pq = p * q
    s2 = sigma * sigma
    b1 = (pq - 1.0) * (1.0 + lam_alpha ** (2.0 / pq)) * s2 \
        + 2.0 * (p - 1.0) * (3.0 + lam_alpha ** (2.0 / p)) * s2
    b2 = (pq - 1.0) * lam_alpha ** (2.0 / pq) * s2 \
        + 2.0 * (p - 1.0) * (1.0 + lam_alpha) * s2
    direct = max(b1, b2)
    via_constants = max(
        meanfield_threshold(pq, sigma, lam_alpha)
        + coupling_concentration_constant(p, sigma, lam_alpha),
        particle_threshold(pq, sigma, lam_alpha)
        + particle_concentration_constant(p, sigma, lam_alpha),
    )
    if abs(direct - via_constants) > 1e-12 * max(1.0, abs(direct)):
        raise AssertionError(
            f"chaos threshold constructions disagree: {direct!r} vs {via_constants!r}"
        )
    return direct


def kappa_max(p: float, q: float, sigma: float, lam_alpha: float, lam: float) -> float:
    """Supremum of exponential rates kappa admissible in the concentration bounds.

    ``p * min(lam - max(bar-c_con,p, bar-lambda_pq), lam - max(c_con,p, lambda_pq))``,
    positive exactly when ``lam`` exceeds :func:`chaos_threshold`.

    Raises
    ------
    ThresholdNotMetError
        When ``lam <= chaos_threshold``; carries the deficit.
    """
    thresh = chaos_threshold(p, q, sigma, lam_alpha)
    if not lam > thresh:
        raise ThresholdNotMetError(
            f"lam = {lam} does not exceed the chaos threshold {thresh}",
            deficit=thresh - lam,
        )
    pq = p * q
    bar_branch = lam - max(
        coupling_concentration_constant(p, sigma, lam_alpha),
        meanfield_threshold(pq, sigma, lam_alpha),
    )
    branch = lam - max(
        particle_concentration_constant(p, sigma, lam_alpha),
        particle_threshold(pq, sigma, lam_alpha),
    )
    return p * min(bar_branch, branch)


def noise_threshold(kind: str, d: int, p: float, sigma: float, lam_alpha: float) -> float:
    """Consensus threshold for one of the four noise couplings.

    ``baseline_scalar`` (one scalar Wiener scaling the whole displacement)
    and ``anisotropic_hadamard`` (componentwise Wiener) share the dimension-
    free threshold lambda_p.  ``common_direction`` (scalar Wiener pushed
    along the all-ones direction with magnitude |X - m|) pays a factor d;
    ``isotropic`` (|X - m| times a d-dimensional Wiener) pays an additive
    (d-1) Lambda^(2/p) sigma^2.
    """
    if kind not in _NOISE_KINDS:
        raise InvalidParameterError(f"unknown noise kind {kind!r}")
    if not (isinstance(d, (int, np.integer)) and d >= 1):
        raise InvalidParameterError(f"dimension d must be a positive integer, got {d}")
    lam_p = particle_threshold(p, sigma, lam_alpha)
    if kind == "common_direction":
        return d * lam_p
    if kind == "isotropic":
        return lam_p + (d - 1.0) * lam_alpha ** (2.0 / p) * sigma * sigma
    return lam_p


@dataclass(frozen=True)
class ThresholdReport:
    """Every named threshold for one parameter set, plus satisfaction flags.

    ``kappa_max`` is None when the chaos threshold is not met (the standalone
    :func:`kappa_max` raises in that case; the report is diagnostic and lists
    all violations at once instead).
    """

    lam: float
    p: float
    q: float
    sigma: float
    alpha: float
    lambda_alpha: float
    particle_threshold: float
    meanfield_threshold: float
    chaos_threshold: float
    kappa_max: Optional[float]
    satisfied: dict

    def violations(self) -> list:
        return sorted(name for name, ok in self.satisfied.items() if not ok)

    def to_dict(self) -> dict:
        return {
            "lam": self.lam,
            "p": self.p,
            "q": self.q,
            "sigma": self.sigma,
            "alpha": self.alpha,
            "lambda_alpha": self.lambda_alpha,
            "particle_threshold": self.particle_threshold,
            "meanfield_threshold": self.meanfield_threshold,
            "chaos_threshold": self.chaos_threshold,
            "kappa_max": self.kappa_max,
            "satisfied": dict(self.satisfied),
        }


def threshold_report(
    p: float,
    q: float,
    sigma: float,
    alpha: float,
    f_min: float,
    h: RegularizerSchedule,
    lam: float,
) -> ThresholdReport:
    """Evaluate every threshold at moment order ``p`` (and ``q`` for chaos)."""
    lam_a = lambda_alpha(f_min, h, alpha)
    part = particle_threshold(p, sigma, lam_a)
    mf = meanfield_threshold(p, sigma, lam_a)
    chaos = chaos_threshold(p, q, sigma, lam_a)
    if lam > chaos:
        kmax: Optional[float] = kappa_max(p, q, sigma, lam_a, lam)
    else:
        kmax = None
    return ThresholdReport(
        lam=lam,
        p=p,
        q=q,
        sigma=sigma,
        alpha=alpha,
        lambda_alpha=lam_a,
        particle_threshold=part,
        meanfield_threshold=mf,
        chaos_threshold=chaos,
        kappa_max=kmax,
        satisfied={
            "particle": lam > part,
            "meanfield": lam > mf,
            "chaos": lam > chaos,
        },
    )


def wellprepared_rhs(
    var_in: float,
    *,
    lam: float,
    sigma: float,
    alpha: float,
    f_min: float,
    h: RegularizerSchedule,
    L_omega: float,
    c0: float,
) -> float:
    """Right-hand side of the well-prepared initial-data inequality.

    ``lam*L_omega*sqrt(2*Lambda*Var) / (lam - lambda_2)
    + alpha*sigma^2*c0*Lambda*exp(-alpha*f_min)*Var / (2*(lam - lambda_2))``

    This is the t -> infinity loss of Gibbs mass that the drift can be
    charged with; initial data are well prepared when the initial Gibbs mass
    exceeds it with margin.
    """
    if var_in < 0:
        raise InvalidParameterError(f"var_in must be >= 0, got {var_in}")
    lam_a = lambda_alpha(f_min, h, alpha)
    lam2 = particle_threshold(2.0, sigma, lam_a)
    if not lam > lam2:
        raise ThresholdNotMetError(
            f"lam = {lam} does not exceed the consensus threshold {lam2}",
            deficit=lam2 - lam,
        )
    gap = lam - lam2
    drift_term = lam * L_omega * math.sqrt(2.0 * lam_a * var_in) / gap
    noise_term = (
        alpha * sigma * sigma * c0 * lam_a * math.exp(-alpha * f_min) * var_in
        / (2.0 * gap)
    )
    return drift_term + noise_term


def wellprepared_margin(
    e_omega_in: float,
    var_in: float,
    *,
    lam: float,
    sigma: float,
    alpha: float,
    f_min: float,
    h: RegularizerSchedule,
    L_omega: float,
    c0: float,
) -> Optional[float]:
    """Largest epsilon in (0, 1] such that (1-epsilon)*E_omega_in >= RHS.

    Returns None when no such epsilon exists (the initial Gibbs mass
    ``e_omega_in`` does not exceed the RHS), including the boundary case of
    exact equality.  ``var_in = 0`` gives RHS = 0 and epsilon = 1.
    """
    if not e_omega_in > 0:
        raise InvalidParameterError(
            f"e_omega_in must be positive (it is a mean of positive weights), got {e_omega_in}"
        )
    rhs = wellprepared_rhs(
        var_in,
        lam=lam,
        sigma=sigma,
        alpha=alpha,
        f_min=f_min,
        h=h,
        L_omega=L_omega,
        c0=c0,
    )
    eps = 1.0 - rhs / e_omega_in
    if eps <= 0.0:
        return None
    return eps


def weighted_energy_floor(
    t,
    e_omega_in: float,
    var_in: float,
    *,
    lam: float,
    sigma: float,
    alpha: float,
    f_min: float,
    h: RegularizerSchedule,
    L_omega: float,
    c0: float,
):
    """Integrated lower envelope for the ensemble-average Gibbs weight at time t.

    mean_i E exp(-alpha*f(X_t^i)) is bounded below by the initial mass minus
    the accumulated drift and noise losses::

        E_in - lam*L_omega*sqrt(2*Lambda*Var) * (1 - e^{-g t}) / g
             - alpha*sigma^2*c0*exp(-alpha*f_min)*Lambda*Var * (1 - e^{-2 g t}) / (2 g)

    with ``g = lam - lambda_2``.  As t -> infinity the deduction converges to
    :func:`wellprepared_rhs`.  ``t`` may be a scalar or array.
    """
    lam_a = lambda_alpha(f_min, h, alpha)
    lam2 = particle_threshold(2.0, sigma, lam_a)
    if not lam > lam2:
        raise ThresholdNotMetError(
            f"lam = {lam} does not exceed the consensus threshold {lam2}",
            deficit=lam2 - lam,
        )
    gap = lam - lam2
    t = np.asarray(t, dtype=float)
    drift_loss = lam * L_omega * math.sqrt(2.0 * lam_a * var_in) * (1.0 - np.exp(-gap * t)) / gap
    noise_loss = (
        alpha * sigma * sigma * c0 * math.exp(-alpha * f_min) * lam_a * var_in
        * (1.0 - np.exp(-2.0 * gap * t)) / (2.0 * gap)
    )
    return e_omega_in - drift_loss - noise_loss


def lipschitz_estimate(f: "ObjectiveSpec", alpha: float, box, n_grid: int) -> float:
    """Grid estimate of the Lipschitz constant of the Gibbs weight exp(-alpha*f).

    Evaluates ``|grad f(x)| * exp(-alpha*f(x))`` on a deterministic tensor
    grid over ``box`` and returns alpha times the maximum.  ``box`` is one
    (low, high) pair applied to every axis, or a sequence of per-axis pairs.
    The estimate is a lower bound on the true supremum and improves
    monotonically as the grid covers more points.
    """
    if getattr(f, "grad", None) is None:
        raise UnsupportedObjectiveError(
            f"objective {getattr(f, 'name', f)!r} has no gradient"
        )
    if not (alpha > 0 and math.isfinite(alpha)):
        raise InvalidParameterError(f"alpha must be positive, got {alpha}")
    if not (isinstance(n_grid, (int, np.integer)) and n_grid >= 2):
        raise InvalidParameterError(f"n_grid must be an integer >= 2, got {n_grid}")
    d = int(f.dim)
    pairs = np.asarray(box, dtype=float)
    if pairs.shape == (2,):
        pairs = np.broadcast_to(pairs, (d, 2))
    if pairs.shape != (d, 2):
        raise InvalidParameterError(
            f"box must be one (low, high) pair or {d} of them, got shape {pairs.shape}"
        )
    low, high = pairs[:, 0], pairs[:, 1]
    if not np.all(high > low):
        raise InvalidParameterError("box must be nondegenerate with high > low per axis")
    if n_grid**d > 2**22:
        raise InvalidParameterError(
            f"tensor grid with {n_grid}^{d} points is too large; reduce n_grid"
        )
    axes = [np.linspace(low[i], high[i], n_grid) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    g = np.asarray(f.grad(pts), dtype=float)
    fx = np.asarray(f.eval(pts), dtype=float)
    mag = np.sqrt(np.sum(g * g, axis=-1)) * np.exp(-alpha * fx)
    return float(alpha * np.max(mag))
