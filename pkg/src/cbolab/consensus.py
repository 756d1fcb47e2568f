"""Numerically stable weighted consensus points.

The consensus point of an ensemble is the average of positions weighted by

    psi(x) = exp(-alpha * f(x)) + h(alpha)

i.e. a Gibbs weight with a strictly positive floor.  Without care this is a
0/0 at double precision: for sharp alpha both the Gibbs mass and an
exponentially small floor underflow.  All ratios here factor out a shared
exponent first, so the result is exact up to rounding whenever it is
representable at all.

The floor makes the consensus point an interpolation

    m_h = beta * m_0 + (1 - beta) * mean,      beta = sum(omega) / sum(psi)

between the floorless Gibbs consensus m_0 and the plain average; ``beta``
is the natural diagnostic for which regime a run is in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import InvalidInputError
from .theory import RegularizerSchedule

if TYPE_CHECKING:  # pragma: no cover
    from .objectives import ObjectiveSpec

__all__ = ["WeightedConsensus", "weighted_mean", "weighted_mean_measure"]


@dataclass(frozen=True)
class WeightedConsensus:
    """Consensus point plus its interpolation decomposition.

    ``m_0`` is None when the entire Gibbs mass underflows to zero in double
    precision; downstream code must branch explicitly rather than propagate
    NaNs.  In that regime ``m_h`` coincides with ``mean`` up to rounding and
    ``beta`` rounds to 0.0.
    """

    m_h: np.ndarray
    mean: np.ndarray
    beta: float
    m_0: Optional[np.ndarray] = None


def _as_ensemble(positions, f) -> np.ndarray:
    """Coerce to shape (n, d); a 1-d array is n scalar particles, not one point."""
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        positions = positions[:, None]
    if positions.ndim != 2 or positions.shape[0] == 0:
        raise InvalidInputError(
            f"positions must be a nonempty (n, d) array, got shape {positions.shape}"
        )
    dim = getattr(f, "dim", None)
    if dim is not None and positions.shape[1] != dim:
        raise InvalidInputError(
            f"positions have d={positions.shape[1]} but objective expects d={dim}"
        )
    return positions


def _scaled_weights(fx: np.ndarray, alpha: float, h: RegularizerSchedule):
    """Gibbs and floor weights with a common factor exp(-s) removed.

    s = min(alpha * min f, -log h) guarantees both scaled terms are <= 1 and
    the larger of the two equals 1, so the sums below neither overflow nor
    collapse to 0/0.
    """
    log_h = h.log_h(alpha)
    s = min(alpha * float(np.min(fx)), -log_h)
    scaled_omega = np.exp(s - alpha * fx)
    scaled_floor = np.exp(s + log_h)
    return scaled_omega, scaled_floor


def _consensus_from_weights(
    positions: np.ndarray,
    scaled_omega: np.ndarray,
    scaled_floor: float,
    base_weights: Optional[np.ndarray] = None,
) -> WeightedConsensus:
    if base_weights is None:
        base_weights = np.ones(positions.shape[0])
    w_omega = base_weights * scaled_omega
    w_psi = w_omega + base_weights * scaled_floor
    total_psi = float(np.sum(w_psi))
    total_omega = float(np.sum(w_omega))
    total_base = float(np.sum(base_weights))
    m_h = (w_psi @ positions) / total_psi
    mean = (base_weights @ positions) / total_base
    beta = total_omega / total_psi
    m_0 = (w_omega @ positions) / total_omega if total_omega > 0.0 else None
    return WeightedConsensus(m_h=m_h, mean=mean, beta=beta, m_0=m_0)


def weighted_mean(
    positions,
    f: "ObjectiveSpec",
    alpha: float,
    h: RegularizerSchedule,
    fx: Optional[np.ndarray] = None,
) -> WeightedConsensus:
    """Floored-Gibbs consensus point of an ensemble of positions.

    Parameters
    ----------
    positions : array_like, shape (n, d)
        Particle positions; at least one particle.
    f : ObjectiveSpec
        Objective whose values weight the average.
    alpha : float
        Gibbs sharpness; alpha = 0 reduces to the plain mean.
    h : RegularizerSchedule
        Weight floor.
    fx : ndarray, optional
        Precomputed f(positions); passed by the integrator which needs the
        values anyway.  Must match positions row-for-row.
    """
    positions = _as_ensemble(positions, f)
    if fx is None:
        fx = np.asarray(f.eval(positions), dtype=float)
    scaled_omega, scaled_floor = _scaled_weights(fx, alpha, h)
    return _consensus_from_weights(positions, scaled_omega, scaled_floor)


def weighted_mean_measure(
    samples,
    sample_weights,
    f: "ObjectiveSpec",
    alpha: float,
    h: RegularizerSchedule,
) -> np.ndarray:
    """Consensus point of a weighted point cloud (an empirical measure).

    Each atom carries a nonnegative base weight; the Gibbs-with-floor weight
    multiplies it.  Uniform base weights reduce to :func:`weighted_mean`.
    Returns only the consensus point.
    """
    samples = _as_ensemble(samples, f)
    w = np.asarray(sample_weights, dtype=float)
    if w.shape != (samples.shape[0],):
        raise InvalidInputError(
            f"need one weight per sample, got {w.shape} for {samples.shape[0]} samples"
        )
    if np.any(w < 0) or not np.sum(w) > 0:
        raise InvalidInputError("sample weights must be nonnegative with positive sum")
    fx = np.asarray(f.eval(samples), dtype=float)
    scaled_omega, scaled_floor = _scaled_weights(fx, alpha, h)
    return _consensus_from_weights(samples, scaled_omega, scaled_floor, base_weights=w).m_h
