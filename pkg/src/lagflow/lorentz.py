"""Rearrangement-based Lorentz norms and interpolation inequality checks.

Lorentz norms use the prefactor-free convention

    ||f||_{p,q}^q = int_0^inf r^(q-1) meas(|f| > r)^(q/p) dr

evaluated exactly on the empirical (piecewise-constant) node distribution:
the integral reduces to a closed-form sum over the sorted levels, with no
binning error.  For q = inf the norm is sup_r r * meas(|f| > r)^(1/p),
attained at one of the n^3 distinct levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import SpectralVectorField, fourier_lebesgue_norm, gradient, l2_norm, sobolev_norm, _wavenumbers, _k_arrays


@dataclass
class InequalityReport:
    name: str
    lhs: float
    rhs: float
    ratio: float
    passed: bool
    details: dict = field(default_factory=dict)


def _report(name: str, lhs: float, rhs: float, tol: float = 1e-9, **details) -> InequalityReport:
    if lhs == 0.0 and rhs == 0.0:
        return InequalityReport(name, 0.0, 0.0, 0.0, True, details)
    ratio = lhs / rhs if rhs > 0 else math.inf
    return InequalityReport(name, lhs, rhs, ratio, ratio <= 1.0 + tol, details)


@dataclass
class EmpiricalDistribution:
    """Descending node magnitudes of a grid function, with the cell volume."""

    sorted_magnitudes: np.ndarray
    cell_volume: float

    @classmethod
    def from_values(cls, values: np.ndarray, cell_volume: float) -> "EmpiricalDistribution":
        mags = np.sort(np.abs(np.asarray(values, dtype=np.float64).ravel()))[::-1]
        return cls(mags, cell_volume)

    def measure_above(self, r: float) -> float:
        """Box measure of the superlevel set {|f| > r}."""
        return float(np.count_nonzero(self.sorted_magnitudes > r)) * self.cell_volume


def lorentz_norm(values, p: float, q: float, cell_volume: float | None = None) -> float:
    """Lorentz L^{p,q} quasi-norm of a grid function.

    `values` is either an EmpiricalDistribution or a node array (then
    cell_volume is required).
    """
    if not (0.0 < p < math.inf):
        raise ValueError(f"p must be finite positive, got {p}")
    if not q > 0.0:
        raise ValueError(f"q must be positive, got {q}")
    if isinstance(values, EmpiricalDistribution):
        dist = values
    else:
        if cell_volume is None:
            raise ValueError("cell_volume required when passing raw values")
        dist = EmpiricalDistribution.from_values(values, cell_volume)
    a = dist.sorted_magnitudes
    nz = int(np.count_nonzero(a))
    if nz == 0:
        return 0.0
    a = a[:nz]
    meas = np.arange(1, nz + 1, dtype=np.float64) * dist.cell_volume
    if math.isinf(q):
        return float(np.max(a * meas ** (1.0 / p)))
    aq = a ** q
    drops = aq - np.append(aq[1:], 0.0)
    total = float(np.sum(meas ** (q / p) * drops)) / q
    return total ** (1.0 / q)


def lp_norm(values: np.ndarray, p: float, cell_volume: float) -> float:
    """Grid L^p norm (p finite) of a scalar node array."""
    v = np.abs(np.asarray(values, dtype=np.float64).ravel())
    return float(np.sum(v ** p) * cell_volume) ** (1.0 / p)


# ---------------------------------------------------------------------------
# interpolation inequalities

def interpolation_constant(p0: float, p1: float, theta: float) -> float:
    """Explicit constant of the weak-to-L^{p_theta,1} interpolation bound."""
    if not p0 < p1:
        raise ValueError(f"need p0 < p1, got {p0} >= {p1}")
    if not (1.0 <= p0 and math.isfinite(p1)):
        raise ValueError("need 1 <= p0 < p1 < inf")
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0,1), got {theta}")
    expo = (p1 / p0) * (1.0 - theta) / theta
    return 2.0 * (p0 / (p1 - p0)) / (1.0 - theta) * expo ** expo


def p_intermediate(p0: float, p1: float, theta: float) -> float:
    return 1.0 / ((1.0 - theta) / p0 + theta / p1)


def check_lorentz_interpolation(values, cell_volume: float, p0: float, p1: float,
                                theta: float) -> InequalityReport:
    """||f||_{p_theta,1} <= C(p0,p1,theta) ||f||_{p0,inf}^(1-theta) ||f||_{p1,inf}^theta."""
    C = interpolation_constant(p0, p1, theta)
    pt = p_intermediate(p0, p1, theta)
    dist = EmpiricalDistribution.from_values(values, cell_volume)
    lhs = lorentz_norm(dist, pt, 1.0)
    weak0 = lorentz_norm(dist, p0, math.inf)
    weak1 = lorentz_norm(dist, p1, math.inf)
    rhs = C * weak0 ** (1.0 - theta) * weak1 ** theta
    return _report("lorentz_interpolation", lhs, rhs,
                   constant=C, p_theta=pt, weak_p0=weak0, weak_p1=weak1)


def check_refined_inequality(F: SpectralVectorField) -> InequalityReport:
    """Raw ratio of ||f||_{3,1} against ||f||_{L2}^(1/2) ||grad f||_{L2}^(1/2).

    The inequality constant is implicit; callers compare the ratio across
    fields and resolutions (fitted-constant protocol), so `passed` only
    certifies finiteness.
    """
    mag = _magnitude(F)
    lhs = lorentz_norm(mag, 3.0, 1.0, F.grid.cell_volume)
    denom = l2_norm(F) ** 0.5 * sobolev_norm(F, 1.0) ** 0.5
    if lhs == 0.0 and denom == 0.0:
        return InequalityReport("refined_l31", 0.0, 0.0, 0.0, True)
    ratio = lhs / denom if denom > 0 else math.inf
    return InequalityReport("refined_l31", lhs, denom, ratio, math.isfinite(ratio))


def _magnitude(F: SpectralVectorField) -> np.ndarray:
    from .fields import to_real
    return to_real(F).magnitude()


def split_weak_lp(values: np.ndarray, p: float, delta: float, q: float,
                  cell_volume: float):
    """Threshold split f = f_small + f_large at delta * ||f||_{p,inf}.

    Returns (f_small, f_large, report); the report carries the exact sup
    bound on f_small and the scaled L^q size of f_large.
    """
    if not q < p:
        raise ValueError(f"need q < p, got q={q}, p={p}")
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    v = np.asarray(values, dtype=np.float64)
    weak = lorentz_norm(v, p, math.inf, cell_volume)
    threshold = delta * weak
    small_mask = np.abs(v) <= threshold
    f_small = np.where(small_mask, v, 0.0)
    f_large = np.where(small_mask, 0.0, v)
    sup_small = float(np.max(np.abs(f_small))) if f_small.size else 0.0
    large_lq = lp_norm(f_large, q, cell_volume)
    scaled = large_lq * delta ** (p / q - 1.0) / weak if weak > 0 else 0.0
    report = {
        "weak_norm": weak,
        "threshold": threshold,
        "sup_small": sup_small,
        "sup_bound_ok": sup_small <= threshold * (1 + 1e-12),
        "large_lq": large_lq,
        "scaled_large_lq": scaled,
    }
    return f_small, f_large, report


def check_agmon(F: SpectralVectorField, s0: float, s1: float) -> InequalityReport:
    """Sup-norm vs Fourier-Lebesgue vs Sobolev interpolation chain.

    theta solves 3/2 = theta*s1 + (1-theta)*s0.  The report's ratio is
    ||f||_{FL1} / (||f||_{Hs0}^(1-theta) ||f||_{Hs1}^theta), a fitted
    constant; details carry the frequency split at the optimal cutoff M.
    """
    d_half = 1.5
    if not (0.0 <= s0 < d_half < s1):
        raise ValueError(f"need 0 <= s0 < 3/2 < s1, got s0={s0}, s1={s1}")
    theta = (d_half - s0) / (s1 - s0)
    ns0 = sobolev_norm(F, s0)
    ns1 = sobolev_norm(F, s1)
    fl1 = fourier_lebesgue_norm(F)
    if fl1 == 0.0:
        return InequalityReport("agmon", 0.0, 0.0, 0.0, True, {"theta": theta})
    denom = ns0 ** (1.0 - theta) * ns1 ** theta
    ratio = fl1 / denom if denom > 0 else math.inf
    M = (ns1 / ns0) ** (1.0 / (s1 - s0)) if ns0 > 0 else math.inf
    _, _, _, k_sq = _k_arrays(F.grid.n, F.grid.box_len)
    kmag = np.sqrt(k_sq)
    coeff_mag = np.sqrt(np.sum(np.abs(F.coeffs) ** 2, axis=0))
    low = float(np.sum(coeff_mag[kmag <= M]))
    high = float(np.sum(coeff_mag[kmag > M]))
    return InequalityReport("agmon", fl1, denom, ratio, math.isfinite(ratio),
                            {"theta": theta, "cutoff_M": M,
                             "low_freq_sum": low, "high_freq_sum": high})
