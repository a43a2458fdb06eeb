"""Empirical laws, two-sample distances and convergence-trend verdicts."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri


@dataclass(frozen=True, eq=False)
class EmpiricalLaw:
    samples: np.ndarray
    n: int

    @classmethod
    def of(cls, values):
        a = np.sort(np.asarray(values, dtype=float).ravel())
        if a.size and not np.all(np.isfinite(a)):
            raise ValueError("samples must be finite")
        return cls(samples=a, n=int(a.size))


def _law(x):
    return x if isinstance(x, EmpiricalLaw) else EmpiricalLaw.of(x)


def ks_two_sample(a, b):
    """Sup distance between the two empirical CDFs."""
    a, b = _law(a), _law(b)
    if a.n == 0 or b.n == 0:
        raise ValueError("both samples must be nonempty")
    pts = np.concatenate([a.samples, b.samples])
    Fa = np.searchsorted(a.samples, pts, side="right") / a.n
    Fb = np.searchsorted(b.samples, pts, side="right") / b.n
    return float(np.max(np.abs(Fa - Fb)))


def wasserstein1(a, b):
    """W1 distance between two empirical laws.

    Equal sizes use the mean absolute difference of order statistics.
    Otherwise the exact ``int |F_a - F_b|`` over the merged jump points is
    returned, which agrees with the former when sizes match.
    """
    a, b = _law(a), _law(b)
    if a.n == 0 or b.n == 0:
        raise ValueError("both samples must be nonempty")
    if a.n == b.n:
        return float(np.mean(np.abs(a.samples - b.samples)))
    pts = np.concatenate([a.samples, b.samples])
    pts.sort()
    Fa = np.searchsorted(a.samples, pts[:-1], side="right") / a.n
    Fb = np.searchsorted(b.samples, pts[:-1], side="right") / b.n
    return float(np.sum(np.abs(Fa - Fb) * np.diff(pts)))


def mean_ci(a, level=0.95):
    """Sample mean and the normal-approximation half-width at ``level``."""
    a = _law(a)
    if a.n == 0:
        raise ValueError("empty sample")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    m = float(np.mean(a.samples))
    if a.n < 2:
        return m, math.inf
    return m, float(ndtri(0.5 + level / 2.0) * stderr(a.samples))


def stderr(values):
    v = np.asarray(values, dtype=float)
    return float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.inf


def _in_sets(z, sets):
    inside = np.zeros(np.shape(z), dtype=bool)
    for lo, hi in sets:
        inside |= (z >= lo) & (z <= hi)
    return inside


def occupation_fraction(path, B, horizon=None):
    """Time ``zeta`` spends in ``B`` up to ``horizon`` (left-point rule).

    ``B`` is a list of closed intervals ``(lo, hi)``.  Works with any path
    carrying ``times`` and ``zeta`` arrays.
    """
    t = np.asarray(path.times)
    z = np.asarray(path.zeta)
    L = t[-1] if horizon is None else horizon
    dt = np.diff(t)
    use = t[:-1] < L - 1e-12
    return float(np.sum(dt[use] * _in_sets(z[:-1][use], B)))


@dataclass(frozen=True)
class TrendVerdict:
    passed: bool
    slope: float
    last: float
    threshold: float
    reasons: tuple


def convergence_trend(values, T_ladder, threshold, slack=0.1, atol=0.0):
    """Check that ``values`` shrink along the ladder and end below ``threshold``.

    A step may increase by at most ``slack`` times the previous value plus
    ``atol``.  The log-log least-squares slope is reported for information.
    """
    v = np.asarray(values, dtype=float)
    T = np.asarray(T_ladder, dtype=float)
    if v.shape != T.shape or v.size == 0:
        raise ValueError("values and T_ladder must have the same nonzero length")
    reasons = []
    for k in range(1, v.size):
        if v[k] > v[k - 1] * (1.0 + slack) + atol:
            reasons.append(f"increase at T={T[k]:g}: {v[k - 1]:.4g} -> {v[k]:.4g}")
    if not v[-1] < threshold:
        reasons.append(f"last value {v[-1]:.4g} not below {threshold:g}")
    slope = math.nan
    if v.size >= 2 and np.all(v > 0):
        slope = float(np.polyfit(np.log(T), np.log(v), 1)[0])
    return TrendVerdict(passed=not reasons, slope=slope, last=float(v[-1]), threshold=float(threshold),
                        reasons=tuple(reasons))
