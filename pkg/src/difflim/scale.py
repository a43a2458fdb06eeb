"""Tabulated scale functions and the integral conditions built on them.

For a drift ``a_T`` the scale function is normalized so that ``f_T(0) = 0``
and ``f_T'(x) = exp(-2 int_0^x a_T)``.  A :class:`ScaleTable` holds both on a
grid fine enough to resolve the drift's oscillations; the checkers evaluate
the sup and integral functionals of ``f_T'`` that decide whether a scenario
meets the hypotheses of the limit theorems.
"""

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .drift_models import DriftFamily, Scenario, TransformFamily
from .quadrature import cumulative, integrate_intervals

EXP_LIMIT = 700.0


class DomainTooWideError(ValueError):
    pass


class OutOfTableError(ValueError):
    pass


class ClassK1Error(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScaleTable:
    """``f_T`` and ``f_T'`` tabulated on ``[-X, X]``.

    Node values are accurate to ``quad_tol``.  Between nodes ``f_at`` and
    ``fprime_at`` interpolate (cubic Hermite), adding an error of order
    ``step^4``: about 1e-7 relative at the default step for the stiffest
    built-in drifts.
    """

    T: float
    X: float
    grid: np.ndarray
    f: np.ndarray
    fprime: np.ndarray
    drift: np.ndarray
    quad_tol: float

    @property
    def domain(self):
        return (-self.X, self.X)

    @cached_property
    def zero_index(self):
        return int(np.flatnonzero(self.grid == 0.0)[0])

    @cached_property
    def _f_spline(self):
        return CubicHermiteSpline(self.grid, self.f, self.fprime)

    @cached_property
    def _logfp_spline(self):
        return CubicHermiteSpline(self.grid, np.log(self.fprime), -2.0 * self.drift)

    def _check_range(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > self.X * (1 + 1e-12)):
            bad = x[np.abs(x) > self.X].ravel()[0]
            raise OutOfTableError(f"x={bad:g} lies outside the table domain [-{self.X:g}, {self.X:g}]")
        return x

    def f_at(self, x):
        """Scale function off the grid (cubic Hermite on ``f`` and ``f'``)."""
        return self._f_spline(self._check_range(x))

    def fprime_at(self, x):
        """Scale derivative off the grid (cubic Hermite on ``log f'`` and ``-2 a_T``)."""
        return np.exp(self._logfp_spline(self._check_range(x)))

    def inverse(self, y):
        return scale_inverse(self, y)

    def sigma_hat(self, y):
        """Diffusion coefficient ``f'(phi(y))`` of the driftless process ``f_T(xi_T)``."""
        return self.fprime_at(scale_inverse(self, y))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "f", "fprime"])
            for row in zip(self.grid, self.f, self.fprime):
                w.writerow([repr(float(v)) for v in row])


def default_domain(x0, horizon):
    return max(5.0, 3.0 * math.sqrt(horizon) + abs(x0))


def _half_grid(X, step):
    n = max(1, int(math.ceil(X / step)))
    return np.linspace(0.0, X, n + 1)


def build_scale(drift: DriftFamily, T, X, quad_tol=1e-9, user_step=0.01):
    """Tabulate ``f_T`` and ``f_T'`` on ``[-X, X]``.

    The inner integral ``int_0^x a_T`` and the outer integral of ``f_T'`` are
    both computed by adaptive Simpson between grid nodes to absolute
    tolerance ``quad_tol`` over the whole domain.  The grid step does not
    exceed ``min(user_step, feature_scale(T) / 10)``.
    """
    if not X > 0:
        raise ValueError("X must be positive")
    if not quad_tol > 0:
        raise ValueError("quad_tol must be positive")
    T = float(T)
    step = min(user_step, drift.feature_scale(T) / 10.0)
    half = _half_grid(float(X), step)
    if drift.breakpoints is not None:
        bp = np.abs(np.asarray(drift.breakpoints(T), dtype=float))
        half = np.unique(np.concatenate([half, bp[bp < X]]))
    # both halves integrate outward from 0; tolerance split across them
    density = quad_tol / (4.0 * X)

    def a_right(v):
        return drift.eval(T, v)

    def a_left(v):
        return -drift.eval(T, -v)

    A_right = cumulative(a_right, half, density)
    A_left = cumulative(a_left, half, density)  # A(-x) for x in half

    A = np.concatenate([A_left[:0:-1], A_right])
    grid = np.concatenate([-half[:0:-1], half])
    grid[half.size - 1] = 0.0
    bad = np.abs(2.0 * A) > EXP_LIMIT
    if bad.any():
        x_bad = grid[np.flatnonzero(bad)[np.argmin(np.abs(grid[bad]))]]
        raise DomainTooWideError(
            f"exp(-2*int a_T) overflows at x={x_bad:g} (T={T:g}); shrink X below {abs(x_bad):g}"
        )

    def local_A(anchor_nodes, anchor_vals, sign):
        # A at arbitrary points in [0, X] of the half-line, via the left node
        def fn(v):
            j = np.clip(np.searchsorted(anchor_nodes, v, side="right") - 1, 0, anchor_nodes.size - 1)
            inner = a_right if sign > 0 else a_left
            return anchor_vals[j] + integrate_intervals(inner, anchor_nodes[j], v, density)

        return fn

    A_r = local_A(half, A_right, +1)
    A_l = local_A(half, A_left, -1)
    F_right = cumulative(lambda v: np.exp(-2.0 * A_r(v)), half, density)
    F_left = cumulative(lambda v: np.exp(-2.0 * A_l(v)), half, density)
    f = np.concatenate([-F_left[:0:-1], F_right])

    fprime = np.exp(-2.0 * A)
    return ScaleTable(
        T=T,
        X=float(X),
        grid=grid,
        f=f,
        fprime=fprime,
        drift=np.asarray(drift.eval(T, grid), dtype=float) * np.ones_like(grid),
        quad_tol=float(quad_tol),
    )


def scale_inverse(tab: ScaleTable, y):
    """``phi_T(y)``: bisection to the grid cell, then Newton on the Hermite interpolant."""
    y = np.asarray(y, dtype=float)
    lo, hi = tab.f[0], tab.f[-1]
    if np.any((y < lo) | (y > hi)):
        raise OutOfTableError(f"y outside the scale range [{lo:g}, {hi:g}]")
    g, f, fp = tab.grid, tab.f, tab.fprime
    j = np.clip(np.searchsorted(f, y, side="right") - 1, 0, g.size - 2)
    dx = g[j + 1] - g[j]
    s = np.clip((y - f[j]) / (f[j + 1] - f[j]), 0.0, 1.0)
    y0, y1, d0, d1 = f[j], f[j + 1], fp[j] * dx, fp[j + 1] * dx
    for _ in range(6):
        s2, s3 = s * s, s * s * s
        p = (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * d0 + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * d1
        dp = (6 * s2 - 6 * s) * y0 + (3 * s2 - 4 * s + 1) * d0 + (-6 * s2 + 6 * s) * y1 + (3 * s2 - 2 * s) * d1
        s = np.clip(s - (p - y) / dp, 0.0, 1.0)
    return g[j] + s * dx


# --------------------------------------------------------------- integrals


def _density(tab):
    return tab.quad_tol / (2.0 * tab.X)


class _Antiderivative:
    """``x -> int_0^x func`` tabulated on the grid, exact between nodes by quadrature."""

    def __init__(self, tab, func):
        self.tab = tab
        self.func = func
        self.nodes = cumulative(func, tab.grid, _density(tab), anchor=tab.zero_index)

    def __call__(self, x):
        x = self.tab._check_range(x)
        g = self.tab.grid
        j = np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 1)
        out = self.nodes[j] + integrate_intervals(self.func, g[j], x, _density(self.tab))
        return out.reshape(np.shape(x))


def _inner(tab, q):
    """``int_0^x q/f'`` as an antiderivative object."""
    return _Antiderivative(tab, lambda v: q(v) / tab.fprime_at(v))


@dataclass(frozen=True)
class NestedIntegral:
    value: np.ndarray
    inner: np.ndarray
    product: np.ndarray


def nested_integral(tab: ScaleTable, q: Callable, x):
    """``2 int_0^x f'(u) (int_0^u q(v)/f'(v) dv) du`` at ``x``.

    Integration by parts turns the double integral into
    ``2 int_0^x (f(x) - f(v)) q(v)/f'(v) dv``, which needs only single
    integrals.  Also returns the inner integral and the product
    ``f'(x) int_0^x q/f'`` used by the sup-type conditions.
    """
    x = np.asarray(x, dtype=float)
    inner = _inner(tab, q)
    weighted = _Antiderivative(tab, lambda v: tab.f_at(v) * q(v) / tab.fprime_at(v))
    I = inner(x)
    value = 2.0 * (tab.f_at(x) * I - weighted(x))
    return NestedIntegral(value=value, inner=I, product=tab.fprime_at(x) * I)


def _refined_sup(x, vals, func, rel_margin=0.1, max_candidates=64):
    """Max of ``|func|`` given node samples ``vals`` at sorted ``x``.

    Node maxima are polished by bounded Brent searches over the two cells
    around each candidate peak, so the result is not limited by grid
    resolution.
    """
    from scipy.optimize import minimize_scalar

    a = np.abs(vals)
    best = float(a.max())
    if best == 0.0 or x.size < 3:
        return best
    interior = np.flatnonzero((a[1:-1] >= a[:-2]) & (a[1:-1] >= a[2:])) + 1
    cand = interior[a[interior] >= (1.0 - rel_margin) * best]
    cand = cand[np.argsort(-a[cand])][:max_candidates]
    for j in cand:
        res = minimize_scalar(
            lambda v: -abs(float(func(np.array([v]))[0])),
            bounds=(x[j - 1], x[j + 1]),
            method="bounded",
            options={"xatol": 1e-12 * max(1.0, abs(x[j]))},
        )
        best = max(best, -float(res.fun))
    return best


def _window(tab, N):
    if N > tab.X * (1 + 1e-12):
        raise ValueError(f"N={N:g} exceeds the table half-width {tab.X:g}")
    return np.abs(tab.grid) <= N


def check_A3(tab: ScaleTable, q: Callable, N):
    """``sup_{|x|<=N} f'(x) |int_0^x q/f'|``, located on the grid and polished between nodes."""
    inner = _inner(tab, q)
    w = _window(tab, N)
    return _refined_sup(tab.grid[w], tab.fprime[w] * inner.nodes[w], lambda v: tab.fprime_at(v) * inner(v))


def check_A4(tab: ScaleTable, s: Scenario, N):
    """``sup_{|x|<=N} |f'(x) int_0^x g_T/f' - g0(G_T(x)) G_T'(x)|``."""
    if "Thm4" not in s.theorem_tags:
        raise ValueError(f"scenario {s.id} is not tagged Thm4")
    T = tab.T
    inner = _inner(tab, lambda v: s.functional.g_eval(T, v))
    w = _window(tab, N)
    x = tab.grid[w]
    def target(v):
        return s.limit.g0(s.transform.g_value(T, v)) * s.transform.g_d1(T, v)

    return _refined_sup(
        x,
        tab.fprime[w] * inner.nodes[w] - target(x),
        lambda v: tab.fprime_at(v) * inner(v) - target(v),
    )


def _indicator(B):
    intervals = [(float(lo), float(hi)) for lo, hi in B]

    def chi(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        for lo, hi in intervals:
            out[(y >= lo) & (y <= hi)] = 1.0
        return out

    return chi


def check_A2(tab: ScaleTable, transform: TransformFamily, B, x):
    """``int_0^x f'(u) (int_0^u chi_B(G_T(v))/f'(v) dv) du``.

    ``B`` is a finite union of closed intervals given as ``[(lo, hi), ...]``.
    """
    if not B:
        return np.zeros(np.shape(x)) if np.ndim(x) else 0.0
    chi = _indicator(B)
    T = tab.T
    res = nested_integral(tab, lambda v: chi(transform.g_value(T, v)), x)
    out = 0.5 * res.value
    return float(out) if np.ndim(out) == 0 else out


def check_A1(tab: ScaleTable, transform: TransformFamily, N):
    """``sup ((G'a + G''/2)^2 + (G')^2) / (1 + G^2)`` on ``|x| <= N``.

    The constant of the growth condition is not fixed, so the ratio itself
    is reported; it should stay bounded along a T-ladder.
    """
    T = tab.T
    x = tab.grid[_window(tab, N)]
    G = transform.g_value(T, x)
    d1 = transform.g_d1(T, x)
    lhs = (d1 * tab.drift[_window(tab, N)] + 0.5 * transform.g_d2(T, x)) ** 2 + d1**2
    return float(np.max(lhs / (1.0 + G**2)))


def check_growth(transform: TransformFamily, T, N, n=2001):
    """``min |G_T(x)| / (C |x|^alpha)`` on ``0 < |x| <= N``; at least 1 when the growth bound holds."""
    x = np.linspace(-N, N, n)
    x = x[x != 0.0]
    ratio = np.abs(transform.g_value(T, x)) / (transform.growth_c * np.abs(x) ** transform.growth_alpha)
    return float(np.min(ratio))


@dataclass(frozen=True)
class Thm7Conditions:
    """Values of the two homogenization conditions at one ``T``.

    ``cond1`` is the function ``y -> int_0^{phi_T(y)} (f'^2 - sigma0^2(f))/f'``;
    ``cond1_sup`` is its sup over ``y`` in ``f_T([-N, N])``.
    """

    cond1: Callable
    cond1_sup: float
    cond2_sup: float
    cond2_l2: float
    fprime_range: tuple


def check_thm7(tab: ScaleTable, s: Scenario, N, delta=None, C=None):
    """The two necessary and sufficient conditions for the bounded-derivative class.

    ``delta`` and ``C`` bound ``f'`` from below and above; they default to
    the scenario's declared ``k1_bounds``.
    """
    if delta is None or C is None:
        d0, c0 = s.closed_forms.get("k1_bounds", (None, None))
        delta = d0 if delta is None else delta
        C = c0 if C is None else C
    if delta is None or C is None:
        raise ClassK1Error(f"no bounds for f' given and scenario {s.id} declares none")
    fmin, fmax = float(tab.fprime.min()), float(tab.fprime.max())
    slack = 1e-9
    if fmin < delta * (1 - slack) or fmax > C * (1 + slack):
        raise ClassK1Error(f"f' ranges over [{fmin:g}, {fmax:g}], outside [{delta:g}, {C:g}]")

    T = tab.T
    lm = s.limit
    fun = s.functional

    cond1_int = _Antiderivative(
        tab, lambda v: (tab.fprime_at(v) ** 2 - lm.sigma0(tab.f_at(v)) ** 2) / tab.fprime_at(v)
    )

    def cond1(y):
        return cond1_int(scale_inverse(tab, y))

    w = _window(tab, N)
    x = tab.grid[w]
    cond1_sup = _refined_sup(x, cond1_int.nodes[w], cond1_int)

    fx = tab.f[w]
    cond2_sup = float(np.max(np.abs(fun.f_eval(T, x) + fx - lm.f0(fx))))

    def l2_integrand(v):
        fp = tab.fprime_at(v)
        return (fun.g_eval(T, v) - fp * (1.0 + lm.g0(tab.f_at(v)))) ** 2 / fp

    cond2_l2 = float(np.sum(integrate_intervals(l2_integrand, x[:-1], x[1:], _density(tab))))
    return Thm7Conditions(
        cond1=cond1, cond1_sup=cond1_sup, cond2_sup=cond2_sup, cond2_l2=cond2_l2, fprime_range=(fmin, fmax)
    )


def export_checks_csv(rows, path):
    """Write checker results as ``(T, checker, N, value)`` rows sorted by key."""
    rows = sorted(rows, key=lambda r: (float(r[0]), str(r[1]), float(r[2])))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "checker", "N", "value"])
        for T, name, N, value in rows:
            w.writerow([repr(float(T)), name, repr(float(N)), repr(float(value))])
