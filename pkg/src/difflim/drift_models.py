"""Coefficient families of the SDE ``dxi = a_T(xi) dt + dW`` and a scenario registry.

Every family evaluator is a pure function ``(T, x) -> value`` vectorized over
``x``.  A :class:`Scenario` bundles a drift, a transform ``G_T``, a functional
pair ``(g_T, F_T)`` and the coefficients of the predicted limit diffusion,
together with whatever closed forms are known for it.

>>> s = registry_get("besq(1)")
>>> float(s.drift.eval(100.0, 1.0))
0.9900990099009901
"""

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.special import i0

from .quadrature import integrate_intervals

THEOREM_TAGS = ("Thm2", "Thm3", "Thm4", "Thm5", "Thm6", "Thm7")


class UnknownScenarioError(KeyError):
    pass


@dataclass(frozen=True)
class DriftFamily:
    id: str
    eval: Callable
    drift_bound: Callable
    feature_scale: Callable
    # kinks/jumps of a_T(x) at parameter T; tables put grid nodes there
    breakpoints: Optional[Callable] = None


@dataclass(frozen=True)
class TransformFamily:
    id: str
    g_value: Callable
    g_d1: Callable
    g_d2: Callable
    growth_c: float
    growth_alpha: float
    kinks: tuple = ()


@dataclass(frozen=True)
class FunctionalFamily:
    id: str
    g_eval: Callable
    f_eval: Callable
    local_bound: Callable
    feature_scale: Callable = lambda T: math.inf


@dataclass(frozen=True)
class LimitModel:
    """Coefficients of ``dzeta = a0(zeta) dt + sigma0(zeta) dW``, ``zeta(0) = y0``.

    ``sqrt_diffusion`` marks square-root type diffusions, which are simulated
    with full truncation (coefficients evaluated at ``max(zeta, 0)``).
    """

    a0: Callable
    sigma0: Callable
    y0: float
    g0: Optional[Callable] = None
    f0: Optional[Callable] = None
    sqrt_diffusion: bool = False


@dataclass(frozen=True)
class Scenario:
    id: str
    drift: DriftFamily
    transform: TransformFamily
    functional: FunctionalFamily
    limit: LimitModel
    x0: float
    closed_forms: dict = field(default_factory=dict)
    theorem_tags: frozenset = frozenset()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.theorem_tags) - set(THEOREM_TAGS)
        if unknown:
            raise ValueError(f"unknown theorem tags {sorted(unknown)}")
        missing = []
        for tag in self.theorem_tags:
            if tag in ("Thm3", "Thm4", "Thm5", "Thm6", "Thm7") and self.limit.g0 is None:
                missing.append(f"{tag}: limit.g0")
            if tag in ("Thm6", "Thm7") and self.limit.f0 is None:
                missing.append(f"{tag}: limit.f0")
            if tag == "Thm7" and "k1_bounds" not in self.closed_forms:
                missing.append("Thm7: closed_forms['k1_bounds']")
        if missing:
            raise ValueError(f"scenario {self.id} lacks fields required by its tags: {missing}")


def _scenario_id(name, x0, x0_default=0.0, **params):
    # the start point is shown only when it differs from the factory default
    items = [f"{k}={v:g}" for k, v in params.items()]
    if x0 != x0_default:
        items.append(f"x0={x0:g}")
    return f"{name}({', '.join(items)})" if items else name


def _const(c):
    return lambda *args: np.full(np.shape(args[-1]), float(c))


def _identity_transform():
    return TransformFamily(
        id="identity",
        g_value=lambda T, x: np.asarray(x, dtype=float) * 1.0,
        g_d1=_const(1.0),
        g_d2=_const(0.0),
        growth_c=1.0,
        growth_alpha=1.0,
    )


def _normal_law(y0, sigma=1.0, mean_rate=0.0):
    return {"kind": "normal", "y0": float(y0), "sigma": float(sigma), "mean_rate": float(mean_rate)}


# ---------------------------------------------------------------- scenarios


def besq(c0=1.0, x0=1.0):
    """Drift ``c0*T*x/(1 + x^2 T)`` with ``G_T(x) = x^2``; the limit is BESQ(1 + 2 c0)."""
    c0 = float(c0)
    if not c0 > -0.5:
        raise ValueError(f"besq requires c0 > -1/2, got {c0}")
    delta = 1.0 + 2.0 * c0

    drift = DriftFamily(
        id=f"besq_drift(c0={c0:g})",
        eval=lambda T, x: c0 * T * np.asarray(x, dtype=float) / (1.0 + np.square(x) * T),
        drift_bound=lambda T: abs(c0) * math.sqrt(T) / 2.0,
        feature_scale=lambda T: 1.0 / math.sqrt(T),
    )
    transform = TransformFamily(
        id="square",
        g_value=lambda T, x: np.square(np.asarray(x, dtype=float)),
        g_d1=lambda T, x: 2.0 * np.asarray(x, dtype=float),
        g_d2=_const(2.0),
        growth_c=1.0,
        growth_alpha=2.0,
    )
    functional = FunctionalFamily(
        id="besq_functional",
        g_eval=lambda T, x: 2.0 * np.asarray(x, dtype=float),
        f_eval=lambda T, x: np.square(np.asarray(x, dtype=float)),
        local_bound=lambda T, N: 2.0 * N,
    )
    y0 = x0 * x0
    limit = LimitModel(
        a0=_const(delta),
        sigma0=lambda y: 2.0 * np.sqrt(np.maximum(y, 0.0)),
        y0=y0,
        g0=_const(1.0),
        f0=lambda y: np.asarray(y, dtype=float) * 1.0,
        sqrt_diffusion=True,
    )
    closed = {
        "fprime": lambda T, x: (1.0 + np.square(x) * T) ** (-c0),
        "antiderivative": lambda T, x: 0.5 * c0 * np.log1p(np.square(x) * T),
        "limit_law": {"kind": "besq", "delta": delta, "y0": y0},
    }
    return Scenario(
        id=_scenario_id("besq", x0, x0_default=1.0, c0=c0),
        drift=drift,
        transform=transform,
        functional=functional,
        limit=limit,
        x0=float(x0),
        closed_forms=closed,
        theorem_tags=frozenset({"Thm2", "Thm5", "Thm6"}),
        params={"c0": c0, "x0": float(x0)},
    )


def zero_drift(x0=0.0):
    drift = DriftFamily(
        id="zero",
        eval=_const(0.0),
        drift_bound=lambda T: 0.0,
        feature_scale=lambda T: math.inf,
    )
    functional = FunctionalFamily(
        id="zero_drift_functional",
        g_eval=_const(1.0),
        f_eval=lambda T, x: -np.asarray(x, dtype=float),
        local_bound=lambda T, N: 1.0,
    )
    limit = LimitModel(
        a0=_const(0.0), sigma0=_const(1.0), y0=float(x0), g0=_const(0.0), f0=_const(0.0)
    )
    closed = {
        "fprime": lambda T, x: np.ones(np.shape(x)),
        "scale": lambda T, x: np.asarray(x, dtype=float) * 1.0,
        "antiderivative": lambda T, x: np.zeros(np.shape(x)),
        "limit_law": _normal_law(x0),
        "k1_bounds": (1.0, 1.0),
        # F0 = 0 and g0 = 0
        "functional_limits": {"li": lambda t: 0.0},
    }
    return Scenario(
        id=_scenario_id("zero_drift", x0),
        drift=drift,
        transform=_identity_transform(),
        functional=functional,
        limit=limit,
        x0=float(x0),
        closed_forms=closed,
        theorem_tags=frozenset({"Thm2", "Thm7"}),
        params={"x0": float(x0)},
    )


def constant_drift(a=1.0, x0=0.0):
    a = float(a)
    drift = DriftFamily(
        id=f"constant(a={a:g})",
        eval=_const(a),
        drift_bound=lambda T: abs(a),
        feature_scale=lambda T: math.inf,
    )
    functional = FunctionalFamily(
        id="unit", g_eval=_const(1.0), f_eval=_const(0.0), local_bound=lambda T, N: 1.0
    )
    limit = LimitModel(a0=_const(a), sigma0=_const(1.0), y0=float(x0), g0=_const(1.0), f0=_const(0.0))

    def scale(T, x):
        x = np.asarray(x, dtype=float)
        if a == 0.0:
            return x * 1.0
        return -np.expm1(-2.0 * a * x) / (2.0 * a)

    closed = {
        "fprime": lambda T, x: np.exp(-2.0 * a * np.asarray(x, dtype=float)),
        "scale": scale,
        "antiderivative": lambda T, x: a * np.asarray(x, dtype=float),
        "limit_law": _normal_law(x0, mean_rate=a),
        "functional_limits": {"lbeta1": lambda t: float(t)},
    }
    return Scenario(
        id=_scenario_id("constant_drift", x0, a=a),
        drift=drift,
        transform=_identity_transform(),
        functional=functional,
        limit=limit,
        x0=float(x0),
        closed_forms=closed,
        theorem_tags=frozenset({"Thm2", "Thm3"}),
        params={"a": a, "x0": float(x0)},
    )


def oscillatory_beta1(x0=0.0):
    """Brownian motion with the functional ``g_T(x) = 1 + sin(x sqrt(T))``.

    The time integral of ``g_T`` along the path averages out to ``t``.
    """
    drift = DriftFamily(
        id="zero", eval=_const(0.0), drift_bound=lambda T: 0.0, feature_scale=lambda T: math.inf
    )
    functional = FunctionalFamily(
        id="one_plus_sin",
        g_eval=lambda T, x: 1.0 + np.sin(np.asarray(x, dtype=float) * math.sqrt(T)),
        f_eval=_const(0.0),
        local_bound=lambda T, N: 2.0,
        feature_scale=lambda T: 1.0 / math.sqrt(T),
    )
    limit = LimitModel(
        a0=_const(0.0),
        sigma0=_const(1.0),
        y0=float(x0),
        g0=lambda y: np.asarray(y, dtype=float) * 1.0,
        f0=_const(0.0),
    )
    closed = {
        "fprime": lambda T, x: np.ones(np.shape(x)),
        "scale": lambda T, x: np.asarray(x, dtype=float) * 1.0,
        "limit_law": _normal_law(x0),
        # zeta^2 - y0^2 - 2 int zeta dW = t
        "functional_limits": {"lbeta1_tilde": lambda t: float(t)},
    }
    return Scenario(
        id=_scenario_id("oscillatory_beta1", x0),
        drift=drift,
        transform=_identity_transform(),
        functional=functional,
        limit=limit,
        x0=float(x0),
        closed_forms=closed,
        theorem_tags=frozenset({"Thm2", "Thm4"}),
        params={"x0": float(x0)},
    )


class _PeriodicScale:
    """``u -> int_0^u exp(-2 alpha sin s) ds`` via whole periods plus a tabulated remainder."""

    def __init__(self, alpha, nodes=4097):
        self.alpha = alpha
        self.period_integral = 2.0 * math.pi * float(i0(2.0 * alpha))
        s = np.linspace(0.0, 2.0 * math.pi, nodes)
        dens = self._density
        cells = integrate_intervals(dens, s[:-1], s[1:], 1e-16)
        vals = np.concatenate([[0.0], np.cumsum(cells)])
        self._cell = CubicHermiteSpline(s, vals, dens(s))

    def _density(self, s):
        return np.exp(-2.0 * self.alpha * np.sin(s))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        k = np.floor(u / (2.0 * math.pi))
        r = u - 2.0 * math.pi * k
        return k * self.period_integral + self._cell(r)


def periodic_k1(alpha=0.5, x0=0.0):
    """Drift ``alpha sqrt(T) cos(x sqrt(T))``: a member of the bounded-derivative class.

    The scale derivative ``exp(-2 alpha sin(x sqrt T))`` stays within
    ``[e^{-2 alpha}, e^{2 alpha}]`` and ``f_T(xi_T)`` homogenizes to a
    standard Brownian motion.
    """
    alpha = float(alpha)
    base = _PeriodicScale(alpha)
    mean_fprime = float(i0(2.0 * alpha))

    def a_T(T, x):
        return alpha * math.sqrt(T) * np.cos(np.asarray(x, dtype=float) * math.sqrt(T))

    def fprime(T, x):
        return np.exp(-2.0 * alpha * np.sin(np.asarray(x, dtype=float) * math.sqrt(T)))

    def f_T(T, x):
        rt = math.sqrt(T)
        return base(np.asarray(x, dtype=float) * rt) / rt

    drift = DriftFamily(
        id=f"periodic(alpha={alpha:g})",
        eval=a_T,
        drift_bound=lambda T: abs(alpha) * math.sqrt(T),
        feature_scale=lambda T: 1.0 / math.sqrt(T),
    )
    transform = TransformFamily(
        id="scale_function",
        g_value=f_T,
        g_d1=fprime,
        g_d2=lambda T, x: -2.0 * a_T(T, x) * fprime(T, x),
        growth_c=math.exp(-2.0 * abs(alpha)),
        growth_alpha=1.0,
    )
    functional = FunctionalFamily(
        id="scale_derivative",
        g_eval=fprime,
        f_eval=_const(0.0),
        local_bound=lambda T, N: math.exp(2.0 * abs(alpha)),
        feature_scale=lambda T: 1.0 / math.sqrt(T),
    )
    y0 = mean_fprime * float(x0)
    limit = LimitModel(
        a0=_const(0.0),
        sigma0=_const(1.0),
        y0=y0,
        g0=_const(0.0),
        f0=lambda y: np.asarray(y, dtype=float) * 1.0,
    )
    closed = {
        "fprime": fprime,
        "scale": f_T,
        "antiderivative": lambda T, x: alpha * np.sin(np.asarray(x, dtype=float) * math.sqrt(T)),
        "k1_bounds": (math.exp(-2.0 * abs(alpha)), math.exp(2.0 * abs(alpha))),
        "mean_fprime": mean_fprime,
        "limit_law": _normal_law(y0),
    }
    return Scenario(
        id=_scenario_id("periodic_k1", x0, alpha=alpha),
        drift=drift,
        transform=transform,
        functional=functional,
        limit=limit,
        x0=float(x0),
        closed_forms=closed,
        theorem_tags=frozenset({"Thm2", "Thm7"}),
        params={"alpha": alpha, "x0": float(x0)},
    )


def _default_profile(lam, n=201):
    u = np.linspace(-1.0, 1.0, n)
    vals = 0.75 * (1.0 - u * u)
    mass = np.trapezoid(vals, u)
    return u, lam * vals / mass


def delta_drift(lam=1.0, x0=0.0, profile=None):
    """Drift ``sqrt(T) a(x sqrt(T))`` built from a tabulated compact profile ``a``.

    ``profile`` is a pair ``(u, values)``: a piecewise-linear ``a`` that is
    zero outside ``[u[0], u[-1]]``.  The default is a parabolic bump whose
    integral equals ``lam``.  With ``lam != 0`` the scale function acquires
    different slopes on the two half-lines and ``f_T(xi_T)`` converges to a
    Brownian motion with a diffusion coefficient that jumps at zero.
    """
    if profile is None:
        u, vals = _default_profile(float(lam))
    else:
        u, vals = (np.asarray(p, dtype=float) for p in profile)
        if np.any(np.diff(u) <= 0):
            raise ValueError("profile abscissae must be strictly increasing")
        lam = float(np.trapezoid(vals, u))
    if not np.any(u == 0.0):
        # the antiderivative is anchored at the origin, so it must be a node
        u_new = np.sort(np.append(u, 0.0))
        vals = np.interp(u_new, u, vals, left=0.0, right=0.0)
        u = u_new
    i_zero = int(np.flatnonzero(u == 0.0)[0])

    # exact antiderivative of the piecewise-linear profile, anchored at 0
    cells = 0.5 * (vals[1:] + vals[:-1]) * np.diff(u)
    A_nodes = np.zeros(u.size)
    A_nodes[i_zero + 1:] = np.cumsum(cells[i_zero:])
    A_nodes[:i_zero] = -np.cumsum(cells[:i_zero][::-1])[::-1]

    def profile_eval(w):
        return np.interp(w, u, vals, left=0.0, right=0.0)

    def A1(w):
        w = np.asarray(w, dtype=float)
        wc = np.clip(w, u[0], u[-1])
        j = np.clip(np.searchsorted(u, wc, side="right") - 1, 0, u.size - 2)
        return A_nodes[j] + 0.5 * (wc - u[j]) * (vals[j] + profile_eval(wc))

    c_plus = math.exp(-2.0 * A_nodes[-1])
    c_minus = math.exp(-2.0 * A_nodes[0])

    # base scale function F1(w) = int_0^w exp(-2 A1); tabulated on the support
    fine = np.unique(np.concatenate([np.linspace(u[0], u[-1], 8 * u.size), u]))
    k0 = int(np.searchsorted(fine, 0.0))
    dens = lambda w: np.exp(-2.0 * A1(w))
    fcells = integrate_intervals(dens, fine[:-1], fine[1:], 1e-15)
    F_nodes = np.zeros(fine.size)
    F_nodes[k0 + 1:] = np.cumsum(fcells[k0:])
    F_nodes[:k0] = -np.cumsum(fcells[:k0][::-1])[::-1]
    F_spline = CubicHermiteSpline(fine, F_nodes, dens(fine))

    def F1(w):
        w = np.asarray(w, dtype=float)
        inside = F_spline(np.clip(w, fine[0], fine[-1]))
        return np.where(
            w > fine[-1],
            F_nodes[-1] + c_plus * (w - fine[-1]),
            np.where(w < fine[0], F_nodes[0] + c_minus * (w - fine[0]), inside),
        )

    def a_T(T, x):
        rt = math.sqrt(T)
        return rt * profile_eval(np.asarray(x, dtype=float) * rt)

    def fprime(T, x):
        return np.exp(-2.0 * A1(np.asarray(x, dtype=float) * math.sqrt(T)))

    def f_T(T, x):
        rt = math.sqrt(T)
        return F1(np.asarray(x, dtype=float) * rt) / rt

    amax = float(np.max(np.abs(vals)))
    width = float(u[-1] - u[0])
    fp_min = float(np.exp(-2.0 * A_nodes.max()))
    fp_max = float(np.exp(-2.0 * A_nodes.min()))

    drift = DriftFamily(
        id=f"delta(lam={lam:g})",
        eval=a_T,
        drift_bound=lambda T: amax * math.sqrt(T),
        feature_scale=lambda T: width / math.sqrt(T),
        breakpoints=lambda T: u / math.sqrt(T),
    )
    transform = TransformFamily(
        id="scale_function",
        g_value=f_T,
        g_d1=fprime,
        g_d2=lambda T, x: -2.0 * a_T(T, x) * fprime(T, x),
        growth_c=fp_min,
        growth_alpha=1.0,
    )
    functional = FunctionalFamily(
        id="scale_derivative",
        g_eval=fprime,
        f_eval=_const(0.0),
        local_bound=lambda T, N: fp_max,
        feature_scale=lambda T: width / math.sqrt(T),
    )
    y0 = (c_plus if x0 > 0 else c_minus) * float(x0)
    limit = LimitModel(
        a0=_const(0.0),
        sigma0=lambda y: np.where(np.asarray(y) > 0, c_plus, c_minus),
        y0=y0,
        g0=_const(0.0),
        f0=lambda y: np.asarray(y, dtype=float) * 1.0,
    )
    closed = {
        "fprime": fprime,
        "scale": f_T,
        "antiderivative": lambda T, x: A1(np.asarray(x, dtype=float) * math.sqrt(T)),
        "k1_bounds": (fp_min, fp_max),
        "slopes": (c_minus, c_plus),
    }
    return Scenario(
        id=_scenario_id("delta_drift", x0, lam=lam),
        drift=drift,
        transform=transform,
        functional=functional,
        limit=limit,
        x0=float(x0),
        closed_forms=closed,
        theorem_tags=frozenset({"Thm2", "Thm7"}),
        params={"lam": float(lam), "x0": float(x0)},
    )


# ----------------------------------------------------------------- registry

_REGISTRY = {
    "besq": (besq, ("c0", "x0")),
    "zero_drift": (zero_drift, ("x0",)),
    "constant_drift": (constant_drift, ("a", "x0")),
    "oscillatory_beta1": (oscillatory_beta1, ("x0",)),
    "periodic_k1": (periodic_k1, ("alpha", "x0")),
    "delta_drift": (delta_drift, ("lam", "x0")),
}

_CALL = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*$")


def known_ids():
    return sorted(_REGISTRY)


def parse_scenario_id(text):
    """Split ``"besq(1, x0=0.5)"`` into ``("besq", {"c0": 1.0, "x0": 0.5})``."""
    m = _CALL.match(text)
    if not m:
        raise UnknownScenarioError(f"cannot parse scenario id {text!r}; known ids: {known_ids()}")
    name, argtext = m.group(1), m.group(2)
    if name not in _REGISTRY:
        raise UnknownScenarioError(f"unknown scenario {name!r}; known ids: {known_ids()}")
    names = _REGISTRY[name][1]
    params = {}
    if argtext and argtext.strip():
        for pos, item in enumerate(argtext.split(",")):
            item = item.strip()
            if "=" in item:
                key, val = (s.strip() for s in item.split("=", 1))
            else:
                if pos >= len(names):
                    raise ValueError(f"too many positional parameters for {name}")
                key, val = names[pos], item
            if key not in names:
                raise ValueError(f"{name} has no parameter {key!r}; expected one of {names}")
            params[key] = float(val)
    return name, params


def registry_get(id, **params):
    """Build a registered scenario.

    ``id`` is either a bare name (``"periodic_k1"``) or a call-style string
    (``"besq(1)"``, ``"delta_drift(lam=0.5, x0=0)"``).  Keyword arguments
    override parsed parameters.
    """
    name, parsed = parse_scenario_id(id)
    parsed.update(params)
    factory, _ = _REGISTRY[name]
    return factory(**parsed)


def list_scenarios():
    """Rows ``(id, parameters, theorem tags)`` for every registered scenario at default parameters."""
    rows = []
    for name in known_ids():
        factory, names = _REGISTRY[name]
        s = factory()
        rows.append((name, {k: s.params[k] for k in names if k in s.params}, tuple(sorted(s.theorem_tags))))
    return rows


# ---------------------------------------------------------------- residuals


def _require_tag(s, tag):
    if tag not in s.theorem_tags:
        raise ValueError(f"scenario {s.id} is not tagged {tag}")


def residual_q1(s, T, x):
    """``G' a_T + G''/2 - a0(G)``: the drift mismatch of the transformed process."""
    _require_tag(s, "Thm2")
    tr = s.transform
    G = tr.g_value(T, x)
    return tr.g_d1(T, x) * s.drift.eval(T, x) + 0.5 * tr.g_d2(T, x) - s.limit.a0(G)


def residual_q2(s, T, x):
    """``(G')^2 - sigma0(G)^2``: the diffusion mismatch of the transformed process."""
    _require_tag(s, "Thm2")
    tr = s.transform
    return np.square(tr.g_d1(T, x)) - np.square(s.limit.sigma0(tr.g_value(T, x)))
