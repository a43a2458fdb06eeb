"""The limit diffusion ``dzeta = a0(zeta) dt + sigma0(zeta) dW`` and the limit functionals.

Single paths keep every increment, and the functionals are computed from
them after the fact by the ``limit_*`` functions.  Ensembles accumulate the
same left-point sums on the fly.  Where the limit law is known in closed
form (squared Bessel, Gaussian) :func:`sample_limit_law` draws from it
exactly.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .drift_models import LimitModel
from .quadrature import cumulative
from .sde_engine import _NORMAL_CHUNK, EnsembleError, NumericalError, mix64

LIMIT_STATISTICS = ("zeta", "What", "lbeta1", "lbeta1_tilde", "lbeta2", "li0", "li")


@dataclass(frozen=True, eq=False)
class LimitPath:
    times: np.ndarray
    zeta: np.ndarray
    dWhat: np.ndarray
    h: float
    seed: int
    model: LimitModel
    functionals: dict = field(default_factory=dict)

    def __getattr__(self, name):
        # lbeta1, lbeta2, ... when requested at simulation time
        functionals = self.__dict__.get("functionals", {})
        if name in functionals:
            return functionals[name]
        raise AttributeError(name)


def _coef_arg(lm, z):
    return np.maximum(z, 0.0) if lm.sqrt_diffusion else z


def simulate_limit(lm: LimitModel, horizon, h, seed=0, functionals=()):
    """Euler-Maruyama path of the limit equation started at ``lm.y0``.

    ``functionals`` lists any of ``lbeta1, lbeta1_tilde, lbeta2, li0, li``;
    they are built from the model's own ``g0``/``f0``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    n = max(1, int(math.ceil(horizon / h - 1e-9)))
    h = horizon / n
    dW = math.sqrt(h) * np.random.Generator(np.random.PCG64(int(seed))).standard_normal(n)
    z = np.empty(n + 1)
    z[0] = lm.y0
    with np.errstate(all="ignore"):
        for i in range(n):
            # scalar arrays keep the coefficient callables vectorized
            y = _coef_arg(lm, z[i:i + 1])
            z[i + 1] = z[i] + (lm.a0(y)[0] * h + lm.sigma0(y)[0] * dW[i])
    if not np.all(np.isfinite(z)):
        raise NumericalError(f"limit path became non-finite at step {int(np.argmin(np.isfinite(z)))}")
    path = LimitPath(times=np.arange(n + 1) * h, zeta=z, dWhat=dW, h=h, seed=int(seed), model=lm)
    table = {
        "lbeta1": lambda: limit_beta1(path, lm.g0),
        "lbeta1_tilde": lambda: limit_beta1_tilde(path, lm.g0),
        "lbeta2": lambda: limit_beta2(path, lm.g0, lm.a0),
        "li0": lambda: limit_i0(path, lm.f0, lm.g0, lm.sigma0),
        "li": lambda: limit_i_thm7(path, lm.f0, lm.g0),
    }
    for name in functionals:
        if name not in table:
            raise ValueError(f"unknown limit functional {name!r}")
        path.functionals[name] = table[name]()
    return path


def _cumsum0(v):
    return np.concatenate([[0.0], np.cumsum(v)])


def limit_beta1(path: LimitPath, g0):
    """``int_0^t g0(zeta) ds`` as a left-point sum."""
    return _cumsum0(g0(path.zeta[:-1]) * path.h)


def antiderivative_on_range(g0, y0, values, nodes=4097, tol=1e-12):
    """Callable ``y -> int_{y0}^y g0`` on a grid covering ``y0`` and ``values``."""
    values = np.asarray(values, dtype=float)
    lo = min(float(np.min(values)), y0)
    hi = max(float(np.max(values)), y0)
    if hi - lo < 1e-12:
        return lambda y: np.zeros(np.shape(y))
    pad = 1e-9 * (hi - lo)
    grid = np.unique(np.concatenate([np.linspace(lo - pad, hi + pad, nodes), [y0]]))
    k = int(np.flatnonzero(grid == y0)[0])
    vals = cumulative(g0, grid, tol / (hi - lo), anchor=k)
    return CubicHermiteSpline(grid, vals, np.asarray(g0(grid), dtype=float) * np.ones_like(grid))


def limit_beta1_tilde(path: LimitPath, g0):
    """``2 (int_{y0}^{zeta(t)} g0 - int_0^t g0(zeta) sigma0(zeta) dW)``."""
    lm = path.model
    z = path.zeta
    G0 = antiderivative_on_range(g0, z[0], z)
    ito = _cumsum0(g0(z[:-1]) * lm.sigma0(_coef_arg(lm, z[:-1])) * path.dWhat)
    return 2.0 * (G0(z) - ito)


def limit_beta2(path: LimitPath, g0, a0):
    """``int g0(zeta) dzeta - int g0(zeta) a0(zeta) ds``."""
    z = path.zeta
    lm = path.model
    gz = g0(z[:-1])
    return _cumsum0(gz * np.diff(z)) - _cumsum0(gz * a0(_coef_arg(lm, z[:-1])) * path.h)


def limit_i0(path: LimitPath, f0, g0, sigma0):
    """``F0(zeta(t)) + int g0(zeta) sigma0(zeta) dW``."""
    z = path.zeta
    lm = path.model
    return f0(z) + _cumsum0(g0(z[:-1]) * sigma0(_coef_arg(lm, z[:-1])) * path.dWhat)


def limit_i_thm7(path: LimitPath, f0, g0):
    """``F0(zeta(t)) + int g0(zeta) dzeta`` for the driftless limit."""
    z = path.zeta
    return f0(z) + _cumsum0(g0(z[:-1]) * np.diff(z))


# ----------------------------------------------------------------- samplers


def sample_besq_exact(delta, y0, t, n, seed=0):
    """``n`` draws of ``zeta(t)`` for BESQ(delta) started at ``y0``.

    ``zeta(t)/t`` is noncentral chi-square with ``delta`` degrees of freedom
    and noncentrality ``y0/t``: a Poisson(``y0/(2t)``) mixture of central
    chi-squares with ``delta + 2N`` degrees of freedom.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not t > 0:
        raise ValueError("t must be positive")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    lam = y0 / t
    N = rng.poisson(lam / 2.0, size=n) if lam > 0 else np.zeros(n, dtype=int)
    return t * rng.chisquare(delta + 2.0 * N)


def sample_limit_law(law, t, n, seed=0):
    """Exact draws of ``zeta(t)`` for a closed-form limit law descriptor."""
    kind = law["kind"]
    if kind == "besq":
        return sample_besq_exact(law["delta"], law["y0"], t, n, seed)
    if kind == "normal":
        rng = np.random.Generator(np.random.PCG64(int(seed)))
        return law["y0"] + law.get("mean_rate", 0.0) * t + law.get("sigma", 1.0) * math.sqrt(t) * rng.standard_normal(n)
    raise ValueError(f"no exact sampler for limit law {kind!r}")


# ----------------------------------------------------------------- ensembles


@dataclass(frozen=True, eq=False)
class LimitEnsemble:
    h: float
    n_steps: int
    seed: int
    times: np.ndarray
    values: dict
    path_index: np.ndarray
    n_paths: int
    failures: tuple

    def at(self, name, t):
        j = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[j], t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"no probe at t={t}")
        return self.values[name][j]


def _limit_block(lm, h, n, seeds, probe_idx):
    B = len(seeds)
    gens = [np.random.Generator(np.random.PCG64(int(sd))) for sd in seeds]
    g0 = lm.g0 if lm.g0 is not None else (lambda y: np.zeros(np.shape(y)))
    z = np.full(B, float(lm.y0))
    s_h = np.zeros(B)  # sum g0 h
    s_a = np.zeros(B)  # sum g0 a0 h
    s_w = np.zeros(B)  # sum g0 sigma0 dW
    s_z = np.zeros(B)  # sum g0 dzeta
    w = np.zeros(B)
    pos = {int(k): j for j, k in enumerate(probe_idx)}
    rows = {k: np.full((len(probe_idx), B), np.nan) for k in ("zeta", "What", "s_h", "s_a", "s_w", "s_z")}

    def record(i):
        if i in pos:
            j = pos[i]
            rows["zeta"][j] = z
            rows["What"][j] = w
            rows["s_h"][j] = s_h
            rows["s_a"][j] = s_a
            rows["s_w"][j] = s_w
            rows["s_z"][j] = s_z

    record(0)
    sqrt_h = math.sqrt(h)
    zc = None
    with np.errstate(all="ignore"):
        for i in range(n):
            c = i % _NORMAL_CHUNK
            if c == 0:
                k = min(_NORMAL_CHUNK, n - i)
                zc = np.empty((k, B))
                for j, g in enumerate(gens):
                    zc[:, j] = g.standard_normal(k)
            dW = sqrt_h * zc[c]
            y = _coef_arg(lm, z)
            a = lm.a0(y)
            sig = lm.sigma0(y)
            gz = g0(z)
            z_new = z + (a * h + sig * dW)
            s_h += gz * h
            s_a += gz * a * h
            s_w += gz * sig * dW
            s_z += gz * (z_new - z)
            w += dW
            z = z_new
            record(i + 1)
    return rows


def run_limit_ensemble(lm: LimitModel, horizon, h, n_paths, seed=0, probes=(1.0,), statistics=("zeta",),
                       max_failure_rate=0.01):
    """Ensemble of Euler paths of the limit equation with functionals at the probe times."""
    for name in statistics:
        if name not in LIMIT_STATISTICS:
            raise ValueError(f"unknown limit statistic {name!r}; choose from {LIMIT_STATISTICS}")
    n = max(1, int(math.ceil(horizon / h - 1e-9)))
    h = horizon / n
    probe_idx = [min(n, int(round(t / h))) for t in probes]
    seeds = [mix64(seed, i) for i in range(n_paths)]
    bs = 1024
    parts = [_limit_block(lm, h, n, seeds[k:k + bs], probe_idx) for k in range(0, n_paths, bs)]
    rows = {k: np.concatenate([p[k] for p in parts], axis=1) for k in parts[0]}
    finite = np.all(np.isfinite(rows["zeta"]), axis=0)
    failures = tuple(int(i) for i in np.flatnonzero(~finite))
    if len(failures) > max_failure_rate * n_paths:
        raise EnsembleError(f"{len(failures)} of {n_paths} limit paths became non-finite")
    keep = np.flatnonzero(finite)
    rows = {k: v[:, keep] for k, v in rows.items()}

    z = rows["zeta"]
    out = {}
    for name in statistics:
        if name in ("zeta", "What"):
            out[name] = rows[name]
        elif name == "lbeta1":
            out[name] = rows["s_h"]
        elif name == "lbeta2":
            out[name] = rows["s_z"] - rows["s_a"]
        elif name == "li0":
            out[name] = lm.f0(z) + rows["s_w"]
        elif name == "li":
            out[name] = lm.f0(z) + rows["s_z"]
        elif name == "lbeta1_tilde":
            G0 = antiderivative_on_range(lm.g0, lm.y0, z)
            out[name] = 2.0 * (G0(z) - rows["s_w"])
    return LimitEnsemble(
        h=h,
        n_steps=n,
        seed=int(seed),
        times=np.array([i * h for i in probe_idx]),
        values=out,
        path_index=keep,
        n_paths=n_paths,
        failures=failures,
    )
