"""Euler-Maruyama paths of ``dxi = a_T(xi) dt + dW`` with the additive functionals.

All stochastic integrals are left-point (Ito) sums built from one set of
Wiener increments per path, so pathwise identities such as

    int g dxi = int g a_T dt + int g dW

hold to rounding error.  Each path draws its normals from its own PCG64
stream seeded with :func:`mix64` ``(seed, path_index)``; ensembles are split
into fixed blocks of paths, so results do not depend on the worker count.
"""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .drift_models import Scenario
from .scale import ScaleTable, default_domain

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15

ACCUMULATORS = ("xi", "W", "zeta", "eta", "beta1", "beta2", "beta_xi", "beta_ga", "i_t", "q_int")

_NORMAL_CHUNK = 1024


class SimulationError(RuntimeError):
    pass


class ExcursionError(SimulationError):
    pass


class NumericalError(SimulationError):
    pass


class EnsembleError(SimulationError):
    pass


def mix64(seed, index):
    """SplitMix64 finalizer applied to ``seed + (index + 1) * 0x9E3779B97F4A7C15``.

    Used to derive per-path seeds; any language with 64-bit unsigned
    arithmetic reproduces the same assignment.

    >>> hex(mix64(0, 0))
    '0xe220a8397b1dcdaf'
    """
    z = (int(seed) + (int(index) + 1) * GOLDEN64) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def path_normals(seed, n):
    return np.random.Generator(np.random.PCG64(seed)).standard_normal(n)


@dataclass(frozen=True)
class StepPolicy:
    """Step ``h = min(h_max, stability/(1 + L_T^2), resolution * scale^2)``.

    ``L_T`` is the drift bound and ``scale`` the smallest feature scale of the
    drift and the functional ``g_T``; the last term keeps a diffusive step
    ``sqrt(h)`` below the oscillation length of the integrands.

    With ``fine_level`` set, step counts are rounded up to powers of two
    and every increment is the sum of ``2^fine_level / n`` normals on the
    common grid ``horizon * 2^-fine_level``, so ensembles run at different
    ``T`` with the same seed are driven by the same Brownian paths.
    """

    h_max: float = 1e-3
    stability: float = 0.1
    resolution: float = 1.0
    fine_level: int = None

    def step(self, s: Scenario, T, horizon):
        L_T = s.drift.drift_bound(T)
        h = min(self.h_max, self.stability / (1.0 + L_T * L_T))
        feat = min(s.drift.feature_scale(T), s.functional.feature_scale(T))
        if math.isfinite(feat):
            h = min(h, self.resolution * feat * feat)
        n = max(1, int(math.ceil(horizon / h - 1e-9)))
        if self.fine_level is not None:
            n = 1 << max(0, (n - 1).bit_length())
            if n > 1 << self.fine_level:
                raise ValueError(f"step {horizon / n:.3g} is finer than the common grid 2^-{self.fine_level}")
        return horizon / n, n

    def substeps(self, n):
        """Fine-grid normals summed into each step (1 without a common grid)."""
        return 1 if self.fine_level is None else (1 << self.fine_level) // n


@dataclass(frozen=True, eq=False)
class PathSample:
    T: float
    h: float
    times: np.ndarray
    xi: np.ndarray
    dW: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    beta_xi: np.ndarray
    beta_ga: np.ndarray
    i_t: np.ndarray
    zeta: np.ndarray
    eta: np.ndarray
    seed: int

    def to_csv(self, path):
        """Write the trace to a file name or an open text stream."""
        if hasattr(path, "write"):
            self._write_csv(path)
        else:
            with open(path, "w", newline="") as fh:
                self._write_csv(fh)

    def _write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "xi", "zeta", "eta", "beta1", "beta2", "beta_xi", "i_t"])
        data = [self.times, self.xi, self.zeta, self.eta, self.beta1, self.beta2, self.beta_xi, self.i_t]
        for row in zip(*data):
            w.writerow([repr(float(v)) for v in row])


# ------------------------------------------------------------------ steppers


class _EulerStepper:
    def __init__(self, s, T, h, X):
        self.a = s.drift.eval
        self.T = T
        self.h = h
        self.X = X

    def start(self, x0, B):
        return np.full(B, float(x0))

    def advance(self, xi, a, dW):
        return xi + (a * self.h + dW)

    def out_of_domain(self, xi):
        return ~(np.abs(xi) <= self.X)

    def park(self, mask):
        pass


class _TransformedStepper:
    """Euler for ``d eta = f'(phi(eta)) dW``, mapped back through ``phi``."""

    def __init__(self, tab: ScaleTable):
        self.tab = tab
        self.lo, self.hi = tab.f[0], tab.f[-1]

    def start(self, x0, B):
        self.eta = np.full(B, float(self.tab.f_at(x0)))
        return np.full(B, float(x0))

    def advance(self, xi, a, dW):
        self.eta = self.eta + self.tab.fprime_at(np.clip(xi, -self.tab.X, self.tab.X)) * dW
        bad = ~((self.eta >= self.lo) & (self.eta <= self.hi))
        self._bad = bad
        out = np.full_like(self.eta, np.nan)
        ok = ~bad
        out[ok] = self.tab.inverse(self.eta[ok])
        return out

    def out_of_domain(self, xi):
        return self._bad | ~np.isfinite(xi)

    def park(self, mask):
        self.eta[mask] = self.tab.f_at(0.0)


# ---------------------------------------------------------------- core loop


@dataclass
class _BlockResult:
    probes: dict
    sup_abs: dict
    occupation: np.ndarray
    failed: dict
    full: dict = field(default_factory=dict)


def _run_block(s, T, h, n_steps, seeds, stepper, probe_idx, statistics, sup_abs, occupation, record_full, sub=1,
               residual=None):
    B = len(seeds)
    sqrt_h = math.sqrt(h / sub)
    chunk = max(1, _NORMAL_CHUNK // sub)
    drift = s.drift.eval
    fun = s.functional
    tr = s.transform
    need = set(statistics) | set(sup_abs)
    need_g = bool(need & {"beta1", "beta2", "beta_xi", "beta_ga", "i_t"}) or record_full
    need_eta = "eta" in need or record_full
    need_zeta_path = bool(occupation) or "zeta" in sup_abs

    gens = [np.random.Generator(np.random.PCG64(int(sd))) for sd in seeds]
    xi = stepper.start(s.x0, B)
    acc = {k: np.zeros(B) for k in ("W", "eta", "beta1", "beta2", "beta_xi", "beta_ga", "q_int")}
    failed = {}
    alive = np.ones(B, dtype=bool)

    def snapshot():
        # references, not copies: consumers copy what they keep
        out = {"xi": xi}
        out.update(acc)
        return out

    def derived(name, snap):
        if name == "zeta":
            return tr.g_value(T, snap["xi"])
        if name == "i_t":
            return fun.f_eval(T, snap["xi"]) + snap["beta2"]
        return snap[name]

    probe_pos = {int(k): j for j, k in enumerate(probe_idx)}
    probes = {name: np.full((len(probe_idx), B), np.nan) for name in statistics}
    sups = {name: np.zeros(B) for name in sup_abs}
    occ = np.zeros((len(occupation), B))
    full = {}
    if record_full:
        full = {k: np.empty((n_steps + 1, B)) for k in ("xi", "dW", "beta1", "beta2", "beta_xi", "beta_ga", "eta")}

    def record(i):
        snap = None
        if i in probe_pos or sup_abs:
            snap = snapshot()
        if i in probe_pos:
            for name in statistics:
                probes[name][probe_pos[i]] = derived(name, snap)
        for name in sup_abs:
            np.maximum(sups[name], np.abs(derived(name, snap)), out=sups[name])
        if record_full:
            full["xi"][i] = xi
            for k in ("beta1", "beta2", "beta_xi", "beta_ga", "eta"):
                full[k][i] = acc[k]

    record(0)
    z = None
    with np.errstate(all="ignore"):
        for i in range(n_steps):
            c = i % chunk
            if c == 0:
                k = min(chunk, n_steps - i)
                z = np.empty((k, B))
                for j, g in enumerate(gens):
                    z[:, j] = g.standard_normal(k * sub).reshape(k, sub).sum(axis=1) if sub > 1 else g.standard_normal(k)
            dW = sqrt_h * z[c]
            a = drift(T, xi)
            if need_zeta_path and occupation:
                zeta = tr.g_value(T, xi)
                for m, (lo, hi) in enumerate(occupation):
                    occ[m] += h * ((zeta >= lo) & (zeta <= hi))
            xi_new = stepper.advance(xi, a, dW)
            if need_g:
                g = fun.g_eval(T, xi)
                acc["beta1"] += g * h
                acc["beta2"] += g * dW
                acc["beta_xi"] += g * (xi_new - xi)
                acc["beta_ga"] += g * a * h
            if need_eta:
                acc["eta"] += tr.g_d1(T, xi) * dW
            if residual is not None:
                acc["q_int"] += residual(T, xi) * h
            acc["W"] += dW
            if record_full:
                full["dW"][i] = dW
            bad = stepper.out_of_domain(xi_new) & alive
            if bad.any():
                for j in np.flatnonzero(bad):
                    kind = "numerical" if not np.isfinite(xi_new[j]) else "excursion"
                    failed[int(j)] = (kind, i + 1)
                alive &= ~bad
                # park failed paths at a harmless value
                xi_new = np.where(alive, xi_new, 0.0)
                stepper.park(~alive)
            xi = xi_new
            record(i + 1)
    if record_full:
        full["dW"][n_steps] = np.nan
    return _BlockResult(probes=probes, sup_abs=sups, occupation=occ, failed=failed, full=full)


def _probe_indices(times, h, n_steps, horizon):
    idx = []
    for t in times:
        if t < 0 or t > horizon * (1 + 1e-12):
            raise ValueError(f"probe time {t} outside [0, {horizon}]")
        k = int(round(t / h))
        idx.append(min(k, n_steps))
    return idx


def _single_path(s, T, horizon, h, n_steps, seed, stepper, sub=1):
    res = _run_block(s, T, h, n_steps, [seed], stepper, [], (), (), (), record_full=True, sub=sub)
    if res.failed:
        kind, step = res.failed[0]
        exc = NumericalError if kind == "numerical" else ExcursionError
        raise exc(f"path left the admissible region ({kind}) at step {step}")
    f = {k: v[:, 0] for k, v in res.full.items()}
    xi = f["xi"]
    tr = s.transform
    return PathSample(
        T=float(T),
        h=h,
        times=np.arange(n_steps + 1) * h,
        xi=xi,
        dW=f["dW"][:-1],
        beta1=f["beta1"],
        beta2=f["beta2"],
        beta_xi=f["beta_xi"],
        beta_ga=f["beta_ga"],
        i_t=s.functional.f_eval(T, xi) + f["beta2"],
        zeta=tr.g_value(T, xi),
        eta=f["eta"],
        seed=int(seed),
    )


def simulate_path_em(s: Scenario, T, horizon, step_policy=None, seed=0, domain=None):
    """One explicit Euler-Maruyama path with every accumulator recorded at every step."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    policy = step_policy or StepPolicy()
    h, n = policy.step(s, T, horizon)
    X = domain if domain is not None else default_domain(s.x0, horizon)
    return _single_path(s, T, horizon, h, n, seed, _EulerStepper(s, T, h, X), policy.substeps(n))


def simulate_path_transformed(s: Scenario, tab: ScaleTable, T, horizon, step_policy=None, seed=0):
    """One path obtained by simulating ``f_T(xi_T)`` (driftless) and mapping back."""
    if tab.T != float(T):
        raise ValueError(f"table built for T={tab.T}, asked for T={T}")
    policy = step_policy or StepPolicy()
    h, n = policy.step(s, T, horizon)
    return _single_path(s, T, horizon, h, n, seed, _TransformedStepper(tab), policy.substeps(n))


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    T: float
    h: float
    n_steps: int
    seed: int
    times: np.ndarray
    values: dict
    sup_abs: dict
    occupation: np.ndarray
    occupation_sets: tuple
    path_index: np.ndarray
    n_paths: int
    failures: tuple
    single: PathSample = None

    def at(self, name, t):
        """Per-path values of statistic ``name`` at probe time ``t``."""
        j = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[j], t, rel_tol=1e-9, abs_tol=1e-12):
            raise KeyError(f"no probe at t={t}; probes are {list(self.times)}")
        return self.values[name][j]


def coupled_policy(policy, s: Scenario, T_ladder, horizon):
    """``policy`` with a common fine grid covering every ``T`` of the ladder."""
    base = replace(policy, fine_level=None)
    n_max = max(base.step(s, T, horizon)[1] for T in T_ladder)
    return replace(policy, fine_level=max(0, (n_max - 1).bit_length()))


def _block_size(n_steps):
    # keeps the per-block normal buffer near 8 MB
    return int(min(1024, max(64, 2**20 // max(1, min(n_steps, _NORMAL_CHUNK)))))


def run_ensemble(
    s: Scenario,
    T,
    horizon,
    n_paths,
    step_policy=None,
    seed=0,
    probes=(1.0,),
    statistics=("xi",),
    sup_abs=(),
    occupation=(),
    method="em",
    table=None,
    residual=None,
    threads=1,
    max_failure_rate=0.01,
    domain=None,
):
    """Simulate ``n_paths`` independent paths and collect statistics at the probe times.

    ``sup_abs`` names accumulators whose running ``max_t |.|`` is kept;
    ``occupation`` is a list of closed intervals ``(lo, hi)`` for which the
    time ``zeta_T`` spends inside is accumulated.  Paths that leave the
    domain are dropped and reported in ``failures``; more than
    ``max_failure_rate`` of them raises :class:`EnsembleError`.
    ``residual(T, x)``, when given, is integrated in time into ``q_int``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    for name in tuple(statistics) + tuple(sup_abs):
        if name not in ACCUMULATORS:
            raise ValueError(f"unknown statistic {name!r}; choose from {ACCUMULATORS}")
    policy = step_policy or StepPolicy()
    h, n = policy.step(s, T, horizon)
    probe_idx = _probe_indices(probes, h, n, horizon)
    X = domain if domain is not None else default_domain(s.x0, horizon)
    if method == "transformed" and table is None:
        raise ValueError("method='transformed' needs a scale table")
    if "q_int" in tuple(statistics) + tuple(sup_abs) and residual is None:
        raise ValueError("statistic 'q_int' needs a residual")
    if method not in ("em", "transformed"):
        raise ValueError(f"unknown method {method!r}")

    seeds = [mix64(seed, i) for i in range(n_paths)]
    bs = _block_size(n)
    blocks = [(k, seeds[k:k + bs]) for k in range(0, n_paths, bs)]

    def work(block):
        start, sds = block
        stepper = _EulerStepper(s, T, h, X) if method == "em" else _TransformedStepper(table)
        return _run_block(
            s, T, h, n, sds, stepper, probe_idx, tuple(statistics), tuple(sup_abs), tuple(occupation), False,
            sub=policy.substeps(n),
            residual=residual,
        )

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]

    failures = []
    for (start, _), r in zip(blocks, results):
        failures.extend((start + j, kind, step) for j, (kind, step) in sorted(r.failed.items()))
    if len(failures) > max_failure_rate * n_paths:
        kinds = {}
        for _, kind, _ in failures:
            kinds[kind] = kinds.get(kind, 0) + 1
        raise EnsembleError(f"{len(failures)} of {n_paths} paths failed: {kinds}")
    bad = np.array(sorted(f[0] for f in failures), dtype=int)
    keep = np.setdiff1d(np.arange(n_paths), bad)

    def merge(key):
        return np.concatenate([getattr(r, key) for r in results], axis=-1)

    values = {name: np.concatenate([r.probes[name] for r in results], axis=1)[:, keep] for name in statistics}
    sups = {name: np.concatenate([r.sup_abs[name] for r in results])[keep] for name in sup_abs}
    occ = merge("occupation")[:, keep] if occupation else np.zeros((0, keep.size))

    single = None
    if n_paths == 1 and not failures:
        if method == "em":
            single = simulate_path_em(s, T, horizon, policy, seeds[0], domain=X)
        else:
            single = simulate_path_transformed(s, table, T, horizon, policy, seeds[0])
    return EnsembleResult(
        T=float(T),
        h=h,
        n_steps=n,
        seed=int(seed),
        times=np.array([i * h for i in probe_idx]),
        values=values,
        sup_abs=sups,
        occupation=occ,
        occupation_sets=tuple(tuple(map(float, b)) for b in occupation),
        path_index=keep,
        n_paths=n_paths,
        failures=tuple(failures),
        single=single,
    )


# ------------------------------------------------------------- diagnostics


def euler_residual(s: Scenario, path: PathSample):
    """Max relative defect of ``xi[i+1] - xi[i] = a_T(xi[i]) h + dW[i]``."""
    inc = np.diff(path.xi)
    pred = s.drift.eval(path.T, path.xi[:-1]) * path.h + path.dW
    scale = np.maximum(1.0, np.abs(path.xi[1:]))
    return float(np.max(np.abs(inc - pred) / scale))


def ito_residual(path: PathSample):
    """Max defect of ``beta_xi = beta_ga + beta2`` relative to the accumulated absolute variation."""
    inc = np.abs(np.diff(path.beta_xi)) + np.abs(np.diff(path.beta_ga)) + np.abs(np.diff(path.beta2))
    scale = np.maximum(np.concatenate([[0.0], np.cumsum(inc)]), 1e-300)
    return float(np.max(np.abs(path.beta_xi - path.beta_ga - path.beta2) / scale))


def decomposition_defect(s: Scenario, path: PathSample):
    """``zeta - G(x0) - int (G' a + G''/2) ds - eta`` along the path (Ito formula, vanishes as h -> 0)."""
    T, xl = path.T, path.xi[:-1]
    tr = s.transform
    drift_part = (tr.g_d1(T, xl) * s.drift.eval(T, xl) + 0.5 * tr.g_d2(T, xl)) * path.h
    integral = np.concatenate([[0.0], np.cumsum(drift_part)])
    return path.zeta - tr.g_value(T, s.x0) - integral - path.eta
