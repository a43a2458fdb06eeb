"""T-ladder experiments: condition checks, finite-T ensembles, limit samples and reports.

An experiment is described by an :class:`ExperimentConfig`, usually read
from a TOML file::

    scenario = "besq"
    T_ladder = [100.0, 1000.0, 10000.0]
    horizon = 1.0
    probe_times = [1.0]
    n_paths = 10000
    seed = 20240601

    [params]
    c0 = 1.0
    x0 = 1.0

    [step]
    h_max = 1e-3
    coupling = "common"

    [thresholds]
    ks = 0.05

For every ``T`` the runner builds the scale table, evaluates the condition
checkers that belong to the scenario's theorem tags, simulates the finite-T
ensemble and compares each functional with its limit.  Trend verdicts along
the ladder decide the exit code.
"""

import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from . import drift_models as dm
from .limits import run_limit_ensemble, sample_limit_law
from .scale import build_scale, check_A1, check_A3, check_A4, check_growth, check_thm7, default_domain
from .sde_engine import StepPolicy, coupled_policy, mix64, run_ensemble
from .stats import convergence_trend, ks_two_sample, stderr, wasserstein1

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

REPORT_STATISTICS = ("zeta", "beta1", "beta2", "beta_xi", "i_t", "eta")

# theorem tag -> (finite-T statistic, limit statistic)
PAIRINGS = {
    "Thm2": ("zeta", "zeta"),
    "Thm3": ("beta1", "lbeta1"),
    "Thm4": ("beta1", "lbeta1_tilde"),
    "Thm5": ("beta2", "lbeta2"),
    "Thm6": ("i_t", "li0"),
    "Thm7": ("i_t", "li"),
}

# stream indices of the limit samples, disjoint from the ladder's
EXACT_STREAM = 1 << 32
EULER_STREAM = (1 << 32) + 1  # exact draws use EXACT_STREAM + 2j

COLUMNS = ("scenario", "theorem", "T", "t", "statistic", "metric", "value", "stderr", "verdict")
NO_VERDICT = "n/a"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    params: dict = field(default_factory=dict)
    T_ladder: tuple = (1e2, 1e3, 1e4)
    horizon: float = 1.0
    probe_times: tuple = (1.0,)
    n_paths: int = 10000
    seed: int = 0
    quad_tol: float = 1e-9
    statistics: tuple = None
    theorems: tuple = None
    threads: int = 1
    method: str = "em"
    check_N: float = 5.0
    h_max: float = 1e-3
    stability: float = 0.1
    resolution: float = 1.0
    coupling: str = "common"
    limit_h: float = 1e-4
    ks_threshold: float = 0.05
    w1_threshold: float = 0.05
    ks_by_theorem: dict = field(default_factory=dict)
    condition_threshold: float = 1.0
    slack: float = 0.1

    def __post_init__(self):
        problems = []
        try:
            dm.registry_get(self.scenario, **self.params)
        except dm.UnknownScenarioError as exc:
            problems.append(f"scenario: {exc.args[0]}")
        except (TypeError, ValueError) as exc:
            problems.append(f"params: {exc}")
        ladder = list(self.T_ladder)
        if not ladder:
            problems.append("T_ladder: must not be empty")
        elif any(not (T > 0 and math.isfinite(T)) for T in ladder):
            problems.append("T_ladder: entries must be positive and finite")
        elif any(b <= a for a, b in zip(ladder, ladder[1:])):
            problems.append("T_ladder: must be strictly increasing")
        if not self.horizon > 0:
            problems.append("horizon: must be positive")
        if not self.probe_times:
            problems.append("probe_times: must not be empty")
        for t in self.probe_times:
            if not 0 <= t <= self.horizon:
                problems.append(f"probe_times: {t} is outside [0, {self.horizon}]")
        if self.n_paths < 2:
            problems.append("n_paths: need at least 2 paths")
        if not 0 <= self.seed < 1 << 64:
            problems.append("seed: must lie in [0, 2^64)")
        if not self.quad_tol > 0:
            problems.append("quad_tol: must be positive")
        for name in self.statistics or ():
            if name not in REPORT_STATISTICS:
                problems.append(f"statistics: unknown {name!r}; choose from {REPORT_STATISTICS}")
        for tag in self.theorems or ():
            if tag not in dm.THEOREM_TAGS:
                problems.append(f"theorems: unknown tag {tag!r}")
        if self.threads < 1:
            problems.append("threads: must be at least 1")
        if self.method not in ("em", "transformed"):
            problems.append("method: must be 'em' or 'transformed'")
        if self.coupling not in ("common", "independent"):
            problems.append("step.coupling: must be 'common' or 'independent'")
        for name in ("check_N", "h_max", "stability", "resolution", "limit_h", "ks_threshold", "w1_threshold",
                     "condition_threshold"):
            if not getattr(self, name) > 0:
                problems.append(f"{name}: must be positive")
        if not self.slack >= 0:
            problems.append("slack: must be nonnegative")
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))

    def build_scenario(self):
        return dm.registry_get(self.scenario, **self.params)

    def ks_for(self, theorem):
        return float(self.ks_by_theorem.get(theorem, self.ks_threshold))


_SECTIONS = {
    "step": {"h_max": "h_max", "stability": "stability", "resolution": "resolution", "coupling": "coupling"},
    "limit": {"h": "limit_h"},
    "thresholds": {"ks": "ks_threshold", "w1": "w1_threshold", "condition": "condition_threshold", "slack": "slack",
                   "ks_by_theorem": "ks_by_theorem"},
    "params": None,
}


def config_from_dict(data, **overrides):
    """Flatten the nested config mapping and apply non-``None`` overrides."""
    known = {f.name for f in fields(ExperimentConfig)}
    flat = {}
    problems = []
    for key, value in data.items():
        if key == "params":
            flat["params"] = dict(value)
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                problems.append(f"{key}: expected a table")
                continue
            for sub, v in value.items():
                if sub not in _SECTIONS[key]:
                    problems.append(f"{key}.{sub}: unknown key")
                else:
                    flat[_SECTIONS[key][sub]] = v
        elif key in known:
            flat[key] = value
        else:
            problems.append(f"{key}: unknown key")
    flat.update({k: v for k, v in overrides.items() if v is not None})
    if "scenario" not in flat:
        problems.append("scenario: required")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    try:
        sid, params = dm.parse_scenario_id(str(flat["scenario"]))
    except (dm.UnknownScenarioError, ValueError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        raise ConfigError(f"invalid configuration:\n  scenario: {msg}") from None
    flat["scenario"] = sid
    flat["params"] = {**params, **flat.get("params", {})}
    for key in ("T_ladder", "probe_times", "statistics", "theorems"):
        if flat.get(key) is not None:
            flat[key] = tuple(flat[key])
    try:
        for key in ("T_ladder", "probe_times"):
            if key in flat:
                flat[key] = tuple(float(v) for v in flat[key])
        for key in ("horizon", "quad_tol", "check_N", "h_max", "stability", "resolution", "limit_h",
                    "ks_threshold", "w1_threshold", "condition_threshold", "slack"):
            if key in flat:
                flat[key] = float(flat[key])
        for key in ("n_paths", "seed", "threads"):
            if key in flat:
                flat[key] = int(flat[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration:\n  {key}: {exc}") from None
    return ExperimentConfig(**flat)


def load_config(path, **overrides):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from None
    return config_from_dict(data, **overrides)


# ------------------------------------------------------------------ records


@dataclass(frozen=True)
class Record:
    scenario: str
    theorem: str
    T: float = None
    t: float = None
    statistic: str = ""
    metric: str = ""
    value: float = None
    stderr: float = None
    verdict: str = NO_VERDICT

    def sort_key(self):
        def num(v):
            return (1, 0.0) if v is None else (0, float(v))

        return (self.scenario, self.theorem, num(self.T), num(self.t), self.statistic, self.metric)


@dataclass
class Report:
    records: list = field(default_factory=list)
    trends: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(r.verdict != "fail" for r in self.records)

    @property
    def exit_code(self):
        return EXIT_OK if self.passed else EXIT_FAIL

    def sorted_records(self):
        return sorted(self.records, key=Record.sort_key)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return repr(float(v))


def _parse(v, numeric):
    if not numeric:
        return v
    return None if v == "" else float(v)


_NUMERIC = {"T", "t", "value", "stderr"}


def report_to_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in report.sorted_records():
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def report_to_json(report):
    rows = [{c: getattr(r, c) for c in COLUMNS} for r in report.sorted_records()]
    for row in rows:
        for c in _NUMERIC:
            v = row[c]
            # JSON has no NaN/inf; keep them as strings
            if v is not None and not math.isfinite(v):
                row[c] = repr(float(v))
    return json.dumps({"columns": list(COLUMNS), "records": rows}, indent=1, sort_keys=True) + "\n"


def parse_report_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise ValueError(f"report header must be {','.join(COLUMNS)}")
    return Report(records=[Record(**{c: _parse(v, c in _NUMERIC) for c, v in zip(COLUMNS, row)}) for row in rows[1:]])


def parse_report_json(text):
    data = json.loads(text)
    recs = []
    for row in data["records"]:
        row = {c: (float(row[c]) if c in _NUMERIC and isinstance(row[c], str) else row[c]) for c in COLUMNS}
        recs.append(Record(**row))
    return Report(records=recs)


def read_report(path):
    with open(path) as fh:
        text = fh.read()
    return parse_report_json(text) if path.endswith(".json") else parse_report_csv(text)


def emit_report(report, fmt="csv", path=None):
    """Serialize ``report``; writes to ``path`` when given and returns the text."""
    if fmt == "csv":
        text = report_to_csv(report)
    elif fmt == "json":
        text = report_to_json(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


# --------------------------------------------------------------- conditions


def condition_values(s, tab, N):
    """``{(theorem, checker): value}`` for the checkers matching the scenario's tags."""
    T = tab.T
    tr, fun, lm = s.transform, s.functional, s.limit
    out = {}
    tags = s.theorem_tags
    if "Thm2" in tags:
        out[("Thm2", "A3_q1")] = check_A3(tab, lambda x: dm.residual_q1(s, T, x), N)
        out[("Thm2", "A3_q2")] = check_A3(tab, lambda x: dm.residual_q2(s, T, x), N)
        out[("Thm2", "A1_ratio")] = check_A1(tab, tr, N)
        out[("Thm2", "growth")] = check_growth(tr, T, N)
    if "Thm3" in tags:
        out[("Thm3", "A3_g")] = check_A3(tab, lambda x: fun.g_eval(T, x) - lm.g0(tr.g_value(T, x)), N)
    if "Thm4" in tags:
        out[("Thm4", "A4")] = check_A4(tab, s, N)
    if tags & {"Thm5", "Thm6"}:
        def q5(x):
            return (fun.g_eval(T, x) - lm.g0(tr.g_value(T, x)) * tr.g_d1(T, x)) ** 2

        a3 = check_A3(tab, q5, N)
        for tag in sorted(tags & {"Thm5", "Thm6"}):
            out[(tag, "A3_g2")] = a3
    if "Thm6" in tags:
        x = tab.grid[np.abs(tab.grid) <= N]
        out[("Thm6", "F_gap")] = float(np.max(np.abs(fun.f_eval(T, x) - lm.f0(tr.g_value(T, x)))))
    if "Thm7" in tags:
        c = check_thm7(tab, s, N)
        out[("Thm7", "cond1")] = c.cond1_sup
        out[("Thm7", "cond2_sup")] = c.cond2_sup
        out[("Thm7", "cond2_l2")] = c.cond2_l2
    return out


# the growth-type checks must stay bounded, not vanish
_INFO_CHECKERS = {"A1_ratio", "growth"}
_CONDITION_ATOL = 1e-9
# distances to a point mass may be pure rounding
_DISTANCE_ATOL = 1e-12


def _trend_record(cfg, sid, theorem, statistic, metric, t, values, threshold, atol):
    v = convergence_trend(values, cfg.T_ladder, threshold, cfg.slack, atol)
    rec = Record(sid, theorem, None, t, statistic, metric, v.last, None, "pass" if v.passed else "fail")
    return rec, v


def check_conditions(cfg: ExperimentConfig, report=None):
    """Condition rows for every ``T`` plus one trend verdict per checker."""
    s = cfg.build_scenario()
    report = report or Report()
    X = max(default_domain(s.x0, cfg.horizon), cfg.check_N)
    series = {}
    for T in cfg.T_ladder:
        tab = build_scale(s.drift, T, X, quad_tol=cfg.quad_tol)
        for (tag, name), value in condition_values(s, tab, cfg.check_N).items():
            if cfg.theorems and tag not in cfg.theorems:
                continue
            report.records.append(Record(s.id, tag, T, None, "condition", name, value, None, NO_VERDICT))
            series.setdefault((tag, name), []).append(value)
    for (tag, name), values in sorted(series.items()):
        if name in _INFO_CHECKERS:
            continue
        rec, v = _trend_record(cfg, s.id, tag, "condition", name, None, values, cfg.condition_threshold,
                               _CONDITION_ATOL)
        report.records.append(rec)
        report.trends[(tag, "condition", name, None)] = v
    return report


# -------------------------------------------------------------- experiments


def _policy(cfg, s):
    base = StepPolicy(h_max=cfg.h_max, stability=cfg.stability, resolution=cfg.resolution)
    if cfg.coupling == "common":
        return coupled_policy(base, s, cfg.T_ladder, cfg.horizon)
    return base


def ladder_seed(cfg, k):
    """Seed of the ensemble at ladder position ``k``."""
    return cfg.seed if cfg.coupling == "common" else mix64(cfg.seed, k)


def _comparisons(cfg, s):
    tags = sorted(s.theorem_tags if not cfg.theorems else set(cfg.theorems) & s.theorem_tags)
    wanted = cfg.statistics
    return [(tag,) + PAIRINGS[tag] for tag in tags if wanted is None or PAIRINGS[tag][0] in wanted]


def limit_samples(cfg, s, comparisons):
    """Limit-side samples ``{limit statistic: (array (n_probes, n), is_point_mass)}``.

    Deterministic limits declared by the scenario become point masses; the
    limit law of ``zeta`` is sampled exactly when known; everything else
    comes from one Euler ensemble of the limit equation.
    """
    out = {}
    law = s.closed_forms.get("limit_law")
    points = s.closed_forms.get("functional_limits", {})
    need_euler = []
    for _, _, lname in comparisons:
        if lname in points:
            out[lname] = (np.array([[points[lname](t)] for t in cfg.probe_times], dtype=float), True)
        elif lname == "zeta" and law is not None:
            out[lname] = (np.stack([
                sample_limit_law(law, t, cfg.n_paths, mix64(cfg.seed, EXACT_STREAM + 2 * j))
                if t > 0 else np.full(cfg.n_paths, float(law["y0"]))
                for j, t in enumerate(cfg.probe_times)
            ]), False)
        elif lname not in need_euler:
            need_euler.append(lname)
    if need_euler:
        ens = run_limit_ensemble(s.limit, cfg.horizon, cfg.limit_h, cfg.n_paths, seed=mix64(cfg.seed, EULER_STREAM),
                                 probes=cfg.probe_times, statistics=tuple(need_euler))
        out.update({k: (ens.values[k], False) for k in need_euler})
    return out


def run_experiment(cfg: ExperimentConfig, keep_samples=False):
    """Run the whole ladder and return a :class:`Report`.

    With ``keep_samples`` the per-path values are kept in ``report.samples``
    under ``(T, t, statistic)``, and the limit samples under
    ``("limit", t, statistic)``.
    """
    s = cfg.build_scenario()
    report = check_conditions(cfg)
    comps = _comparisons(cfg, s)
    extra = [n for n in (cfg.statistics or ()) if n not in {c[1] for c in comps}]
    finite_stats = tuple(dict.fromkeys([c[1] for c in comps] + extra))
    limit = limit_samples(cfg, s, comps)
    if keep_samples:
        for lname, (arr, _) in limit.items():
            for j, t in enumerate(cfg.probe_times):
                report.samples[("limit", t, lname)] = arr[j]
    policy = _policy(cfg, s)
    series = {}
    for k, T in enumerate(cfg.T_ladder):
        table = build_scale(s.drift, T, default_domain(s.x0, cfg.horizon), cfg.quad_tol) \
            if cfg.method == "transformed" else None
        ens = run_ensemble(s, T, cfg.horizon, cfg.n_paths, step_policy=policy, seed=ladder_seed(cfg, k),
                           probes=cfg.probe_times, statistics=finite_stats, method=cfg.method, table=table,
                           threads=cfg.threads)
        if ens.failures:
            report.records.append(Record(s.id, "all", T, None, "paths", "failures", float(len(ens.failures)), None))
        for j, t in enumerate(cfg.probe_times):
            if keep_samples:
                for name in finite_stats:
                    report.samples[(T, t, name)] = ens.values[name][j]
            for tag, fname, lname in comps:
                a = ens.values[fname][j]
                b, point = limit[lname]
                b = b[j]
                w1 = wasserstein1(a, b)
                rows = [("w1", w1, None)]
                if point:
                    rows.append(("mean_diff", float(np.mean(a) - b[0]), stderr(a)))
                    series.setdefault((tag, fname, "w1", t), []).append(w1)
                else:
                    ks = ks_two_sample(a, b)
                    rows.append(("ks", ks, None))
                    rows.append(("mean_diff", float(np.mean(a) - np.mean(b)), math.hypot(stderr(a), stderr(b))))
                    series.setdefault((tag, fname, "ks", t), []).append(ks)
                for metric, value, se in rows:
                    report.records.append(Record(s.id, tag, T, t, fname, metric, value, se))
            for name in extra:
                v = ens.values[name][j]
                report.records.append(Record(s.id, "all", T, t, name, "mean", float(np.mean(v)), stderr(v)))
    for (tag, fname, metric, t), values in sorted(series.items()):
        threshold = cfg.ks_for(tag) if metric == "ks" else cfg.w1_threshold
        rec, v = _trend_record(cfg, s.id, tag, fname, metric, t, values, threshold, _DISTANCE_ATOL)
        report.records.append(rec)
        report.trends[(tag, fname, metric, t)] = v
    return report


def list_scenarios():
    """Rows ``(id, parameters, theorem tags)`` of the registry."""
    return dm.list_scenarios()
