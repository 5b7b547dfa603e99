"""Synthetic experiments: static recovery and dynamic regret, with CSV/SVG output."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bandit import POLICY_KINDS, PolicyConfig, RegretTrace, config_hash, draw_arrivals, simulate, traces_to_csv
from .choice import Instance, InvalidInputError, sample_observations
from .estimator import FgdConfig, fgd_solve, per_type_mle, practical_lambda, rmse

EXPERIMENT_KINDS = ("static-rmse", "rmse-vs-per-row", "dynamic-regret")
REVENUE_RULES = ("uniform01", "constant", "lognormal")

# stream ids for np.random.SeedSequence entropy: (seed, grid index, replicate, stream)
_INSTANCE_STREAM = 0
_ARRIVAL_STREAM = 1
_DATA_STREAM = 2
_POLICY_STREAM0 = 100


def generate_instance(m: int, n: int, r: int, K: int, rng: np.random.Generator,
                      revenue_rule: str = "uniform01", revenue_param: float = 1.0) -> Instance:
    """Rank-r Gaussian preferences normalized to unit sample std, uniform types.

    Revenue rules: ``uniform01`` (iid U[0,1]), ``constant`` (all equal to
    ``revenue_param``), ``lognormal`` (iid lognormal with sigma ``revenue_param``).
    """
    if not 1 <= r <= min(m, n):
        raise InvalidInputError(f"r={r} must lie in [1, min(m, n)={min(m, n)}]")
    theta0 = rng.standard_normal((m, n))
    u, s, vt = np.linalg.svd(theta0, full_matrices=False)
    theta1 = (u[:, :r] * s[:r]) @ vt[:r]
    theta_star = theta1 / theta1.std(ddof=1)
    if revenue_rule == "uniform01":
        W = rng.random((m, n))
    elif revenue_rule == "constant":
        W = np.full((m, n), float(revenue_param))
    elif revenue_rule == "lognormal":
        W = rng.lognormal(0.0, revenue_param, size=(m, n))
    else:
        raise InvalidInputError(f"unknown revenue rule {revenue_rule!r}")
    return Instance(K=K, W=W, mu_star=np.full(m, 1.0 / m), theta_star=theta_star)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


# -- experiment specs ---------------------------------------------------------

@dataclass
class GridPoint:
    m: int
    n: int
    r: int
    K: int
    N: Optional[int] = None
    T: Optional[int] = None
    N_per_d: Optional[float] = None

    def obs_count(self) -> int:
        if self.N is not None:
            return int(self.N)
        return int(round(self.N_per_d * self.m))


@dataclass
class EstimatorSettings:
    r_tilde_factor: int = 2
    lam: Optional[float] = None
    d_rule: str = "m+n"
    beta_dec: float = 0.8
    tol: float = 1e-10
    max_outer_iters: int = 500
    max_linesearch_iters: int = 60
    ridge: float = 1e-8
    methods: list = field(default_factory=lambda: ["fgd", "per-type-mle"])


@dataclass
class ExperimentSpec:
    kind: str
    grid: list
    replicates: int = 1
    seed: int = 0
    policies: list = field(default_factory=lambda: ["oracle", "nuc-norm", "context-ignorant",
                                                    "structure-ignorant"])
    revenue_rule: str = "uniform01"
    revenue_param: float = 1.0
    estimator: EstimatorSettings = field(default_factory=EstimatorSettings)
    policy: dict = field(default_factory=dict)
    policy_overrides: dict = field(default_factory=dict)
    match_window: int = 1000
    trace_stride: int = 1
    threads: int = 1
    deterministic: bool = True
    output_dir: str = "results"
    svg: bool = True
    name: str = ""
    checkpoint_dir: Optional[str] = None
    checkpoint_every: int = 0

    def policy_config(self, kind: str) -> PolicyConfig:
        fields = dict(self.policy)
        fields.update(self.policy_overrides.get(kind, {}))
        fields["kind"] = kind
        return PolicyConfig(**fields).validate()


def _field_names(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _require(cond, where, msg):
    if not cond:
        raise InvalidInputError(f"{where}: {msg}")


def parse_spec(data: dict) -> ExperimentSpec:
    """Validate a JSON-compatible mapping into an :class:`ExperimentSpec`; unknown keys are errors."""
    _require(isinstance(data, dict), "spec", "must be an object")
    unknown = set(data) - _field_names(ExperimentSpec)
    _require(not unknown, "spec", f"unknown keys {sorted(unknown)}")
    _require("kind" in data and "grid" in data, "spec", "'kind' and 'grid' are required")
    kind = data["kind"]
    _require(kind in EXPERIMENT_KINDS, "kind", f"must be one of {EXPERIMENT_KINDS}, got {kind!r}")
    _require(isinstance(data["grid"], list) and data["grid"], "grid", "must be a nonempty list")

    grid = []
    for k, g in enumerate(data["grid"]):
        where = f"grid[{k}]"
        _require(isinstance(g, dict), where, "must be an object")
        unknown = set(g) - _field_names(GridPoint)
        _require(not unknown, where, f"unknown keys {sorted(unknown)}")
        for key in ("m", "n", "r", "K"):
            _require(isinstance(g.get(key), int) and g[key] > 0, f"{where}.{key}", "must be a positive integer")
        _require(g["r"] <= min(g["m"], g["n"]), f"{where}.r", "must not exceed min(m, n)")
        _require(g["K"] <= g["n"], f"{where}.K", "must not exceed n")
        if kind == "dynamic-regret":
            _require(isinstance(g.get("T"), int) and g["T"] > 0, f"{where}.T", "must be a positive integer")
        elif kind == "static-rmse":
            _require(isinstance(g.get("N"), int) and g["N"] > 0, f"{where}.N", "must be a positive integer")
        else:
            _require(g["m"] == g["n"], where, "rmse-vs-per-row needs square grid points")
            _require(isinstance(g.get("N_per_d"), (int, float)) and g["N_per_d"] > 0,
                     f"{where}.N_per_d", "must be positive")
        grid.append(GridPoint(**g))

    fields = {k: v for k, v in data.items() if k not in ("grid", "estimator")}
    est = data.get("estimator", {})
    _require(isinstance(est, dict), "estimator", "must be an object")
    unknown = set(est) - _field_names(EstimatorSettings)
    _require(not unknown, "estimator", f"unknown keys {sorted(unknown)}")
    estimator = EstimatorSettings(**est)
    _require(estimator.d_rule in ("m+n", "max"), "estimator.d_rule", "must be 'm+n' or 'max'")
    spec = ExperimentSpec(grid=grid, estimator=estimator, **fields)
    _require(isinstance(spec.replicates, int) and spec.replicates >= 1, "replicates", "must be >= 1")
    _require(isinstance(spec.seed, int) and spec.seed >= 0, "seed", "must be a nonnegative integer")
    _require(spec.revenue_rule in REVENUE_RULES, "revenue_rule", f"must be one of {REVENUE_RULES}")
    _require(isinstance(spec.threads, int) and spec.threads >= 1, "threads", "must be >= 1")
    _require(isinstance(spec.checkpoint_every, int) and spec.checkpoint_every >= 0, "checkpoint_every",
             "must be a nonnegative integer")
    for p in spec.policies:
        _require(p in POLICY_KINDS, "policies", f"unknown policy {p!r}")
    unknown = set(spec.policy) - _field_names(PolicyConfig)
    _require(not unknown, "policy", f"unknown keys {sorted(unknown)}")
    for p, over in spec.policy_overrides.items():
        _require(p in POLICY_KINDS, "policy_overrides", f"unknown policy {p!r}")
        unknown = set(over) - _field_names(PolicyConfig)
        _require(not unknown, f"policy_overrides.{p}", f"unknown keys {sorted(unknown)}")
    if kind == "dynamic-regret":
        for p in spec.policies:
            try:
                spec.policy_config(p)
            except (InvalidInputError, TypeError) as exc:
                raise InvalidInputError(f"policy ({p}): {exc}") from exc
    return spec


def load_spec(path) -> ExperimentSpec:
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return parse_spec(data)
    except InvalidInputError as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc


# -- results ------------------------------------------------------------------

RESULT_FIELDS = ["experiment", "m", "n", "r", "K", "N", "T", "replicate", "method", "metric", "value",
                 "wall_time"]


@dataclass
class ResultRow:
    experiment: str
    m: int
    n: int
    r: int
    K: int
    N: Optional[int]
    T: Optional[int]
    replicate: int
    method: str
    metric: str
    value: float
    wall_time: float = 0.0

    def key(self):
        return (self.experiment, self.m, self.n, self.r, self.K, self.N or 0, self.T or 0,
                self.replicate, self.method, self.metric)


def write_results_csv(rows, path_or_file, deterministic: bool = True):
    """ResultRow CSV; wall times are written as 0 in deterministic mode so outputs are reproducible."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in sorted(rows, key=ResultRow.key):
            w.writerow([r.experiment, r.m, r.n, r.r, r.K, "" if r.N is None else r.N,
                        "" if r.T is None else r.T, r.replicate, r.method, r.metric, repr(float(r.value)),
                        repr(0.0 if deterministic else float(r.wall_time))])
    finally:
        if own:
            fh.close()


def read_results_csv(path_or_file) -> list[ResultRow]:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, newline="") if own else path_or_file
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_FIELDS:
            raise InvalidInputError(f"unexpected header {reader.fieldnames}")
        out = []
        for d in reader:
            out.append(ResultRow(d["experiment"], int(d["m"]), int(d["n"]), int(d["r"]), int(d["K"]),
                                 int(d["N"]) if d["N"] else None, int(d["T"]) if d["T"] else None,
                                 int(d["replicate"]), d["method"], d["metric"], float(d["value"]),
                                 float(d["wall_time"])))
        return out
    finally:
        if own:
            fh.close()


# -- execution ----------------------------------------------------------------

def _map(fn, tasks, threads: int, deterministic: bool):
    """Run tasks serially or on a process pool; results come back in task order."""
    if threads <= 1 or len(tasks) <= 1:
        return [_call(fn, t, deterministic) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_call, [fn] * len(tasks), tasks, [deterministic] * len(tasks)))


def _call(fn, task, deterministic):
    if deterministic:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(1):
            return fn(*task)
    return fn(*task)


def _instance_for(spec: ExperimentSpec, gi: int, g: GridPoint, rep: int) -> Instance:
    return generate_instance(g.m, g.n, g.r, g.K, _rng(spec.seed, gi, rep, _INSTANCE_STREAM),
                             spec.revenue_rule, spec.revenue_param)


def _static_cell(spec: ExperimentSpec, gi: int, rep: int):
    g = spec.grid[gi]
    inst = _instance_for(spec, gi, g, rep)
    N = g.obs_count()
    if N < 1:
        raise InvalidInputError(f"grid[{gi}]: needs at least one observation")
    log = sample_observations(inst, N, _rng(spec.seed, gi, rep, _DATA_STREAM))
    es = spec.estimator
    rows = []

    def row(method, metric, value, wall):
        return ResultRow(spec.kind, g.m, g.n, g.r, g.K, N, None, rep, method, metric, float(value), wall)

    rows.append(row("zero", "rmse", rmse(np.zeros_like(inst.theta_star), inst.theta_star), 0.0))
    for method in es.methods:
        start = time.perf_counter()
        try:
            if method == "fgd":
                lam = es.lam if es.lam is not None else practical_lambda(g.K, g.m, g.n, N, es.d_rule)
                cfg = FgdConfig(r_tilde=min(es.r_tilde_factor * g.r, g.m, g.n), lam=lam, beta_dec=es.beta_dec,
                                tol=es.tol, max_outer_iters=es.max_outer_iters,
                                max_linesearch_iters=es.max_linesearch_iters)
                theta = fgd_solve(log, cfg, g.m, g.n).theta_hat
            elif method == "per-type-mle":
                theta = per_type_mle(log, g.m, g.n, ridge=es.ridge).theta_hat
            else:
                raise InvalidInputError(f"unknown estimator {method!r}")
            rows.append(row(method, "rmse", rmse(theta, inst.theta_star), time.perf_counter() - start))
        except Exception as exc:  # per-cell failures are recorded, the run continues
            rows.append(row(method, f"error:{type(exc).__name__}", float("nan"), time.perf_counter() - start))
    return rows


def run_static(spec: ExperimentSpec) -> list[ResultRow]:
    """RMSE of each estimator (and of the zero matrix) per grid point and replicate."""
    if spec.kind not in ("static-rmse", "rmse-vs-per-row"):
        raise InvalidInputError(f"run_static cannot run a {spec.kind!r} spec")
    tasks = [(spec, gi, rep) for gi in range(len(spec.grid)) for rep in range(spec.replicates)]
    out = []
    for rows in _map(_static_cell, tasks, spec.threads, spec.deterministic):
        out.extend(rows)
    return sorted(out, key=ResultRow.key)


def run_rmse_per_row(spec: ExperimentSpec) -> list[ResultRow]:
    """Static recovery indexed by observations per row N/d on square problems."""
    if spec.kind != "rmse-vs-per-row":
        raise InvalidInputError("run_rmse_per_row needs an 'rmse-vs-per-row' spec")
    for k, g in enumerate(spec.grid):
        if g.m != g.n:
            raise InvalidInputError(f"grid[{k}]: square problems required")
        if not g.N_per_d or g.N_per_d <= 0:
            raise InvalidInputError(f"grid[{k}].N_per_d: must be positive")
    return run_static(spec)


def _dynamic_cell(spec: ExperimentSpec, gi: int, rep: int, kind: str):
    g = spec.grid[gi]
    inst = _instance_for(spec, gi, g, rep)
    arrivals = draw_arrivals(inst, g.T, _rng(spec.seed, gi, rep, _ARRIVAL_STREAM))
    rng = _rng(spec.seed, gi, rep, _POLICY_STREAM0 + POLICY_KINDS.index(kind))
    ck_path = ck_key = None
    if spec.checkpoint_dir:
        os.makedirs(spec.checkpoint_dir, exist_ok=True)
        payload = {k: v for k, v in dataclasses.asdict(spec).items()
                   if k not in ("threads", "output_dir", "svg", "checkpoint_dir", "checkpoint_every")}
        ck_key = config_hash(payload)
        ck_path = os.path.join(spec.checkpoint_dir, f"{ck_key}-g{gi}-r{rep}-{kind}.pkl")
    start = time.perf_counter()
    trace = simulate(inst, spec.policy_config(kind), arrivals, rng, replicate=rep, checkpoint_path=ck_path,
                     checkpoint_key=ck_key, checkpoint_every=spec.checkpoint_every)
    trace.counters["wall_time"] = time.perf_counter() - start
    trace.counters["grid"] = gi
    return trace


def run_dynamic(spec: ExperimentSpec):
    """Simulate every policy on shared instances and arrival streams.

    Returns ``(traces, rows)``: one :class:`RegretTrace` per (grid point,
    replicate, policy) and summary rows (final cumulative regret, exploit
    match rate over the last ``match_window`` rounds, revenue impact).
    """
    if spec.kind != "dynamic-regret":
        raise InvalidInputError("run_dynamic needs a 'dynamic-regret' spec")
    tasks = [(spec, gi, rep, kind) for gi in range(len(spec.grid)) for rep in range(spec.replicates)
             for kind in spec.policies]
    traces = _map(_dynamic_cell, tasks, spec.threads, spec.deterministic)
    rows = []
    by_key = {}
    for tr in traces:
        gi = tr.counters["grid"]
        g = spec.grid[gi]
        by_key[(gi, tr.replicate, tr.policy)] = tr

        def row(metric, value, method=tr.policy):
            return ResultRow(spec.kind, g.m, g.n, g.r, g.K, None, g.T, tr.replicate, method, metric,
                             float(value), tr.counters["wall_time"])

        rows.append(row("regret_cum", tr.regret_cum[-1]))
        rows.append(row("explore_rounds", tr.counters["explore"]))
        rows.append(row("exploit_match_rate", exploit_match_rate(tr, spec.match_window)))
    for (gi, rep, kind), tr in by_key.items():
        if kind == "nuc-norm" and (gi, rep, "structure-ignorant") in by_key:
            g = spec.grid[gi]
            other = by_key[(gi, rep, "structure-ignorant")]
            rows.append(ResultRow(spec.kind, g.m, g.n, g.r, g.K, None, g.T, rep, "structure-ignorant-vs-nuc-norm",
                                  "revenue_impact", float(other.regret_cum[-1] - tr.regret_cum[-1]), 0.0))
    traces = sorted(traces, key=lambda tr: (tr.counters["grid"], tr.policy, tr.replicate))
    return traces, sorted(rows, key=ResultRow.key)


def exploit_match_rate(trace: RegretTrace, window: int = 1000) -> float:
    """Share of exploit rounds in the last ``window`` rounds whose regret is zero (oracle-optimal)."""
    explored = trace.counters.get("explored")
    tail = slice(max(0, trace.T - window), trace.T)
    reg = trace.regret_step[tail]
    if explored is None:
        mask = np.ones_like(reg, dtype=bool)
    else:
        mask = ~np.asarray(explored[tail], dtype=bool)
    if not mask.any():
        return 0.0
    return float(np.mean(reg[mask] <= 1e-12))


def revenue_impact(traces, replicate: int, grid: int = 0) -> np.ndarray:
    """Cumulative regret of the structure-ignorant policy minus that of nuc-norm."""
    pick = {tr.policy: tr for tr in traces if tr.replicate == replicate and tr.counters.get("grid", 0) == grid}
    return pick["structure-ignorant"].regret_cum - pick["nuc-norm"].regret_cum


# -- reporting ----------------------------------------------------------------

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def _ticks(lo, hi, log_scale):
    if log_scale:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0 ** k for k in range(a, b + 1) if lo <= 10.0 ** k <= hi] or [lo, hi]
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / 5
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 1)]


def line_chart_svg(series: dict, title: str, xlabel: str, ylabel: str, log_x: bool = False,
                   width: int = 640, height: int = 420) -> str:
    """Minimal standalone SVG line chart: one polyline per series, axes, ticks and legend."""
    from xml.sax.saxutils import escape

    left, right, top, bottom = 70, 170, 40, 55
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    if log_x:
        xs = xs[xs > 0]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = min(0.0, float(np.nanmin(ys))), float(np.nanmax(ys))
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    fx = (lambda v: math.log10(v)) if log_x else (lambda v: v)
    pw, ph = width - left - right, height - top - bottom

    def px(v):
        return left + (fx(v) - fx(x0)) / (fx(x1) - fx(x0)) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for v in _ticks(x0, x1, log_x):
        out.append(f'<line x1="{px(v):.2f}" y1="{top + ph}" x2="{px(v):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(v):.2f}" y="{top + ph + 18}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(y0, y1, False):
        out.append(f'<line x1="{left - 5}" y1="{py(v):.2f}" x2="{left}" y2="{py(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{py(v) + 4:.2f}" text-anchor="end">{v:g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    for k, (name, (x, y)) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = np.isfinite(y) & ((x > 0) if log_x else np.isfinite(x))
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[keep], y[keep]))
        out.append(f'<polyline class="series" data-name="{escape(str(name))}" fill="none" '
                   f'stroke="{color}" stroke-width="1.6" points="{pts}"/>')
        ly = top + 14 + 18 * k
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}">{escape(str(name))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _regret_series(traces, max_points=400):
    series = {}
    for kind in sorted({tr.policy for tr in traces}):
        curves = np.array([tr.regret_cum for tr in traces if tr.policy == kind])
        med = np.median(curves, axis=0)
        T = med.shape[0]
        idx = np.unique(np.geomspace(1, T, num=min(T, max_points)).astype(int)) - 1
        series[kind] = (idx + 1, med[idx])
    return series


def _rmse_series(rows, per_row: bool):
    series = {}
    methods = sorted({r.method for r in rows if r.metric == "rmse"})
    for meth in methods:
        pts: dict = {}
        for r in rows:
            if r.method == meth and r.metric == "rmse":
                x = r.N / r.m if per_row else r.N
                label = f"{meth} (d={r.m})" if per_row else meth
                pts.setdefault(label, {}).setdefault(x, []).append(r.value)
        for label, d in pts.items():
            xs = sorted(d)
            series[label] = (np.array(xs, float), np.array([np.median(d[x]) for x in xs]))
    return series


def emit_report(table, output_dir, formats=("csv", "svg"), deterministic: bool = True,
                stride: int = 1) -> list[str]:
    """Write a result table (list of ResultRow or RegretTrace) as CSV and optional SVG charts.

    Returns the written paths. Files are written to temporaries and renamed so
    a failure leaves no partial outputs.
    """
    table = list(table)
    if not table:
        raise InvalidInputError("nothing to report: empty table")
    os.makedirs(output_dir, exist_ok=True)
    files: dict = {}
    if isinstance(table[0], RegretTrace):
        buf = io.StringIO()
        traces_to_csv(table, buf, stride=stride)
        files["regret_trace.csv"] = buf.getvalue()
        if {"nuc-norm", "structure-ignorant"} <= {tr.policy for tr in table}:
            buf = io.StringIO()
            buf.write("replicate,t,revenue_impact\n")
            for rep in sorted({tr.replicate for tr in table}):
                imp = revenue_impact(table, rep, grid=table[0].counters.get("grid", 0))
                for t in range(stride - 1, len(imp), stride) if stride > 1 else range(len(imp)):
                    buf.write(f"{rep},{t + 1},{float(imp[t])!r}\n")
            files["revenue_impact.csv"] = buf.getvalue()
        if "svg" in formats:
            files["regret.svg"] = line_chart_svg(_regret_series(table), "Cumulative regret (median)",
                                                 "t (log scale)", "regret", log_x=True)
    else:
        buf = io.StringIO()
        write_results_csv(table, buf, deterministic=deterministic)
        files["results.csv"] = buf.getvalue()
        rmse_rows = [r for r in table if r.metric == "rmse"]
        if "svg" in formats and rmse_rows:
            per_row = rmse_rows[0].experiment == "rmse-vs-per-row"
            files["rmse.svg"] = line_chart_svg(_rmse_series(rmse_rows, per_row), "RMSE (median)",
                                               "N / d" if per_row else "N", "RMSE")
    written = []
    tmp_paths = []
    try:
        for name, text in files.items():
            tmp = os.path.join(output_dir, f".{name}.tmp")
            with open(tmp, "w", newline="") as fh:
                fh.write(text)
            tmp_paths.append((tmp, os.path.join(output_dir, name)))
        for tmp, final in tmp_paths:
            os.replace(tmp, final)
            written.append(final)
    finally:
        for tmp, _ in tmp_paths:
            if os.path.exists(tmp):
                os.remove(tmp)
    return written
