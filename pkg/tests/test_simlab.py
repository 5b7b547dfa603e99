import io
import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from assortmax import simlab
from assortmax.bandit import read_traces_csv
from assortmax.choice import InvalidInputError
from assortmax.estimator import tail_singular_sum
from assortmax.simlab import (ResultRow, emit_report, generate_instance, line_chart_svg, load_spec, parse_spec,
                              read_results_csv, run_dynamic, run_rmse_per_row, run_static, write_results_csv)


def static_spec(**kw):
    d = {"kind": "static-rmse", "grid": [{"m": 12, "n": 10, "r": 2, "K": 3, "N": 800}], "replicates": 2,
         "seed": 5, "estimator": {"max_outer_iters": 60}}
    d.update(kw)
    return parse_spec(d)


def dynamic_spec(**kw):
    d = {"kind": "dynamic-regret", "grid": [{"m": 4, "n": 6, "r": 1, "K": 2, "T": 400}], "replicates": 2,
         "seed": 3, "policy": {"C": 0.5, "r": 1, "max_outer_iters": 30}}
    d.update(kw)
    return parse_spec(d)


# -- instance generation -------------------------------------------------------------

def test_full_rank_instance_is_normalized_gaussian():
    inst = generate_instance(5, 7, 5, 3, np.random.default_rng(0))
    raw = np.random.default_rng(0).standard_normal((5, 7))
    np.testing.assert_allclose(inst.theta_star, raw / raw.std(ddof=1), atol=1e-12)


@pytest.mark.parametrize("m,n,r", [(10, 10, 1), (20, 15, 3), (8, 30, 2)])
def test_instance_rank_and_scale(m, n, r):
    inst = generate_instance(m, n, r, 2, np.random.default_rng(m * n + r))
    s1 = np.linalg.svd(inst.theta_star, compute_uv=False)[0]
    assert tail_singular_sum(inst.theta_star, r) <= 1e-9 * s1
    assert inst.theta_star.std(ddof=1) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_array_equal(inst.mu_star, np.full(m, 1.0 / m))


def test_revenue_rules():
    rng = np.random.default_rng(1)
    assert np.all(generate_instance(3, 4, 1, 2, rng, "constant", 2.5).W == 2.5)
    W = generate_instance(3, 4, 1, 2, rng, "lognormal", 0.5).W
    assert np.all(W > 0)
    W = generate_instance(30, 40, 1, 2, rng).W
    assert 0 <= W.min() and W.max() < 1
    with pytest.raises(InvalidInputError):
        generate_instance(3, 4, 1, 2, rng, "pareto")


def test_rank_above_dimensions_rejected():
    with pytest.raises(InvalidInputError):
        generate_instance(3, 4, 4, 2, np.random.default_rng(0))


# -- spec validation ---------------------------------------------------------------------

@pytest.mark.parametrize("patch,where", [
    ({"replicates": 0}, "replicates"),
    ({"bogus": 1}, "unknown keys"),
    ({"grid": [{"m": 3, "n": 3, "r": 4, "K": 2, "N": 10}]}, "grid[0].r"),
    ({"grid": [{"m": 3, "n": 3, "r": 1, "K": 5, "N": 10}]}, "grid[0].K"),
    ({"grid": [{"m": 3, "n": 3, "r": 1, "K": 2}]}, "grid[0].N"),
    ({"estimator": {"lambda": 0.1}}, "estimator"),
    ({"revenue_rule": "pareto"}, "revenue_rule"),
])
def test_spec_errors_are_field_anchored(patch, where):
    with pytest.raises(InvalidInputError, match=__import__("re").escape(where)):
        static_spec(**patch)


def test_per_row_spec_rejects_zero_ratio():
    with pytest.raises(InvalidInputError, match="N_per_d"):
        parse_spec({"kind": "rmse-vs-per-row", "grid": [{"m": 5, "n": 5, "r": 1, "K": 2, "N_per_d": 0}]})


def test_dynamic_spec_rejects_bad_policy_settings():
    with pytest.raises(InvalidInputError, match="policy"):
        dynamic_spec(policy={"C": -1.0})
    with pytest.raises(InvalidInputError, match="policies"):
        dynamic_spec(policies=["nuc-norm", "ucb"])


def test_load_spec_reports_line_and_column(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n "kind": "static-rmse",\n "grid": [}\n')
    with pytest.raises(InvalidInputError, match=r"bad.json:3:\d+"):
        load_spec(path)


def test_shipped_configs_parse():
    root = os.path.join(os.path.dirname(__file__), "..", "configs")
    names = sorted(f for f in os.listdir(root) if f.endswith(".json"))
    assert names
    for name in names:
        load_spec(os.path.join(root, name))


# -- static experiments ---------------------------------------------------------------------

def test_run_static_rows_and_zero_baseline():
    spec = static_spec()
    rows = run_static(spec)
    assert {(r.method, r.replicate) for r in rows} == {(m, k) for m in ("zero", "fgd", "per-type-mle")
                                                       for k in range(2)}
    for r in rows:
        assert r.metric == "rmse" and np.isfinite(r.value) and r.value >= 0
    for k in range(2):
        inst = simlab._instance_for(spec, 0, spec.grid[0], k)
        zero = next(r.value for r in rows if r.method == "zero" and r.replicate == k)
        assert zero == pytest.approx(np.sqrt(np.mean(inst.theta_star ** 2)), abs=1e-14)
        assert zero == pytest.approx(1.0, abs=0.05)


def test_unobserved_type_contributes_zero_row_error():
    spec = static_spec(grid=[{"m": 30, "n": 6, "r": 1, "K": 2, "N": 20}], replicates=1,
                       estimator={"methods": ["per-type-mle"]})
    inst = simlab._instance_for(spec, 0, spec.grid[0], 0)
    from assortmax.choice import sample_observations
    from assortmax.estimator import per_type_mle, rmse

    log_ = sample_observations(inst, 20, simlab._rng(spec.seed, 0, 0, simlab._DATA_STREAM))
    est = per_type_mle(log_, 30, 6)
    missing = sorted(set(range(30)) - set(log_.types.tolist()))
    assert missing
    np.testing.assert_array_equal(est.theta_hat[missing], 0.0)
    row = next(r for r in run_static(spec) if r.method == "per-type-mle")
    assert row.method == "per-type-mle" and row.value == pytest.approx(rmse(est.theta_hat, inst.theta_star))


def test_estimator_failure_recorded_and_run_continues():
    spec = static_spec(estimator={"methods": ["fgd", "magic"], "max_outer_iters": 20})
    rows = run_static(spec)
    assert any(r.metric == "error:InvalidInputError" and r.method == "magic" for r in rows)
    assert sum(r.method == "fgd" and r.metric == "rmse" for r in rows) == 2


def test_rmse_per_row_monotone_in_observations():
    spec = parse_spec({"kind": "rmse-vs-per-row", "replicates": 3, "seed": 2,
                       "estimator": {"methods": ["fgd"], "max_outer_iters": 200},
                       "grid": [{"m": 20, "n": 20, "r": 2, "K": 5, "N_per_d": x} for x in (10, 40, 160)]})
    rows = run_rmse_per_row(spec)
    med = [np.median([r.value for r in rows if r.method == "fgd" and r.N == 20 * x]) for x in (10, 40, 160)]
    assert med[0] >= med[1] >= med[2]


def test_static_results_independent_of_replicate_order():
    spec = static_spec()
    tasks = [(spec, 0, rep) for rep in range(spec.replicates)]
    fwd = simlab._map(simlab._static_cell, tasks, 1, True)
    bwd = simlab._map(simlab._static_cell, tasks[::-1], 1, True)[::-1]
    assert [[r.value for r in rows] for rows in fwd] == [[r.value for r in rows] for rows in bwd]


def test_results_csv_round_trip(tmp_path):
    rows = run_static(static_spec())
    path = tmp_path / "results.csv"
    write_results_csv(rows, path)
    back = read_results_csv(path)
    assert [r.key() for r in back] == [r.key() for r in sorted(rows, key=ResultRow.key)]
    assert [r.value for r in back] == [r.value for r in sorted(rows, key=ResultRow.key)]
    buf = io.StringIO()
    write_results_csv(back, buf)
    assert buf.getvalue() == path.read_text()


# -- dynamic experiments -------------------------------------------------------------------

def test_run_dynamic_traces_and_summary():
    spec = dynamic_spec()
    traces, rows = run_dynamic(spec)
    assert len(traces) == 2 * len(spec.policies)
    for tr in traces:
        assert tr.T == 400
        if tr.policy == "oracle":
            assert np.all(tr.regret_step == 0)
    impact = [r.value for r in rows if r.metric == "revenue_impact"]
    assert len(impact) == 2
    metrics = {r.metric for r in rows}
    assert {"regret_cum", "explore_rounds", "exploit_match_rate"} <= metrics


def test_dynamic_common_arrivals_across_policies():
    spec = dynamic_spec()
    g = spec.grid[0]
    a = simlab._dynamic_cell(spec, 0, 1, "nuc-norm")
    b = simlab._dynamic_cell(spec, 0, 1, "oracle")
    inst = simlab._instance_for(spec, 0, g, 1)
    arrivals = simlab.draw_arrivals(inst, g.T, simlab._rng(spec.seed, 0, 1, simlab._ARRIVAL_STREAM))
    assert a.T == b.T == len(arrivals)


def test_dynamic_threads_byte_identical(tmp_path):
    spec1 = dynamic_spec(threads=1)
    spec2 = dynamic_spec(threads=2)
    out = []
    for k, spec in enumerate((spec1, spec2)):
        traces, rows = run_dynamic(spec)
        d = tmp_path / str(k)
        emit_report(traces, d, ("csv",))
        emit_report(rows, d / "summary", ("csv",))
        out.append([(d / f).read_bytes() for f in ("regret_trace.csv", "revenue_impact.csv",
                                                   "summary/results.csv")])
    assert out[0] == out[1]


def test_dynamic_checkpoint_directory_cleaned_after_success(tmp_path):
    spec = dynamic_spec(replicates=1, policies=["nuc-norm"], checkpoint_dir=str(tmp_path / "ck"),
                        checkpoint_every=50)
    plain, _ = run_dynamic(dynamic_spec(replicates=1, policies=["nuc-norm"]))
    traces, _ = run_dynamic(spec)
    np.testing.assert_array_equal(traces[0].regret_step, plain[0].regret_step)
    assert os.listdir(tmp_path / "ck") == []


# -- reporting -----------------------------------------------------------------------------

def test_emit_report_trace_round_trip_and_svg(tmp_path):
    traces, _ = run_dynamic(dynamic_spec())
    paths = emit_report(traces, tmp_path, ("csv", "svg"))
    names = sorted(os.path.basename(p) for p in paths)
    assert names == ["regret.svg", "regret_trace.csv", "revenue_impact.csv"]
    back = read_traces_csv(tmp_path / "regret_trace.csv")
    for a, b in zip(sorted(traces, key=lambda x: (x.policy, x.replicate)), back):
        np.testing.assert_array_equal(a.regret_step, b.regret_step)
    root = ET.parse(tmp_path / "regret.svg").getroot()
    lines = root.findall(".//{http://www.w3.org/2000/svg}polyline")
    assert {el.get("data-name") for el in lines} == {tr.policy for tr in traces}


def test_emit_report_rmse_chart_series(tmp_path):
    rows = run_static(static_spec())
    emit_report(rows, tmp_path)
    root = ET.parse(tmp_path / "rmse.svg").getroot()
    lines = root.findall(".//{http://www.w3.org/2000/svg}polyline")
    assert len(lines) == len({r.method for r in rows})


def test_emit_report_rejects_empty_and_unwritable(tmp_path):
    with pytest.raises(InvalidInputError):
        emit_report([], tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(run_static(static_spec(replicates=1)), blocker / "sub")


def test_line_chart_is_valid_xml_with_escaping():
    svg = line_chart_svg({"a<b": ([1, 10, 100], [0, 1, 2]), "c&d": ([1, 100], [2, 0])}, "t & u", "x", "y",
                         log_x=True)
    root = ET.fromstring(svg)
    assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2


def test_spec_json_round_trip(tmp_path):
    spec = dynamic_spec()
    path = tmp_path / "s.json"
    data = {"kind": spec.kind, "grid": [{"m": 4, "n": 6, "r": 1, "K": 2, "T": 400}], "seed": spec.seed}
    path.write_text(json.dumps(data))
    assert load_spec(path).grid[0].T == 400
