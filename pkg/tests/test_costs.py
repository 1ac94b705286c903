import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denoise_nas.costs import (OpCost, ParetoPoint, build_cost_table, candidate_cost, conv_bn_relu_cost,
                               conv_cost, dumps_report, load_latency_table, mac_count, network_cost,
                               pareto_front, report)
from denoise_nas.nn import BlockKind, CandidateSpec, UNetConfig, build_unet, reference_base_config
from denoise_nas.search import SearchRun, TrainConfig, default_rosters

from conftest import dominated_oracle, reference_derived_config

RES = (256, 256)


# ----------------------------------------------------------------- MAC formulas


def test_pointwise_single_mac():
    assert conv_cost(1, 1, 1, 1, 1).macs == 1


def test_depthwise_closed_form():
    assert conv_cost(8, 8, 3, 16, 16, groups=8).macs == 8 * 9 * 256


def test_mac_count_dispatch():
    spec = CandidateSpec(BlockKind.ALT3, 3)
    assert mac_count(spec, 8, (16, 16)).macs == 3 * mac_count(BlockKind.ALT3, 8, (16, 16)).macs
    assert mac_count(UNetConfig(width=8), resolution=(64, 64)) == network_cost(UNetConfig(width=8), (64, 64))
    with pytest.raises(ValueError):
        mac_count(BlockKind.ALT0, None)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(list(BlockKind)), st.integers(1, 8), st.sampled_from([4, 8, 16, 64]),
       st.sampled_from([8, 16, 32]))
def test_count_linearity(kind, n, c, hw):
    one = candidate_cost(CandidateSpec(kind, 1), c, hw, hw)
    many = candidate_cost(CandidateSpec(kind, n), c, hw, hw)
    assert many.macs == n * one.macs and many.params == n * one.params


def test_sequential_composition_sums():
    a, b = conv_cost(4, 8, 3, 10, 10), conv_cost(8, 8, 1, 10, 10)
    s = a + b
    assert s.macs == a.macs + b.macs and s.params == a.params + b.params


def test_folding_removes_only_bn_pass():
    folded = conv_bn_relu_cost(16, 32, 32, folded=True)
    unfolded = conv_bn_relu_cost(16, 32, 32, folded=False)
    assert unfolded.macs - folded.macs == 16 * 32 * 32
    assert folded.foldable
    conv = conv_cost(16, 16, 3, 32, 32, groups=16)
    assert folded.macs - conv.macs == 2 * 16 * 32 * 32  # ReLU + residual only


def test_opcost_rejects_negative():
    with pytest.raises(ValueError):
        OpCost(-1, 0)


def test_network_params_match_built_network():
    cfg = UNetConfig(width=8, stages={"Enc1": "2xAlt3", "Dec2": "1xAlt1", "Enc3": "3xAlt2"})
    assert network_cost(cfg, (64, 64)).params == build_unet(cfg).num_parameters()


# ----------------------------------------------------------------- full-scale regression


def test_base_gmacs_near_65():
    g = network_cost(reference_base_config(64), RES).gmacs
    assert abs(g - 65) <= 0.15 * 65


def test_derived_gmacs_near_42_and_param_drop(ref_alphas):
    base, derived = reference_derived_config(ref_alphas)
    b, d = network_cost(base, RES), network_cost(derived, RES)
    assert abs(d.gmacs - 42) <= 0.20 * 42
    assert d.macs / b.macs <= 0.75
    assert abs(100 * (1 - d.params / b.params) - 12) <= 5


# ----------------------------------------------------------------- penalty table


def test_table_covers_full_roster():
    cfg = reference_base_config(64)
    table = build_cost_table(default_rosters(cfg), cfg, RES)
    assert len(table.rows()) == 108
    for stage in table.stages:
        pen = table.penalties(stage)
        assert pen.max() == 1.0 and pen.min() > 0


def test_penalty_strictly_increasing_in_count():
    cfg = reference_base_config(64)
    table = build_cost_table(default_rosters(cfg), cfg, RES)
    for stage, entries in table.stages.items():
        for kind in BlockKind:
            pen = [e.penalty for e in entries if e.candidate.kind is kind]
            assert all(b > a for a, b in zip(pen, pen[1:])), (stage, kind)


def test_enc1_kind_ordering_at_equal_count():
    cfg = reference_base_config(64)
    table = build_cost_table(default_rosters(cfg), cfg, RES)
    for n in (1, 2):
        p = {k: table.entry("Enc1", CandidateSpec(k, n)).penalty for k in BlockKind}
        assert p[BlockKind.ALT3] < p[BlockKind.ALT2] < p[BlockKind.ALT0]


def test_single_candidate_stage_anchor():
    cfg = UNetConfig(width=4, enc_counts=(1,), mid_count=1, dec_counts=(1,))
    rosters = default_rosters(cfg, overrides={"Enc1": ["2xAlt0"], "Dec1": ["1xAlt3", "2xAlt3"]})
    table = build_cost_table(rosters, cfg, (8, 8))
    assert table.penalties("Enc1").tolist() == [1.0]
    assert table.penalties("Dec1").tolist() == [0.5, 1.0]


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_penalty_scale_invariant(c, seed):
    r = np.random.default_rng(seed)
    cfg = UNetConfig(width=4, enc_counts=(1,), mid_count=1, dec_counts=(1,))
    rosters = default_rosters(cfg, overrides={"Enc1": ["1xAlt3", "2xAlt3", "1xAlt0"], "Dec1": ["1xAlt3"]})
    lat = {f"{s}/{i}": float(v) for s in ("Enc1", "Dec1") for i, v in
           zip(["1xAlt3", "2xAlt3", "1xAlt0"], r.uniform(0.1, 5.0, 3))}
    scaled = {k: v * c for k, v in lat.items()}
    a = build_cost_table(rosters, cfg, (8, 8), lat, eta=0.3)
    b = build_cost_table(rosters, cfg, (8, 8), scaled, eta=0.3)
    np.testing.assert_allclose(a.penalties("Enc1"), b.penalties("Enc1"), rtol=1e-12)


def test_latency_blend_and_missing_entry(tmp_path):
    cfg = UNetConfig(width=4, enc_counts=(1,), mid_count=1, dec_counts=(1,))
    rosters = default_rosters(cfg, overrides={"Enc1": ["1xAlt3", "1xAlt0"], "Dec1": ["1xAlt3", "1xAlt0"]})
    path = tmp_path / "lat.yaml"
    path.write_text("unit: ms\nlatency:\n  Enc1/1xAlt3: 1.0\n  Enc1/1xAlt0: 4.0\n  Dec1/1xAlt3: 2.0\n")
    lat = load_latency_table(path)
    assert lat == {"Enc1/1xAlt3": 1.0, "Enc1/1xAlt0": 4.0, "Dec1/1xAlt3": 2.0}
    with pytest.raises(KeyError, match="Dec1/1xAlt0"):
        build_cost_table(rosters, cfg, (8, 8), lat, eta=0.5)
    lat["Dec1/1xAlt0"] = 2.0
    table = build_cost_table(rosters, cfg, (8, 8), lat, eta=0.0)
    assert table.penalties("Enc1").tolist() == [0.25, 1.0]
    assert table.penalties("Dec1").tolist() == [1.0, 1.0]
    mac_only = build_cost_table(rosters, cfg, (8, 8), lat, eta=1.0)
    half = build_cost_table(rosters, cfg, (8, 8), lat, eta=0.5)
    np.testing.assert_allclose(half.penalties("Enc1"), 0.5 * mac_only.penalties("Enc1") + 0.5 * np.array([0.25, 1.0]))


@pytest.mark.parametrize("text,msg", [
    ("unit: s\nlatency: {Enc1/1xAlt3: 1}\n", "unit"),
    ("Enc1-1xAlt3: 1\n", "look like"),
    ("Enc1/1xAlt3: -2\n", "nonnegative"),
    ("- 1\n- 2\n", "mapping"),
])
def test_latency_file_errors(tmp_path, text, msg):
    path = tmp_path / "lat.yaml"
    path.write_text(text)
    with pytest.raises(ValueError, match=msg):
        load_latency_table(path)


def test_latency_file_json_and_missing(tmp_path):
    path = tmp_path / "lat.json"
    path.write_text(json.dumps({"Enc2/2xAlt3": 0.5}))
    assert load_latency_table(path) == {"Enc2/2xAlt3": 0.5}
    with pytest.raises(FileNotFoundError):
        load_latency_table(tmp_path / "nope.json")


def test_eta_needs_latency():
    cfg = UNetConfig(width=4, enc_counts=(1,), mid_count=1, dec_counts=(1,))
    with pytest.raises(ValueError, match="latency"):
        build_cost_table(default_rosters(cfg), cfg, (8, 8), eta=0.5)


# ----------------------------------------------------------------- Pareto


def test_pareto_examples():
    p = ParetoPoint(40, 100, "a")
    assert pareto_front([p]) == [p]
    pts = [ParetoPoint(40, 100, "a"), ParetoPoint(39, 50, "b"), ParetoPoint(38, 60, "c")]
    assert [q.label for q in pareto_front(pts)] == ["b", "a"]
    with pytest.raises(ValueError):
        pareto_front([])
    with pytest.raises(ValueError):
        ParetoPoint(float("nan"), 1.0)


def _random_points(r, n):
    # coarse grids force many ties in cost and quality
    q = r.integers(0, 20, n) / 2.0 if r.random() < 0.5 else r.normal(35, 3, n)
    c = r.integers(0, 20, n) * 5.0 if r.random() < 0.5 else r.uniform(1, 200, n)
    return [ParetoPoint(float(a), float(b), f"m{i}") for i, (a, b) in enumerate(zip(q, c))]


def _key(p):
    return (p.cost, p.quality, p.label)


def test_pareto_matches_quadratic_oracle_on_random_sets():
    r = np.random.default_rng(7)
    for _ in range(1000):
        pts = _random_points(r, int(r.integers(1, 201)))
        front = pareto_front(pts)
        assert sorted(map(_key, front)) == sorted(map(_key, dominated_oracle(pts)))
        assert [p.cost for p in front] == sorted(p.cost for p in front)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 60), st.floats(0, 1000)), min_size=1, max_size=60))
def test_pareto_front_properties(raw):
    pts = [ParetoPoint(q, c, str(i)) for i, (q, c) in enumerate(raw)]
    front = pareto_front(pts)
    assert not any(a.dominates(b) for a in front for b in front)
    excluded = [p for p in pts if p not in front]
    assert all(any(f.dominates(p) for f in front) for p in excluded)


def test_benchmark_sidd_front(bench_points):
    pts = [ParetoPoint(q, c, m) for m, q, c in zip(bench_points["models"], bench_points["SIDD"]["psnr"], bench_points["SIDD"]["gmacs"])]
    labels = [p.label for p in pareto_front(pts)]
    assert "ERN-Net" in labels and "NAFNet" in labels
    assert labels == ["ERN-Net", "NAFNet"]


# ----------------------------------------------------------------- report


def _run_with(derived: UNetConfig) -> SearchRun:
    return SearchRun(TrainConfig(), derived, default_rosters(derived), trace={"L_P": [3.0, 2.5]},
                     alpha_history=[{}], derived=derived)


def test_report_base_vs_base_zero_delta():
    base = reference_base_config(64)
    doc = report(_run_with(base), None, base, RES)
    assert doc["param_delta_pct"] == 0.0 and doc["mac_ratio"] == 1.0


def test_report_derived_and_deterministic(ref_alphas, bench_points):
    base, derived = reference_derived_config(ref_alphas, width=8)
    rosters = default_rosters(base)
    table = build_cost_table(rosters, base, RES)
    pts = [ParetoPoint(q, c, m) for m, q, c in zip(bench_points["models"], bench_points["SIDD"]["psnr"], bench_points["SIDD"]["gmacs"])]
    run = _run_with(derived)
    doc = report(run, table, base, RES, width=64, points=pts)
    assert doc["width"] == 64
    assert -17 <= doc["param_delta_pct"] <= -7
    assert doc["penalty_trace"] == [3.0, 2.5]
    assert set(doc["derived_penalty"]) == set(table.stages)
    on_front = {p["label"] for p in doc["pareto"] if p["on_front"]}
    assert on_front == {"ERN-Net", "NAFNet"}
    reloaded = SearchRun.from_dict(json.loads(json.dumps(run.to_dict())))
    again = report(reloaded, table, base, RES, width=64, points=pts)
    assert dumps_report(again) == dumps_report(doc)


def test_report_requires_derived():
    run = _run_with(reference_base_config())
    run.derived = None
    with pytest.raises(ValueError, match="derived"):
        report(run, None, reference_base_config(), RES)
