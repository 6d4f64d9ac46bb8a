import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ptdit.analysis import (
    RedundancyReport,
    attention_flops_global,
    closed_form_ratio,
    complexity_table,
    instrumented_flop_count,
    memory_estimate,
    neighbor_mask,
    ptdit_attention_flops,
    redundancy_profile,
    report_json,
    rows_to_tsv,
)
from ptdit.attention import Attention, AttentionConfig, AttentionMapCapture
from ptdit.grid import ConfigError
from ptdit.model import ConditioningInput, GlobalAttentionBlock, ModelConfig, build_model, count_parameters
from ptdit.numerics import Tensor, count_flops


def test_global_examples():
    assert attention_flops_global(1, 1) == 2
    assert attention_flops_global(1024, 288) == 603_979_776
    assert attention_flops_global(2048, 288) == 4 * attention_flops_global(1024, 288)
    with pytest.raises(ValueError):
        attention_flops_global(0, 4)


@pytest.mark.parametrize(
    "n, ratio, expect",
    [(256, (1, 2, 2), 0.34375), (1024, (1, 4, 4), 0.09765625 + 32 / 1024 - 0.03125), (4096, (1, 8, 8), 1 / 4096 + 1 / 64 + 128 / 4096)],
)
def test_closed_form_ratios(n, ratio, expect):
    rep = ptdit_attention_flops(n, 288, ratio)
    assert rep.ratio_vs_global == pytest.approx(expect, abs=1e-15)
    assert abs(100 * rep.ratio_vs_global - 100 * rep.reported_value) <= 0.1
    assert rep.reconciled


def test_largest_schedule_entry_flagged():
    rep = ptdit_attention_flops(16384, 1152, (1, 16, 16))
    assert rep.ratio_vs_global == pytest.approx(0.0351715087890625, abs=1e-15)
    assert rep.reported_value == 0.023 and rep.reconciled is False
    assert rep.row()["status"] == "UNRECONCILED"


@settings(max_examples=50)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 16), st.integers(1, 64))
def test_report_invariants(pf, ph, pw, k, d):
    p = pf * ph * pw
    n = k * p
    rep = ptdit_attention_flops(n, d, (pf, ph, pw))
    assert min(rep.giim_sa, rep.giim_cs, rep.tcm_wsa, rep.tcm_swsa, rep.baseline_sa) > 0
    assert rep.ratio_vs_global == pytest.approx(rep.total / rep.baseline_sa)
    assert rep.ratio_vs_global == pytest.approx(closed_form_ratio(n, p), rel=1e-12)


def test_unit_window_degenerates():
    n = 64
    assert ptdit_attention_flops(n, 8, (1, 1, 1)).ratio_vs_global == pytest.approx(2 + 2 / n)


def test_non_divisible_rejected():
    with pytest.raises(ConfigError):
        ptdit_attention_flops(250, 8, (1, 2, 2))


def test_instrumented_tiny_block_matches_closed_form():
    cfg = ModelConfig(layers=1)
    m = build_model(cfg, seed=0)
    x = Tensor(np.random.default_rng(0).standard_normal((3, 1, 1, 8, 8)))
    cond = ConditioningInput(np.array([1, 2, 3]), class_label=np.array([0, 1, 2]))

    def run():
        m(x, cond)
        return 3

    rep = instrumented_flop_count(run, 16, 64, (1, 2, 2))
    ref = ptdit_attention_flops(16, 64, (1, 2, 2))
    assert (rep.giim_sa, rep.giim_cs, rep.tcm_wsa, rep.tcm_swsa) == (ref.giim_sa, ref.giim_cs, ref.tcm_wsa, ref.tcm_swsa)
    assert rep.extra["projection_macs"] > 0 and rep.extra["mlp_macs"] > 0
    # two context tokens: label and timestep
    assert rep.extra["cond_attention_macs"] == 2 * 16 * 2 * 64


def test_instrumented_global_block_matches_eq():
    blk = GlobalAttentionBlock(32, 4).init_params(0)
    x = Tensor(np.random.default_rng(1).standard_normal((2, 20, 32)))
    c = Tensor(np.random.default_rng(2).standard_normal((2, 32)))

    def run():
        blk(x, c)
        return 2

    rep = instrumented_flop_count(run, 20, 32, (1, 1, 1))
    assert rep.extra["global_attention_macs"] == attention_flops_global(20, 32)


def test_empty_conditioning_costs_nothing():
    attn = Attention(AttentionConfig(8, 2), site="cond").init_params(0)
    with count_flops() as c:
        attn(Tensor(np.ones((1, 5, 8))), Tensor(np.ones((1, 0, 8))))
    assert c.macs(kind="attention") == 0


# -- memory -------------------------------------------------------------------


def test_memory_batch_zero_is_parameters_only():
    cfg = ModelConfig()
    est = memory_estimate(cfg, 16, 0)
    assert est.total == est.parameter_bytes == 4 * count_parameters(cfg)


@settings(max_examples=30)
@given(st.integers(1, 8), st.integers(0, 4))
def test_memory_monotone(k, b):
    cfg = ModelConfig()
    n = 4 * k
    a = memory_estimate(cfg, n, b)
    assert memory_estimate(cfg, n + 4, b).total >= a.total
    assert memory_estimate(cfg, n, b + 1).total >= a.total
    assert a.total >= a.parameter_bytes


def test_video_frame_doubling_subquadratic():
    cfg = ModelConfig(frames=4, ratio=(4, 2, 2))
    n1 = 4 * 16
    cfg2 = cfg.replace(frames=8)
    a, b = memory_estimate(cfg, n1, 1), memory_estimate(cfg2, 2 * n1, 1)
    assert b.attention_map_bytes / a.attention_map_bytes < 4.0
    assert b.global_attention_map_bytes / a.global_attention_map_bytes == pytest.approx(4.0)


# -- redundancy -----------------------------------------------------------------


def stochastic(rng, n):
    a = rng.random((n, n))
    return a / a.sum(axis=1, keepdims=True)


def test_identical_rows_are_fully_redundant():
    row = stochastic(np.random.default_rng(0), 64)[0]
    rep = redundancy_profile(np.tile(row, (64, 1)), (2, 2), neighbor_radius=1)
    np.testing.assert_allclose(rep.neighbor_similarity, 1.0, atol=1e-12)
    np.testing.assert_allclose(rep.distant_similarity, 1.0, atol=1e-12)


def test_constructed_orthogonal_neighbors():
    grid, win, radius = (8, 8), (2, 2), 1
    a = np.zeros((64, 64))
    for wy in range(4):
        for wx in range(4):
            mask = neighbor_mask(grid, win, wy, wx, radius)
            near = np.flatnonzero(mask)
            members = [(wy * 2 + dy) * 8 + wx * 2 + dx for dy in range(2) for dx in range(2)]
            for k, r in enumerate(members):
                a[r, ~mask] = 1.0
                a[r, near[k]] = 1.0
    rep = redundancy_profile(a, win, radius)
    np.testing.assert_allclose(rep.neighbor_similarity, 0.0, atol=1e-12)
    np.testing.assert_allclose(rep.distant_similarity, 1.0, atol=1e-12)


def test_matches_brute_force_oracle():
    a = stochastic(np.random.default_rng(1), 256)
    rep = redundancy_profile(a, (4, 4))
    neigh, dist = oracles.cosine_redundancy(a, (16, 16), (4, 4), 4)
    assert np.abs(rep.neighbor_similarity - neigh).max() < 1e-10
    assert np.abs(rep.distant_similarity - dist).max() < 1e-10


def test_column_sets_partition_keys():
    for wy, wx, r in [(0, 0, 1), (1, 2, 2), (3, 3, 0)]:
        m = neighbor_mask((8, 8), (2, 2), wy, wx, r)
        assert m.sum() + (~m).sum() == 64 and m.any()


def test_empty_distant_set_is_nan():
    rep = redundancy_profile(stochastic(np.random.default_rng(2), 16), (2, 2))
    assert np.all(np.isnan(rep.distant_similarity))
    assert np.isnan(rep.mean_distant)
    json.loads(report_json(rep))


def test_accepts_capture_and_averages_heads():
    rng = np.random.default_rng(3)
    w = np.stack([stochastic(rng, 16) for _ in range(2)])[None]
    cap = AttentionMapCapture(w.astype(np.float32), "giim_sa")
    rep = redundancy_profile(cap, (2, 2), neighbor_radius=0)
    ref = redundancy_profile(w.mean(axis=(0, 1)), (2, 2), neighbor_radius=0)
    np.testing.assert_allclose(rep.neighbor_similarity, ref.neighbor_similarity, atol=1e-6)


def test_geometry_errors():
    with pytest.raises(ConfigError):
        redundancy_profile(np.ones((15, 15)), (2, 2))
    with pytest.raises(ConfigError):
        redundancy_profile(np.ones((16, 16)), (3, 3))
    with pytest.raises(ConfigError):
        redundancy_profile(np.ones((16, 12)), (2, 2))


def grid_symmetry(kind, side):
    ys, xs = np.divmod(np.arange(side * side), side)
    if kind == "flip_x":
        return ys * side + (side - 1 - xs)
    if kind == "flip_y":
        return (side - 1 - ys) * side + xs
    return xs * side + ys  # transpose


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["flip_x", "flip_y", "transpose"]), st.integers(0, 3))
def test_invariant_under_window_preserving_symmetries(seed, kind, radius):
    a = stochastic(np.random.default_rng(seed), 64)
    perm = grid_symmetry(kind, 8)
    b = a[np.ix_(perm, perm)]
    ra, rb = redundancy_profile(a, (2, 2), radius), redundancy_profile(b, (2, 2), radius)
    assert ra.mean_neighbor == pytest.approx(rb.mean_neighbor, abs=1e-12, nan_ok=True)
    assert ra.mean_distant == pytest.approx(rb.mean_distant, abs=1e-12, nan_ok=True)
    assert isinstance(ra, RedundancyReport)
    finite = ra.neighbor_similarity[np.isfinite(ra.neighbor_similarity)]
    assert np.all((finite >= -1) & (finite <= 1))


# -- tables -------------------------------------------------------------------


def test_complexity_table_marks_bad_cells():
    rows, errors = complexity_table([(256, (1, 2, 2)), (250, (1, 2, 2))], 64)
    assert rows[0]["status"] == "ok" and rows[1]["status"].startswith("ERROR")
    assert len(errors) == 1
    tsv = rows_to_tsv(rows)
    lines = tsv.splitlines()
    assert lines[0].split("\t")[:3] == ["N", "D", "ratio"] and len(lines) == 3
    assert rows_to_tsv([]) == ""
