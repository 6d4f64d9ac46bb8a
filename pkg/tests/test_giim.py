import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ptdit.giim import (
    GIIM,
    INJECTION_VARIANTS,
    PROXY_VARIANTS,
    ProxyStrategy,
    extract_proxies,
    giim_forward,
    interpolate_injection,
)
from ptdit.grid import CompressionRatio, ConfigError, LatentGrid
from ptdit.numerics import AdamW, Tensor

R122 = CompressionRatio(1, 2, 2)


def grid(shape, seed=0):
    return LatentGrid(Tensor(np.random.default_rng(seed).standard_normal(shape)))


def trained(module, seed=1):
    """Give every parameter, gates included, a random nonzero value."""
    module.init_params(seed)
    rng = np.random.default_rng(seed)
    for p in module.parameters():
        p.data = 0.3 * rng.standard_normal(p.shape)
    return module


def test_window_example_average_and_top_left():
    g = LatentGrid(Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2, 1)))
    assert extract_proxies(g, R122, ProxyStrategy("average")).tokens.data.item() == 2.5
    assert extract_proxies(g, R122, ProxyStrategy("top_left")).tokens.data.item() == 1.0


@pytest.mark.parametrize("variant", PROXY_VARIANTS)
def test_constant_grid_gives_constant_proxies(variant):
    g = LatentGrid(Tensor(np.full((2, 2, 4, 4, 3), 1.75)))
    p = extract_proxies(g, CompressionRatio(2, 2, 2), ProxyStrategy(variant, seed=3))
    assert p.count == 4
    np.testing.assert_array_equal(p.tokens.data, 1.75)


@pytest.mark.parametrize("variant", PROXY_VARIANTS)
def test_unit_ratio_proxies_are_tokens(variant):
    g = grid((1, 2, 3, 3, 4))
    p = extract_proxies(g, CompressionRatio(1, 1, 1), ProxyStrategy(variant))
    np.testing.assert_array_equal(p.tokens.data, g.tokens.data)


def test_random_proxy_is_a_window_member_and_seeded():
    g = grid((1, 1, 4, 4, 2), seed=2)
    a = extract_proxies(g, R122, ProxyStrategy("random", seed=5)).tokens.data
    b = extract_proxies(g, R122, ProxyStrategy("random", seed=5)).tokens.data
    np.testing.assert_array_equal(a, b)
    x = g.tokens.data[0, 0]
    for i, j in itertools.product(range(2), range(2)):
        members = x[2 * i : 2 * i + 2, 2 * j : 2 * j + 2].reshape(4, 2)
        assert any(np.array_equal(a[0, 0, i, j], m) for m in members)


def test_random_strategy_rejects_unknown_variant():
    with pytest.raises(ConfigError):
        ProxyStrategy("median")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_average_invariant_to_in_window_permutation(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 1, 4, 4, 3))
    y = x.copy()
    for i, j in itertools.product(range(2), range(2)):
        block = y[0, 0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].reshape(4, 3)
        y[0, 0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2] = block[rng.permutation(4)].reshape(2, 2, 3)
    a = extract_proxies(LatentGrid(Tensor(x)), R122).tokens.data
    b = extract_proxies(LatentGrid(Tensor(y)), R122).tokens.data
    np.testing.assert_allclose(a, b, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_proxy_count_law(nf, nh, nw):
    ratio = CompressionRatio(2, 2, 1)
    g = grid((1, 2 * nf, 2 * nh, nw, 2))
    assert extract_proxies(g, ratio).count * ratio.volume == g.num_tokens


def test_non_divisible_extraction_names_axis():
    with pytest.raises(ConfigError, match="w=3"):
        extract_proxies(grid((1, 1, 4, 3, 2)), R122)


# -- interpolation ------------------------------------------------------------


def test_interpolation_aligned_endpoints_example():
    p = Tensor(np.array([0.0, 2.0]).reshape(1, 1, 1, 2, 1))
    out = interpolate_injection(p, (1, 1, 4), align_corners=True).data.reshape(-1)
    np.testing.assert_allclose(out, [0.0, 2 / 3, 4 / 3, 2.0], atol=1e-15)


def test_interpolation_center_aligned_default():
    p = Tensor(np.array([0.0, 2.0]).reshape(1, 1, 1, 2, 1))
    out = interpolate_injection(p, (1, 1, 4)).data.reshape(-1)
    # window centers sit at 0.5 and 2.5; outer samples clamp to the edge proxy
    np.testing.assert_allclose(out, [0.0, 0.5, 1.5, 2.0], atol=1e-15)


@pytest.mark.parametrize("align", [False, True])
def test_interpolation_constant_and_identity(align):
    c = Tensor(np.full((1, 1, 2, 2, 3), -0.25))
    np.testing.assert_allclose(interpolate_injection(c, (2, 6, 4), align).data, -0.25, atol=1e-15)
    g = grid((1, 1, 2, 3, 2))
    np.testing.assert_array_equal(interpolate_injection(g.tokens, (1, 2, 3), align).data, g.tokens.data)


def test_interpolation_frames_nearest():
    p = Tensor(np.array([1.0, 5.0]).reshape(1, 2, 1, 1, 1))
    out = interpolate_injection(p, (4, 1, 1)).data.reshape(-1)
    np.testing.assert_array_equal(out, [1.0, 1.0, 5.0, 5.0])


def test_interpolation_rejects_non_multiple():
    with pytest.raises(ConfigError):
        interpolate_injection(Tensor(np.zeros((1, 1, 2, 2, 1))), (1, 3, 4))


# -- module -------------------------------------------------------------------


@pytest.mark.parametrize("proxy", PROXY_VARIANTS)
@pytest.mark.parametrize("injection", INJECTION_VARIANTS)
def test_identity_at_init(proxy, injection):
    m = GIIM(8, 2, R122, ProxyStrategy(proxy), injection).init_params(0)
    g = grid((2, 1, 4, 4, 8))
    assert np.abs(giim_forward(g, m).tokens.data - g.tokens.data).max() < 1e-12


def test_matches_composed_oracle():
    m = trained(GIIM(8, 2, R122))
    g = grid((1, 1, 4, 4, 8), seed=7)
    assert extract_proxies(g, R122).count == 4
    out = giim_forward(g, m).tokens.data[0]
    np.testing.assert_allclose(out, oracles.giim_cross_attention(g.tokens.data[0], m), atol=1e-10)


def test_unit_ratio_cross_attention_is_sa_then_cs():
    m = trained(GIIM(4, 2, CompressionRatio(1, 1, 1), norm=False), seed=3)
    x = grid((1, 1, 2, 3, 4), seed=4).tokens.data[0].reshape(-1, 4)
    expect = oracles.attention(x, oracles.attention(x, x, m.sa), m.cs)
    got = m.branch(LatentGrid(Tensor(x.reshape(1, 1, 2, 3, 4)))).data.reshape(-1, 4)
    np.testing.assert_allclose(got, expect, atol=1e-10)


def test_interpolate_branch_matches_manual_composition():
    m = trained(GIIM(4, 1, R122, injection="interpolate", norm=False), seed=5)
    x = grid((1, 1, 4, 4, 4), seed=6).tokens.data[0]
    p = oracles.window_mean(x, (1, 2, 2))
    p = oracles.attention(p.reshape(-1, 4), p.reshape(-1, 4), m.sa).reshape(1, 2, 2, 4)
    up = interpolate_injection(Tensor(p[None]), (1, 4, 4)).data[0]
    expect = oracles.lin(up, m.gate)
    got = m.branch(LatentGrid(Tensor(x[None]))).data[0]
    np.testing.assert_allclose(got, expect, atol=1e-10)


def test_linear_branch_places_each_proxy_in_its_own_window():
    m = trained(GIIM(2, 1, R122, injection="linear", norm=False), seed=8)
    x = grid((1, 1, 4, 4, 2), seed=9).tokens.data[0]
    p = oracles.window_mean(x, (1, 2, 2)).reshape(-1, 2)
    p = oracles.attention(p, p, m.sa).reshape(2, 2, 2)
    expect = np.zeros((1, 4, 4, 2))
    for i, j in itertools.product(range(2), range(2)):
        e = oracles.lin(p[i, j], m.expand).reshape(4, 2)
        expect[0, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2] = oracles.lin(e, m.gate).reshape(2, 2, 2)
    np.testing.assert_allclose(m.branch(LatentGrid(Tensor(x[None]))).data[0], expect, atol=1e-10)


@pytest.mark.parametrize("injection", INJECTION_VARIANTS)
def test_gate_moves_after_one_step(injection):
    m = GIIM(8, 2, R122, injection=injection).init_params(0)
    g = grid((2, 1, 4, 4, 8), seed=1)
    target = np.random.default_rng(2).standard_normal(g.tokens.shape)
    opt = AdamW(m.parameters(), lr=1e-2)
    diff = m(g).tokens - Tensor(target)
    (diff * diff).mean().backward()
    opt.step()
    assert np.abs(m.gate_weight.data).max() > 0


def test_unknown_injection_rejected():
    with pytest.raises(ConfigError):
        GIIM(8, 2, R122, injection="concat")
