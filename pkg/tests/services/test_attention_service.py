import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[2]))

from app.services.attention_service import (
    AttentionService,
    GaussianParamMap,
    RenderMode,
    SIGMA_MIN,
)
from app.services.tensor_service import Graph, Tensor, mul, reduce_sum


def single_gaussian(size=9, centre=4, sigma=1.0, rho=0.0, confidence=1.0):
    rows, cols = np.indices((size, size)).astype(np.float64)
    conf = np.zeros((1, size, size))
    conf[0, centre, centre] = confidence
    return GaussianParamMap.from_arrays(
        conf,
        cols[None],
        rows[None],
        np.full((1, size, size), sigma),
        np.full((1, size, size), sigma),
        np.full((1, size, size), rho),
    )


def random_params(shape=(1, 6, 6), seed=0, requires_grad=False):
    rng = np.random.default_rng(seed)
    batch, height, width = shape
    rows, cols = np.indices((height, width)).astype(np.float64)
    return GaussianParamMap.from_arrays(
        rng.uniform(0.05, 0.9, size=shape),
        cols + rng.uniform(-1.5, 1.5, size=shape),
        rows + rng.uniform(-1.5, 1.5, size=shape),
        rng.uniform(0.5, 1.5, size=shape),
        rng.uniform(0.5, 1.5, size=shape),
        rng.uniform(0.1, 0.8, size=shape),
        requires_grad=requires_grad,
    )


@pytest.mark.parametrize("mode", [RenderMode.exact(), RenderMode.truncated()])
def test_single_gaussian_analytic_values(mode):
    attention = AttentionService.render_attention(single_gaussian(), mode)
    summed = attention.summed[0, ..., 0]
    assert summed[4, 4] == pytest.approx(1 / (2 * math.pi), abs=1e-9)
    assert summed[4, 5] == pytest.approx(math.exp(-0.5) / (2 * math.pi), abs=1e-9)
    assert summed[5, 4] == pytest.approx(math.exp(-0.5) / (2 * math.pi), abs=1e-9)
    assert attention.values.data[0, 4, 4, 0] == pytest.approx(math.tanh(1 / (2 * math.pi)), abs=1e-12)


def test_zero_confidence_renders_zero_attention():
    attention = AttentionService.render_attention(single_gaussian(confidence=0.0), RenderMode.exact())
    assert not np.any(attention.values.data)


def test_truncated_matches_exact_on_random_maps():
    rng = np.random.default_rng(5)
    raw = Tensor(rng.normal(0.0, 0.5, size=(1, 16, 16, 6)))
    params = AttentionService.activate_params(raw)
    exact = AttentionService.render_attention(params, RenderMode.exact()).values.data
    truncated = AttentionService.render_attention(params, RenderMode.truncated(5.0)).values.data
    assert np.max(np.abs(exact - truncated)) < 1e-5


def test_truncation_with_infinite_k_equals_exact_bitwise():
    params = random_params((2, 5, 5), seed=3)
    exact = AttentionService.render_attention(params, RenderMode.exact()).values.data
    wide = AttentionService.render_attention(params, RenderMode.truncated(math.inf)).values.data
    np.testing.assert_array_equal(exact, wide)


def test_attention_stays_below_one():
    size = 5
    conf = np.ones((1, size, size))
    rows, cols = np.indices((size, size)).astype(np.float64)
    params = GaussianParamMap.from_arrays(
        conf, cols[None], rows[None],
        np.full((1, size, size), SIGMA_MIN), np.full((1, size, size), SIGMA_MIN),
        np.zeros((1, size, size)),
    )
    values = AttentionService.render_attention(params, RenderMode.exact()).values.data
    assert np.all(values < 1.0)
    assert np.all(values >= 0.0)


def test_activate_params_respects_ranges():
    rng = np.random.default_rng(1)
    raw = Tensor(rng.normal(0.0, 10.0, size=(2, 8, 8, 6)))
    params = AttentionService.activate_params(raw)
    params.validate()
    rows, cols = np.indices((8, 8))
    assert np.all((params.confidence >= 0) & (params.confidence <= 1))
    assert np.all(np.abs(params.mu_x - cols) <= 2.0 + 1e-9)
    assert np.all(params.sigma_x >= SIGMA_MIN)
    assert np.all((params.rho > 0) & (params.rho <= 0.99))


def test_activate_params_gradient():
    rng = np.random.default_rng(2)
    raw = Tensor(rng.normal(size=(1, 3, 3, 6)), requires_grad=True)
    weights = rng.normal(size=(1, 3, 3, 6))
    with Graph() as graph:
        params = AttentionService.activate_params(raw)
        graph.backward(reduce_sum(mul(params.values, Tensor(weights))))

    h = 1e-6
    expected = np.zeros_like(raw.data)
    for idx in np.ndindex(raw.shape):
        saved = raw.data[idx]
        raw.data[idx] = saved + h
        plus = np.sum(AttentionService.activate_params(Tensor(raw.data)).values.data * weights)
        raw.data[idx] = saved - h
        minus = np.sum(AttentionService.activate_params(Tensor(raw.data)).values.data * weights)
        raw.data[idx] = saved
        expected[idx] = (plus - minus) / (2 * h)
    np.testing.assert_allclose(raw.grad, expected, rtol=1e-5, atol=1e-8)


def test_render_gradient_matches_finite_differences():
    params = random_params((1, 5, 5), seed=7, requires_grad=True)
    weights = np.random.default_rng(8).normal(size=(1, 5, 5, 1))
    mode = RenderMode.exact()

    with Graph() as graph:
        attention = AttentionService.render_attention(params, mode)
        graph.backward(reduce_sum(mul(attention.values, Tensor(weights))))
    analytic = params.values.grad

    data = params.values.data
    h = 1e-6
    for idx in np.ndindex(data.shape):
        saved = data[idx]
        data[idx] = saved + h
        plus = np.sum(AttentionService.render_attention(params, mode).values.data * weights)
        data[idx] = saved - h
        minus = np.sum(AttentionService.render_attention(params, mode).values.data * weights)
        data[idx] = saved
        numeric = (plus - minus) / (2 * h)
        assert abs(analytic[idx] - numeric) <= 1e-6 + 1e-4 * abs(numeric), idx


def test_backward_requires_recording_and_matching_mode():
    params = random_params()
    attention = AttentionService.render_attention(params, RenderMode.exact())
    with pytest.raises(RuntimeError, match="without gradient recording"):
        AttentionService.attention_backward(attention, np.ones((1, 6, 6, 1)))

    tracked = random_params(requires_grad=True)
    with Graph():
        recorded = AttentionService.render_attention(tracked, RenderMode.exact())
    with pytest.raises(ValueError, match="mode mismatch"):
        AttentionService.attention_backward(recorded, np.ones((1, 6, 6, 1)), RenderMode.truncated())


def test_validate_rejects_bypassed_activation():
    params = single_gaussian(sigma=0.01)
    with pytest.raises(ValueError, match="sigma"):
        AttentionService.render_attention(params)

    far = single_gaussian()
    far.values.data[0, 0, 0, 1] = 5.0
    with pytest.raises(ValueError, match="centre"):
        AttentionService.render_attention(far)


def test_apply_attention_is_product_and_shape_checked():
    backbone = Tensor(np.full((1, 9, 9, 1), 0.8))
    attention = AttentionService.render_attention(single_gaussian(), RenderMode.exact())
    final = AttentionService.apply_attention(backbone, attention)
    np.testing.assert_allclose(final.data, 0.8 * attention.values.data)
    assert np.all(final.data <= backbone.data)

    with pytest.raises(ValueError, match="does not match"):
        AttentionService.apply_attention(Tensor(np.ones((1, 4, 4, 1))), attention)


def test_render_mode_validation():
    with pytest.raises(ValueError, match="k >= 3"):
        RenderMode.truncated(2.0)
    with pytest.raises(ValueError, match="Unsupported render mode"):
        RenderMode.parse("fast")
    assert RenderMode.parse("exact") == RenderMode.exact()


def test_truncation_error_shrinks_as_k_grows():
    params = random_params((1, 8, 8), seed=4)
    exact = AttentionService.render_attention(params, RenderMode.exact()).summed
    errors = [
        np.max(np.abs(exact - AttentionService.render_attention(params, RenderMode.truncated(k)).summed))
        for k in (3.0, 4.0, 5.0, 8.0, 12.0)
    ]
    for wider, narrower in zip(errors[1:], errors[:-1]):
        assert wider <= narrower + 1e-12
    assert errors[-1] < 1e-12


def _sources_on_canvas(offset_row, offset_col, size=20, block=5, seed=6):
    rng = np.random.default_rng(seed)
    rows, cols = np.indices((size, size)).astype(np.float64)
    conf = np.zeros((1, size, size))
    conf[0, offset_row:offset_row + block, offset_col:offset_col + block] = rng.uniform(0.1, 0.9, (block, block))
    jitter_x = np.zeros((1, size, size))
    jitter_y = np.zeros((1, size, size))
    jitter_x[0, offset_row:offset_row + block, offset_col:offset_col + block] = rng.uniform(-1.5, 1.5, (block, block))
    jitter_y[0, offset_row:offset_row + block, offset_col:offset_col + block] = rng.uniform(-1.5, 1.5, (block, block))
    sigma_x = np.ones((1, size, size))
    sigma_y = np.ones((1, size, size))
    rho = np.zeros((1, size, size))
    sigma_x[0, offset_row:offset_row + block, offset_col:offset_col + block] = rng.uniform(0.6, 1.4, (block, block))
    sigma_y[0, offset_row:offset_row + block, offset_col:offset_col + block] = rng.uniform(0.6, 1.4, (block, block))
    rho[0, offset_row:offset_row + block, offset_col:offset_col + block] = rng.uniform(0.0, 0.5, (block, block))
    return GaussianParamMap.from_arrays(conf, cols + jitter_x, rows + jitter_y, sigma_x, sigma_y, rho)


def test_shifted_sources_render_shifted_attention():
    shift_row, shift_col = 3, 2
    base = AttentionService.render_attention(_sources_on_canvas(4, 4), RenderMode.exact()).summed[0, ..., 0]
    moved = AttentionService.render_attention(
        _sources_on_canvas(4 + shift_row, 4 + shift_col), RenderMode.exact()
    ).summed[0, ..., 0]
    np.testing.assert_allclose(moved[shift_row:, shift_col:], base[:-shift_row, :-shift_col], rtol=0, atol=1e-12)


def test_doubling_confidence_doubles_summed_density():
    rng = np.random.default_rng(11)
    shape = (1, 6, 6)
    rows, cols = np.indices(shape[1:]).astype(np.float64)
    conf = rng.uniform(0.05, 0.45, size=shape)
    others = (
        cols + rng.uniform(-1.5, 1.5, size=shape),
        rows + rng.uniform(-1.5, 1.5, size=shape),
        rng.uniform(0.5, 1.5, size=shape),
        rng.uniform(0.5, 1.5, size=shape),
        rng.uniform(0.0, 0.8, size=shape),
    )
    single = AttentionService.render_attention(GaussianParamMap.from_arrays(conf, *others), RenderMode.exact())
    double = AttentionService.render_attention(GaussianParamMap.from_arrays(2 * conf, *others), RenderMode.exact())
    np.testing.assert_allclose(double.summed, 2 * single.summed, rtol=0, atol=1e-12)


@pytest.mark.parametrize("rho", [0.0, 0.3])
def test_isotropic_gaussian_is_symmetric_under_axis_swap(rho):
    summed = AttentionService.render_attention(
        single_gaussian(sigma=1.3, rho=rho), RenderMode.exact()
    ).summed[0, ..., 0]
    np.testing.assert_allclose(summed, summed.T, rtol=1e-12, atol=1e-15)
