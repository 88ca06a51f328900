import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delta_adapt import autodiff as ad
from delta_adapt import forecaster as fc
from delta_adapt.autodiff import Tensor


def _mlp(rng, L=4, d=2, H=3, m=1, hidden=6):
    return fc.tiny_mlp(rng.standard_normal((hidden, L * d)), rng.standard_normal(hidden),
                       rng.standard_normal((H * m, hidden)), rng.standard_normal(H * m), L, d, H, m)


def test_seasonal_naive_rows():
    L, d, H, p = 6, 2, 5, 3
    spec = fc.seasonal_naive(L, d, H, p, target_cols=(1,))
    X = np.arange(L * d, dtype=float).reshape(L, d)
    Y = fc.predict_array(spec, X)
    for h in range(1, H + 1):
        assert Y[h - 1, 0] == X[L - p + (h - 1) % p, 1]


def test_linear_mean_pool_keeps_constants():
    L, d, H = 5, 1, 3
    spec = fc.linear_ar(np.full((H, L), 1.0 / L), np.zeros(H), L, d, H, 1)
    assert np.allclose(fc.predict_array(spec, np.full((L, d), 2.5)), 2.5, atol=1e-15)


def test_tiny_mlp_zero_weights_outputs_bias():
    spec = fc.tiny_mlp(np.zeros((4, 6)), np.zeros(4), np.zeros((2, 4)), np.array([0.3, -1.0]), 3, 2, 2, 1)
    out = fc.predict_array(spec, np.random.default_rng(0).standard_normal((10, 3, 2)))
    assert np.array_equal(out, np.broadcast_to(np.array([0.3, -1.0]).reshape(2, 1), out.shape))


def test_predict_shape_mismatch():
    spec = fc.seasonal_naive(4, 1, 2, 2)
    with pytest.raises(ad.DimensionError):
        fc.predict(spec, np.zeros((3, 1)))


def test_params_are_read_only():
    spec = fc.linear_ar(np.eye(2), np.zeros(2), 2, 1, 2, 1)
    with pytest.raises(ValueError):
        spec.params["W"][0, 0] = 5.0


def test_gradient_flows_to_input_not_params():
    rng = np.random.default_rng(1)
    spec = _mlp(rng)
    before = spec.checksum()
    X = Tensor(rng.standard_normal((2, 4, 2)), requires_grad=True)
    ad.tsum(fc.predict(spec, X)).backward()
    assert X.grad is not None and np.any(X.grad != 0)
    assert spec.checksum() == before


def test_blackbox_failure_is_backbone_error():
    def boom(x):
        raise RuntimeError("nope")

    with pytest.raises(fc.BackboneError):
        fc.predict(fc.blackbox(boom, 2, 1, 1, 1), np.zeros((2, 1)))


def test_blackbox_gradient_by_finite_differences():
    W = np.array([[1.0, -2.0, 0.5]])
    spec = fc.blackbox(lambda x: np.tanh(W @ x.reshape(-1)).reshape(1, 1), 3, 1, 1, 1)
    X = Tensor(np.array([[0.1], [0.2], [-0.3]]), requires_grad=True)
    ad.tsum(fc.predict(spec, X)).backward()
    z = W @ X.data.reshape(-1)
    exact = ((1 - np.tanh(z) ** 2) * W).reshape(3, 1)
    assert np.allclose(X.grad, exact, atol=1e-9)


def test_fit_recovers_exact_linear_map():
    rng = np.random.default_rng(2)
    L, d, H = 4, 2, 3
    W = rng.standard_normal((H, L * d))
    X = rng.standard_normal((200, L, d))
    Y = (X.reshape(200, -1) @ W.T).reshape(200, H, 1)
    spec = fc.fit_backbone("linear_ar", X, Y, ridge=1e-12)
    assert np.max(np.abs(spec.params["W"] - W)) < 1e-6
    assert np.max(np.abs(spec.params["b"])) < 1e-6


def test_fit_single_constant_window():
    X = np.full((1, 3, 1), 4.0)
    Y = np.full((1, 2, 1), 4.0)
    spec = fc.fit_backbone("linear_ar", X, Y)
    assert np.allclose(fc.predict_array(spec, X[0]), 4.0)


def test_fit_empty_is_error():
    with pytest.raises(ValueError):
        fc.fit_backbone("linear_ar", np.zeros((0, 3, 1)), np.zeros((0, 2, 1)))


def test_fit_singular_falls_back_with_warning():
    X = np.ones((5, 2, 1))          # duplicate columns, rank 1
    Y = np.ones((5, 1, 1))
    with pytest.warns(RuntimeWarning):
        spec = fc.fit_backbone("linear_ar", X, Y, ridge=0.0)
    assert np.allclose(fc.predict_array(spec, X[0]), 1.0)


def test_linear_ar_lipschitz_hint_is_spectral_norm():
    W = np.random.default_rng(3).standard_normal((3, 6))
    spec = fc.linear_ar(W, np.zeros(3), 3, 2, 3, 1)
    assert spec.lipschitz_hint == pytest.approx(np.linalg.svd(W, compute_uv=False)[0], rel=1e-12)


def test_jvp_linear_is_prediction_of_direction():
    rng = np.random.default_rng(4)
    spec = fc.linear_ar(rng.standard_normal((2, 6)), rng.standard_normal(2), 3, 2, 2, 1)
    X, v = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    zero_bias = fc.linear_ar(spec.params["W"], np.zeros(2), 3, 2, 2, 1)
    assert np.allclose(fc.jvp(spec, X, v), fc.predict_array(zero_bias, v), atol=1e-14)
    assert np.array_equal(fc.jvp(spec, X, np.zeros_like(v)), np.zeros((2, 1)))


def test_jvp_tiny_mlp_modes_agree():
    rng = np.random.default_rng(5)
    spec = _mlp(rng)
    X, v = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    exact = fc.jvp(spec, X, v, mode="exact")
    fd = fc.jvp(spec, X, v, mode="finite_difference")
    assert np.max(np.abs(exact - fd)) / np.max(np.abs(exact)) < 1e-6


def test_operator_norm_examples():
    assert fc.operator_norm(fc.linear_ar(np.array([[2.0]]), np.zeros(1), 1, 1, 1, 1)) == pytest.approx(2.0)
    assert fc.operator_norm(fc.linear_ar(np.diag([1.0, 3.0]), np.zeros(2), 2, 1, 2, 1)) == pytest.approx(3.0)
    with pytest.raises(fc.UnsupportedError):
        fc.operator_norm(fc.blackbox(lambda x: x[:1], 2, 1, 1, 1))


def test_operator_norm_mlp_below_product_bound():
    rng = np.random.default_rng(6)
    spec = _mlp(rng)
    est, is_estimate = fc.operator_norm(spec, with_flag=True)
    bound = np.linalg.norm(spec.params["W1"], 2) * np.linalg.norm(spec.params["W2"], 2)
    assert is_estimate
    assert 0 < est <= bound


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_affine_linearity_and_lipschitz_witness(seed):
    rng = np.random.default_rng(seed)
    spec = fc.linear_ar(rng.standard_normal((4, 6)), rng.standard_normal(4), 3, 2, 2, 2)
    X, v = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    diff = fc.predict_array(spec, X + v) - fc.predict_array(spec, X)
    assert np.max(np.abs(diff - fc.jvp(spec, X, v))) < 1e-12
    assert np.linalg.norm(diff) <= fc.operator_norm(spec) * np.linalg.norm(v) + 1e-9


def test_checkpoint_round_trip_and_tamper():
    rng = np.random.default_rng(7)
    spec = _mlp(rng)
    back = fc.from_json(fc.to_json(spec))
    assert back.checksum() == spec.checksum()
    X = rng.standard_normal((5, 4, 2))
    assert np.array_equal(fc.predict_array(back, X), fc.predict_array(spec, X))
    doc = fc.to_json(spec).replace('"checksum": "', '"checksum": "0')
    with pytest.raises(ValueError):
        fc.from_json(doc)


def test_checksum_distinguishes_parameter_free_backbones():
    assert fc.seasonal_naive(8, 1, 4, 1).checksum() != fc.seasonal_naive(8, 1, 4, 2).checksum()
