import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fd_check, golden_delta, randomize
from delta_adapt import autodiff as ad
from delta_adapt import forecaster as fc
from delta_adapt.adapters import (AdapterNet, CompositeAdapter, EditRecord, UndefinedStepError, adapt,
                                  apply_composite, apply_edit, correct_output, descent_witness,
                                  drift_bound_check, nudge_input, optimal_delta_closed_form, shrinkage_risk)
from delta_adapt.autodiff import Tensor


def _linear(rng, L=4, d=2, H=3, m=1):
    return fc.linear_ar(rng.standard_normal((H * m, L * d)), rng.standard_normal(H * m), L, d, H, m)


# ---------------------------------------------------------------- edit arithmetic


def test_edit_forms_arithmetic():
    assert np.allclose(apply_edit("additive", Tensor([1.0, 2.0]), Tensor([1.0, -1.0]), 0.1).data, [1.1, 1.9])
    assert np.allclose(apply_edit("multiplicative", Tensor([2.0]), Tensor([0.5]), 0.1).data, [2.1])
    assert np.allclose(apply_edit("exp", Tensor([2.0]), Tensor([0.5]), 0.1).data, [2 * math.exp(0.05)])
    assert np.allclose(apply_edit("additive", Tensor([3.0]), Tensor([-1.0]), 0.1).data, [2.9])
    assert np.allclose(apply_edit("multiplicative", Tensor([3.0]), Tensor([-1.0]), 0.1).data, [2.7])


def test_delta_must_be_in_unit_interval():
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            AdapterNet("output", "additive", 4, 1, 2, 1, delta=bad)
    AdapterNet("output", "additive", 4, 1, 2, 1, delta=1.0)


@pytest.mark.parametrize("form", ["additive", "multiplicative", "exp"])
@pytest.mark.parametrize("placement", ["input", "output"])
def test_zero_head_is_identity(placement, form):
    rng = np.random.default_rng(0)
    spec = _linear(rng)
    net = AdapterNet(placement, form, 4, 2, 3, 1, seed=1)
    X = rng.standard_normal((20, 4, 2))
    assert np.array_equal(adapt(net, spec, X).data, fc.predict_array(spec, X))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), scale=st.floats(0.1, 20.0))
def test_raw_edit_is_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    net = AdapterNet("input", "additive", 3, 2, 2, 1, delta=0.3, hidden_width=8, seed=seed % 100)
    randomize(net.parameters(), rng, scale)
    X = rng.standard_normal((5, 3, 2)) * scale
    X_t, rec = nudge_input(net, X)
    assert np.max(np.abs(rec.raw_edit)) <= 1.0
    assert np.array_equal(rec.post, X + 0.3 * rec.raw_edit)
    assert np.max(np.abs(X_t.data - X)) <= 0.3 + 1e-15


def test_output_record_drift_norm():
    rng = np.random.default_rng(2)
    net = AdapterNet("output", "additive", 4, 2, 3, 1, hidden_width=8)
    randomize(net.parameters(), rng)
    Y_hat = rng.standard_normal((6, 3, 1))
    Y_t, rec = correct_output(net, Y_hat, rng.standard_normal((6, 4, 2)))
    assert np.allclose(rec.drift_norm, np.linalg.norm((Y_t.data - Y_hat).reshape(6, -1), axis=1))


# ---------------------------------------------------------------- composite


def test_composite_identity_and_output_only_shift():
    rng = np.random.default_rng(3)
    spec = _linear(rng)
    c = CompositeAdapter.build(4, 2, 3, 1, hidden_width=8, seed=0)
    X = rng.standard_normal((10, 4, 2))
    Y_t, rec_in, rec_out = apply_composite(c, spec, X)
    assert np.array_equal(Y_t.data, fc.predict_array(spec, X))
    # output head forced to tanh(z) with z large enough that A rounds to 1
    c.output_adapter.params["b1"].data[...] = 40.0
    Y_t, _, _ = apply_composite(c, spec, X)
    assert np.allclose(Y_t.data, fc.predict_array(spec, X) + 0.1, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_composite_drift_bound(seed):
    rng = np.random.default_rng(seed)
    spec = _linear(rng)
    c = CompositeAdapter.build(4, 2, 3, 1, delta=0.2, hidden_width=8, seed=seed % 50)
    randomize(c.parameters(), rng, 1.0)
    X = rng.standard_normal((8, 4, 2))
    Y_t, rec_in, _ = apply_composite(c, spec, X)
    lhs = np.linalg.norm((Y_t.data - fc.predict_array(spec, X)).reshape(8, -1), axis=1)
    v = np.linalg.norm(rec_in.raw_edit.reshape(8, -1), axis=1)
    rhs = 0.2 * fc.operator_norm(spec) * v + 0.2 * math.sqrt(3 * 1)
    assert np.all(lhs <= rhs + 1e-9)


def test_gate_scales_input_side_only():
    rng = np.random.default_rng(4)
    spec = _linear(rng)
    c = CompositeAdapter.build(4, 2, 3, 1, hidden_width=8, gate=True, seed=0)
    randomize(c.input_adapter.parameters(), rng)
    X = rng.standard_normal((5, 4, 2))
    c.gate_logits.data[...] = -50.0          # gamma ~ 0: input edit switched off
    assert np.allclose(apply_composite(c, spec, X)[0].data, fc.predict_array(spec, X), atol=1e-12)


def test_gradient_reaches_input_adapter_through_forecaster():
    rng = np.random.default_rng(5)
    spec = _linear(rng)
    c = CompositeAdapter.build(4, 2, 3, 1, hidden_width=8, seed=0)
    X = rng.standard_normal((16, 4, 2))
    Y = rng.standard_normal((16, 3, 1))
    params = {k: v for k, v in c.parameters().items() if k.startswith("in.")}

    def loss():
        return ad.mean(ad.square(apply_composite(c, spec, X)[0] - Tensor(Y)))

    assert fd_check(params, loss) < 1e-6
    ad.reset_tape()
    loss().backward()
    assert np.any(c.input_adapter.params["W1"].grad != 0)


def test_checkpoint_round_trip():
    rng = np.random.default_rng(6)
    c = CompositeAdapter.build(4, 2, 3, 1, hidden_width=8, gate=True, seed=0)
    randomize(c.parameters(), rng)
    back = CompositeAdapter.from_json(c.to_json())
    spec = _linear(rng)
    X = rng.standard_normal((4, 4, 2))
    assert np.array_equal(adapt(back, spec, X).data, adapt(c, spec, X).data)
    net = AdapterNet("output", "exp", 4, 2, 3, 1, hidden_width=8)
    randomize(net.parameters(), rng)
    assert np.array_equal(AdapterNet.from_json(net.to_json()).params["W0"].data, net.params["W0"].data)


# ---------------------------------------------------------------- closed-form step


def test_closed_form_examples():
    assert optimal_delta_closed_form(np.array([1.0]), np.array([0.5])).delta == 2.0
    r = np.random.default_rng(7).standard_normal((10, 3))
    res = optimal_delta_closed_form(r, r)
    assert res.delta == pytest.approx(1.0, abs=1e-15)
    assert shrinkage_risk(r, r, res.delta) < 1e-30


def test_closed_form_matches_golden_section():
    rng = np.random.default_rng(8)
    r = rng.standard_normal((100, 3))
    g = 0.5 * r + rng.standard_normal((100, 3))
    assert abs(golden_delta(r, g) - optimal_delta_closed_form(r, g).delta) < 1e-8


def test_closed_form_degenerate_cases():
    with pytest.raises(UndefinedStepError):
        optimal_delta_closed_form(np.ones((3, 2)), np.zeros((3, 2)))
    res = optimal_delta_closed_form(np.ones((3, 2)), -np.ones((3, 2)))
    assert res.delta == 0.0 and not res.improvable


# ---------------------------------------------------------------- drift bounds


def _scalar_linear(w):
    return fc.linear_ar(np.array([[w]]), np.zeros(1), 1, 1, 1, 1)


def _record(form, X, A, delta):
    post = apply_edit(form, Tensor(X), Tensor(A), delta).data
    return EditRecord("input", form, np.asarray(A, float), np.asarray(X, float), post, None, delta)


def test_drift_bound_is_tight_for_linear_forecaster():
    chk = drift_bound_check(_record("additive", [[[0.0]]], [[[3.0]]], 0.1), 2.0, _scalar_linear(2.0))
    assert chk.lhs[0] == pytest.approx(0.6, abs=1e-15)
    assert chk.rhs[0] == pytest.approx(0.6, abs=1e-15)
    assert chk.holds


def test_drift_bound_zero_edit():
    chk = drift_bound_check(_record("additive", [[[1.5]]], [[[0.0]]], 0.1), 2.0, _scalar_linear(2.0))
    assert chk.lhs[0] == 0.0 and chk.rhs[0] == 0.0 and chk.holds


def test_drift_bound_exp_form():
    chk = drift_bound_check(_record("exp", [[[1.0]]], [[[1.0]]], 0.1), 1.0, _scalar_linear(1.0))
    assert chk.lhs[0] == pytest.approx(math.exp(0.1) - 1, rel=1e-12)
    assert chk.rhs[0] == pytest.approx(0.1 * math.exp(0.1), rel=1e-12)
    assert chk.holds


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), form=st.sampled_from(["additive", "multiplicative", "exp"]))
def test_drift_bound_holds_for_random_edits(seed, form):
    rng = np.random.default_rng(seed)
    spec = _linear(rng)
    net = AdapterNet("input", form, 4, 2, 3, 1, delta=float(rng.uniform(0.01, 1.0)), hidden_width=8)
    randomize(net.parameters(), rng, 2.0)
    _, rec = nudge_input(net, rng.standard_normal((6, 4, 2)) * 3)
    assert drift_bound_check(rec, fc.operator_norm(spec), spec).holds


# ---------------------------------------------------------------- descent witness


def test_descent_witness_realized_equals_expansion():
    rng = np.random.default_rng(9)
    Y_hat, Y = rng.standard_normal((5, 3, 1)), rng.standard_normal((5, 3, 1))
    d = (Y - Y_hat) + 0.3 * rng.standard_normal((5, 3, 1))
    rec = descent_witness(Y_hat, Y, d, 0.1)
    g = (Y_hat - Y).reshape(-1)
    dv = d.reshape(-1)
    assert rec.realized == pytest.approx(0.1 * g @ dv + 0.5 * 0.01 * dv @ dv, rel=1e-10)
    assert rec.step_ok and rec.realized < 0
    assert descent_witness(Y_hat, Y, np.zeros_like(d), 0.1) is None
