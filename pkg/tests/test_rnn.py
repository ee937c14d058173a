import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tpplab import constructive as C
from tpplab import rnn
from tpplab.core import EventSequence, intensity_at
from tpplab.errors import ConfigError
from tpplab.quadrature import QuadConfig
from tpplab.rnn import (RnnConfig, RnnTppModel, embed, hidden_grid, intensity, nll_loss, param_norm,
                        spectral_norm)

import oracles
from conftest import random_model


def const_model(c, widths=(3,), l_f=1e-3, u_f=10.0, **kw):
    m = rnn.zeros(RnnConfig(widths=widths, l_f=l_f, u_f=u_f, **kw))
    m.params["b_out"] = np.array(c)
    return m


# ------------------------------------------------------------- embedding

def test_embed_after_event():
    np.testing.assert_allclose(embed(0.7, EventSequence([0.5], 1.0)), [0.7, 0.2], atol=1e-15)


def test_embed_empty_sequence():
    np.testing.assert_array_equal(embed(0.3, EventSequence([], 1.0)), [0.3, 0.3])


def test_embed_three_channels():
    np.testing.assert_allclose(embed(0.7, EventSequence([0.5], 1.0), 3), [0.7, 0.2, 1.0], atol=1e-15)


def test_embed_is_left_continuous():
    seq = EventSequence([0.5], 1.0)
    np.testing.assert_array_equal(embed(0.5, seq), [0.5, 0.5])


# ------------------------------------------------------------- recursion

def test_zero_weights_give_zero_states():
    m = rnn.zeros(RnnConfig(widths=(3, 2)))
    for H in hidden_grid(m, EventSequence([0.2, 0.4, 0.9], 1.0)):
        assert not np.any(H)


def test_causality_of_grid_states():
    rng = np.random.default_rng(0)
    m = random_model(rng, (4,))
    m.params["Wh0"][:] = 0.0
    a = hidden_grid(m, EventSequence([0.1, 0.3, 0.6], 1.0))[0]
    b = hidden_grid(m, EventSequence([0.1, 0.3, 0.8], 1.0))[0]
    np.testing.assert_array_equal(a[:3], b[:3])


def test_two_layer_matches_unrolled_oracle():
    rng = np.random.default_rng(1)
    m = random_model(rng, (3, 4), scale=0.8)
    seq = EventSequence([0.15, 0.4, 0.77], 1.0)
    P = {k: v.tolist() for k, v in m.params.items()}
    for t in (0.1, 0.15, 0.3, 0.5, 0.9, 1.0):
        assert intensity(m, seq, t) == pytest.approx(oracles.rnn_unrolled_two_layer(P, seq.times, t), abs=1e-13)


def test_hidden_states_strictly_inside_unit_interval():
    rng = np.random.default_rng(2)
    m = random_model(rng, (5, 5), scale=3.0)
    seq = EventSequence(np.sort(rng.uniform(0, 1, 8)), 1.0)
    for H in hidden_grid(m, seq):
        assert np.all(np.abs(H) < 1.0)


# ------------------------------------------------------------- intensity

def test_constant_output_model():
    m = const_model(2.5)
    seq = EventSequence([0.2, 0.6], 1.0)
    np.testing.assert_allclose(intensity(m, seq, np.linspace(0.01, 1, 50)), 2.5)


def test_clamp_saturates_at_upper_bound():
    m = const_model(10.0 + 10.0)
    assert intensity(m, EventSequence([], 1.0), 0.5) == 10.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 6.0))
def test_intensity_respects_clamp(seed, scale):
    rng = np.random.default_rng(seed)
    m = random_model(rng, (3, 3), scale=scale, l_f=0.5, u_f=2.0, b_out=rng.uniform(-5, 5))
    seq = EventSequence(np.sort(rng.uniform(0.01, 1, 4)), 1.0)
    lam = intensity(m, seq, np.linspace(0.001, 1.0, 200))
    assert np.all((lam >= 0.5) & (lam <= 2.0))


def test_causality_appending_future_event():
    rng = np.random.default_rng(3)
    m = random_model(rng, (4, 4))
    t = np.linspace(0.01, 0.5, 40)
    a = intensity(m, EventSequence([0.1, 0.3], 1.0), t)
    b = intensity(m, EventSequence([0.1, 0.3, 0.6], 1.0), t)
    np.testing.assert_array_equal(a, b)


def test_left_continuity_and_right_update():
    rng = np.random.default_rng(4)
    m = random_model(rng, (4,))
    seq = EventSequence([0.3, 0.7], 1.0)
    for tj in seq.times:
        at = intensity(m, seq, tj)
        assert intensity(m, seq, tj - 1e-8) == pytest.approx(at, abs=1e-6)
        right = intensity(m, seq, tj + 1e-8)
        # right limit uses the updated state: compare with a sequence truncated after tj
        ref = intensity(m, EventSequence(seq.times[seq.times <= tj], 1.0), tj + 1e-8)
        assert right == ref


def test_constant_hold_is_piecewise_constant():
    rng = np.random.default_rng(5)
    m = random_model(rng, (4, 3), interpolation="ConstantHold")
    seq = EventSequence([0.2, 0.5, 0.8], 1.0)
    edges = [0.0, 0.2, 0.5, 0.8, 1.0]
    for a, b in zip(edges[:-1], edges[1:]):
        vals = intensity(m, seq, np.linspace(a, b, 12)[1:])
        assert np.all(vals == vals[0])


def test_constructed_vanilla_model_within_certificate(vanilla_build):
    model, truth = vanilla_build
    cert = C.certificate(model)["certified_error"]
    rng = np.random.default_rng(6)
    for _ in range(50):
        n = rng.integers(0, 9)
        seq = EventSequence(np.sort(rng.uniform(0.001, 2.0, n)), 2.0)
        t = rng.uniform(0.001, 2.0)
        assert abs(intensity(model, seq, t) - intensity_at(truth, seq, t)) <= cert


# ------------------------------------------------------------- loss

def test_nll_constant_empty():
    assert nll_loss(const_model(2.0), EventSequence([], 3.0)) == pytest.approx(6.0, abs=1e-12)


def test_nll_constant_with_events():
    seq = EventSequence([0.5, 1.0, 2.5], 3.0)
    assert nll_loss(const_model(2.0), seq) == pytest.approx(6.0 - 3 * math.log(2.0), abs=1e-12)


def test_nll_matches_dense_trapezoid():
    rng = np.random.default_rng(7)
    m = random_model(rng, (4, 4))
    seq = EventSequence([0.21, 0.48, 0.83], 1.0)
    got = nll_loss(m, seq, QuadConfig(tol=1e-9))
    grid = np.linspace(0.0, 1.0, 1_000_001)[1:]
    lam = intensity(m, seq, grid)
    lam0 = intensity(m, seq, 1e-12)
    integral = 1e-6 * (0.5 * lam0 + np.sum(lam[:-1]) + 0.5 * lam[-1])
    ref = integral - np.sum(np.log(intensity(m, seq, seq.times)))
    assert got == pytest.approx(ref, abs=1e-6)


# ------------------------------------------------------------- norms

def test_spectral_norm_zero():
    assert spectral_norm(np.zeros((3, 3))) == 0.0


def test_spectral_norm_scalar():
    assert spectral_norm(np.array([[-3.0]])) == pytest.approx(3.0)


def test_spectral_norm_matches_jacobi_oracle():
    rng = np.random.default_rng(8)
    for _ in range(5):
        A = rng.normal(size=(3, 3))
        assert spectral_norm(A) == pytest.approx(oracles.jacobi_top_singular_value(A), abs=1e-8)


def test_param_norm_zero_model():
    assert param_norm(rnn.zeros(RnnConfig(widths=(2,)))) == 0.0


# ------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    m = random_model(rng, (3, 2))
    m.params["Wx0"][0, 0] = 0.1 + 0.2
    path = tmp_path / "m.json"
    rnn.save(m, path)
    back = rnn.load(path)
    for k, v in m.params.items():
        np.testing.assert_array_equal(back.params[k], v)
    assert back.config == m.config
    assert rnn.dumps(back) == rnn.dumps(m)


def test_config_validation():
    with pytest.raises(ConfigError):
        RnnConfig(widths=(2, 2), interpolation="NaiveSingleLayer")
    with pytest.raises(ConfigError):
        RnnConfig(widths=(2,), l_f=2.0, u_f=1.0)
    with pytest.raises(ConfigError):
        RnnTppModel(RnnConfig(widths=(2,)), {"Wx0": np.zeros((2, 2))})
