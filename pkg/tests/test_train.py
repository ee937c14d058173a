import math

import numpy as np
import pytest

from tpplab import rnn
from tpplab.core import HomPoisson, loglik, simulate_many
from tpplab.errors import ConfigError
from tpplab.quadrature import QuadConfig
from tpplab.rnn import RnnConfig, nll_loss, param_norm
from tpplab.train import TrainConfig, fit_erm, grad_nll, init_params, nll_fixed, project, write_trace

from conftest import random_model

QUAD = QuadConfig(tol=1e-9, fixed_panels=2)


def fd_check(model, seq, coords_per_param=3, h=1e-6, rng=None):
    """Worst relative error between grad_nll and central differences on sampled coordinates."""
    rng = rng or np.random.default_rng(0)
    _, grads = grad_nll(model, seq, QUAD)
    worst = 0.0
    for name, val in model.params.items():
        if val.size == 0 or (name == "alpha_naive" and model.config.interpolation == "InputEmbedding"):
            continue
        for _ in range(coords_per_param):
            idx = tuple(rng.integers(0, n) for n in val.shape)
            plus, minus = {k: v.copy() for k, v in model.params.items()}, {k: v.copy() for k, v in model.params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            fp = nll_fixed(model.with_params(plus), seq, model, QUAD)
            fm = nll_fixed(model.with_params(minus), seq, model, QUAD)
            fd = (fp - fm) / (2 * h)
            g = float(np.asarray(grads[name])[idx])
            worst = max(worst, abs(g - fd) / max(abs(fd), abs(g), 1e-3))
    return worst


def random_case(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 4))
    widths = tuple(int(w) for w in rng.integers(1, 9, size=L))
    link = "softplus-clamp" if seed % 2 else "identity-clamp"
    m = random_model(rng, widths, scale=0.7, link=link, l_f=1e-6, u_f=1e6, b_out=2.5)
    n = int(rng.integers(0, 6))
    from tpplab.core import EventSequence
    seq = EventSequence(np.sort(rng.uniform(0.01, 1.0, n)), 1.0)
    return m, seq


def test_gradient_matches_finite_differences():
    worst = max(fd_check(*random_case(s), rng=np.random.default_rng(s)) for s in range(20))
    assert worst < 1e-4


def test_gradient_constant_model_empty_sequence():
    m = rnn.zeros(RnnConfig(widths=(3, 2), l_f=0.1, u_f=10.0))
    m.params["b_out"] = np.array(2.0)
    from tpplab.core import EventSequence
    _, g = grad_nll(m, EventSequence([], 1.5), QUAD)
    assert float(g["b_out"]) == pytest.approx(1.5, abs=1e-12)
    for l in range(2):
        assert not np.any(g[f"Wh{l}"])


def test_gradient_zero_when_clamp_saturated():
    m = rnn.zeros(RnnConfig(widths=(2,), l_f=0.1, u_f=1.0))
    m.params["b_out"] = np.array(5.0)
    from tpplab.core import EventSequence
    _, g = grad_nll(m, EventSequence([0.3, 0.6], 1.0), QUAD)
    assert float(g["b_out"]) == 0.0
    assert not np.any(g["w_out"])


def test_descent_sanity():
    m, seq = random_case(3)
    loss, g = grad_nll(m, seq, QUAD)
    stepped = m.with_params({k: v - 1e-6 * g[k] for k, v in m.params.items()})
    assert nll_fixed(stepped, seq, m, QUAD) <= loss


def test_poisson_constant_mle():
    data = simulate_many(HomPoisson(2.0), 1.0, 200, seed=3)
    mle = sum(len(s) for s in data) / 200.0
    cfg = RnnConfig(widths=(2,), l_f=1e-3, u_f=10.0)
    init = rnn.zeros(cfg)
    init.params["b_out"] = np.array(1.0)
    tc = TrainConfig(optimizer="adam", lr=0.05, schedule="constant", epochs=150, link="identity-clamp",
                     free=("b_out",))
    model, _ = fit_erm(init, data, tc)
    assert float(model.params["b_out"]) == pytest.approx(mle, rel=0.05)


def test_zero_epochs_returns_init():
    rng = np.random.default_rng(1)
    init = random_model(rng, (3,))
    data = simulate_many(HomPoisson(2.0), 1.0, 5, seed=1)
    model, trace = fit_erm(init, data, TrainConfig(epochs=0))
    assert rnn.dumps(model) == rnn.dumps(init)
    assert len(trace) == 1


def test_projection_contract():
    rng = np.random.default_rng(2)
    m = random_model(rng, (4, 4), scale=1.0)
    scale = 1.0 / param_norm(m)
    m = m.with_params({k: v * scale for k, v in m.params.items()})
    assert param_norm(m) == pytest.approx(1.0)
    p = project(m, 0.5)
    assert param_norm(p) <= 0.5 + 1e-9
    assert param_norm(project(p, 0.5)) == pytest.approx(param_norm(p), abs=1e-12)


def test_training_is_deterministic():
    data = simulate_many(HomPoisson(2.0), 1.0, 20, seed=4)
    cfg = RnnConfig(widths=(3,))
    tc = TrainConfig(epochs=3, batch_size=7, seed=11)
    a, _ = fit_erm(init_params(cfg, seed=5), data, tc)
    b, _ = fit_erm(init_params(cfg, seed=5), data, tc)
    assert rnn.dumps(a) == rnn.dumps(b)


def test_init_is_seeded():
    cfg = RnnConfig(widths=(4, 4))
    assert rnn.dumps(init_params(cfg, seed=3)) == rnn.dumps(init_params(cfg, seed=3))


def test_small_uniform_norm_bound():
    cfg = RnnConfig(widths=(8, 8))
    norms = [param_norm(init_params(cfg, seed=s)) for s in range(100)]
    assert max(norms) <= 0.1 * math.sqrt(8) + 0.1


def test_warm_start_shape_mismatch(vanilla_build):
    model, _ = vanilla_build
    with pytest.raises(ConfigError):
        init_params(RnnConfig(widths=(3,)), "constructive-warm-start", warm=model)


def test_warm_start_nll_close_to_truth(vanilla_build):
    model, truth = vanilla_build
    from tpplab import constructive as C
    cert = C.certificate(model)["certified_error"]
    warm = init_params(model.config, "constructive-warm-start", warm=model)
    held = C.filtered_sequences(truth, 2.0, 8, 50, seed=77)
    for s in held:
        # |NLL_hat - NLL*| <= T e + sum_j e / min(lam*) with lam* >= 1
        bound = (2.0 + len(s) / (1.0 - cert)) * cert
        assert abs(nll_loss(warm, s) + loglik(truth, s)) <= bound


def test_trace_csv(tmp_path):
    data = simulate_many(HomPoisson(2.0), 1.0, 10, seed=4)
    _, trace = fit_erm(init_params(RnnConfig(widths=(2,))), data, TrainConfig(epochs=2), val=data[:3])
    path = tmp_path / "trace.csv"
    write_trace(path, trace)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,mean_train_nll,mean_val_nll,param_norm"
    assert len(lines) == 4


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="sgdx")
