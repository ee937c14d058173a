"""Acceptance suite: one PASS/FAIL line per criterion.

Lines are printed as each criterion finishes and repeated in the pytest
terminal summary.  Run standalone with ``python3 tests/test_acceptance.py``.
"""
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

sys.path.insert(0, str(Path(__file__).parent))

from tpplab import catalogue as cat
from tpplab import constructive as C
from tpplab.bounds import BoundConfig, covering_log, s_poly, stochastic_error_bound
from tpplab.core import (HomPoisson, LinearHawkesExp, LinearHawkesGeneral, NonHomPoisson, NonlinearHawkesExp,
                         compensator_at_events, loglik, simulate_many, tail_constants)
from tpplab.experiments import lipschitz_trials, scaling_study
from tpplab.rnn import ExactIntensity, RnnConfig, nll_loss
from tpplab.train import TrainConfig

import oracles

RESULTS: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"acceptance criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[n] = line
    print(line, flush=True)
    assert ok, line


def test_criterion_1_simulator_fidelity():
    t0 = time.time()
    m = LinearHawkesExp(cat.Constant(1.0), 1.0, 2.0)
    gaps = oracles.rescaled_gaps(m, simulate_many(m, 10.0, 200, seed=1), compensator_at_events)
    p = stats.kstest(gaps, "expon").pvalue
    mean = np.mean([len(s) for s in simulate_many(HomPoisson(2.0), 1.0, 10_000, seed=2)])
    dt = time.time() - t0
    report(1, p > 0.01 and 1.9 <= mean <= 2.1 and dt < 30,
           f"KS p={p:.3g} (> 0.01), Poisson mean={mean:.4f} (in [1.9, 2.1]), {dt:.1f}s (< 30s)")


def test_criterion_2_loss_exactness():
    t0 = time.time()
    worst = 0.0
    for k, m in enumerate([HomPoisson(2.0), LinearHawkesExp(cat.Constant(1.0), 1.0, 2.0)]):
        for s in simulate_many(m, 5.0, 100, seed=10 + k):
            worst = max(worst, abs(nll_loss(ExactIntensity(m), s) + loglik(m, s)))
    dt = time.time() - t0
    report(2, worst <= 1e-8 and dt < 10, f"max |nll + loglik| = {worst:.2e} (<= 1e-8), {dt:.1f}s (< 10s)")


def test_criterion_3_gradient_correctness():
    from test_train import fd_check, random_case
    t0 = time.time()
    worst = max(fd_check(*random_case(s), rng=np.random.default_rng(s)) for s in range(20))
    dt = time.time() - t0
    report(3, worst < 1e-4 and dt < 30, f"max relative error {worst:.2e} over 20 cases (< 1e-4), {dt:.1f}s (< 30s)")


def test_criterion_4_constructive_certification():
    t0 = time.time()
    cases = []
    lam0 = cat.Sinusoid(2.0, 1.0, 1.0)
    m = C.build_poisson_rnn(lam0, 1.0, budget=0.01)
    cases.append(("t4", m, NonHomPoisson(lam0), 1.0, None, 0.01))
    m = C.build_vanilla_hawkes_rnn(cat.Constant(1.0), 0.5, 1.0, 2.0, 8, budget=0.05)
    cases.append(("t5", m, LinearHawkesExp(cat.Constant(1.0), 0.5, 1.0), 2.0, 8, 0.05))
    mu = cat.ExpMixtureKernel((0.4, 0.3), (1.5, 4.0))
    m = C.build_linear_hawkes_rnn(cat.Constant(1.0), mu, 1.0, 8, budget=0.1)
    cases.append(("t6", m, LinearHawkesGeneral(cat.Constant(1.0), mu), 1.0, 8, 0.1))
    link = cat.SigmoidLink(0.5, 3.0, shift=2.0)
    m = C.build_nonlinear_hawkes_rnn(cat.Constant(1.0), 0.5, 1.0, link, 2.0, 8, budget=0.1)
    cases.append(("t7", m, NonlinearHawkesExp(cat.Constant(1.0), 0.5, 1.0, link), 2.0, 8, 0.1))
    ok, parts = True, []
    for name, model, truth, T, s0, budget in cases:
        cert = C.certificate(model)["certified_error"]
        meas = C.measure_sup_error(model, truth, T, s0, n=100, seed=1234)
        ok = ok and cert <= budget and meas <= budget and meas <= cert
        parts.append(f"{name} cert={cert:.3g} meas={meas:.3g} (<= {budget})")
    dt = time.time() - t0
    report(4, ok and dt < 300, "; ".join(parts) + f"; {dt:.0f}s (< 300s)")


def test_criterion_5_lipschitz_domination():
    t0 = time.time()
    worst, viol = {}, 0
    for L in (1, 2, 3):
        cfg = BoundConfig(L=L, D=4, B_x=1.5, B_h=0.8, B_b=1.0, l_f=0.01, u_f=5.0)
        rep = lipschitz_trials(cfg, trials=1000, seed=L)
        worst[L], viol = rep.max_ratio, viol + rep.violations
    dt = time.time() - t0
    report(5, viol == 0 and dt < 120,
           f"violations={viol} over 3000 trials, max ratio per L {', '.join(f'{k}: {v:.3g}' for k, v in worst.items())}, "
           f"{dt:.1f}s (< 120s)")


def test_criterion_6_bound_evaluators():
    t0 = time.time()
    c = BoundConfig(L=2, D=4, B_x=1.5, B_h=0.8, B_b=1.0)
    mono = all(covering_log(c, 5, e / 2) > covering_log(c, 5, e) for e in (10.0, 1.0, 0.1, 0.01))
    mono &= all(covering_log(c, n + 1, 0.1) > covering_log(c, n, 0.1) for n in range(10))
    mono &= all(covering_log(BoundConfig(L=2, D=d + 1, B_x=1.5, B_h=0.8, B_b=1.0), 5, 0.1)
                > covering_log(BoundConfig(L=2, D=d, B_x=1.5, B_h=0.8, B_b=1.0), 5, 0.1) for d in range(1, 10))
    golden = json.loads((oracles.GOLDEN / "bounds_reference.json").read_text())
    ref = oracles.REFERENCE
    rep = stochastic_error_bound(BoundConfig(**ref["bound"]), tail_constants(HomPoisson(1.0), ref["tail"]["eta"], 1.0),
                                 ref["n"], ref["delta"])
    rel = abs(rep.value / golden["value"] - 1)
    rec = max(abs(b * s_poly(i - 1, r, b) + s_poly(i, r - 1, b) - s_poly(i, r, b)) / s_poly(i, r, b)
              for b in (0.5, 1.0, 1.7) for i in range(11) for r in range(1, 11))
    dt = time.time() - t0
    report(6, mono and rel <= 1e-10 and rec <= 1e-12 and dt < 5,
           f"monotone={mono}, golden rel err={rel:.1e} (<= 1e-10), recurrence rel err={rec:.1e}, {dt:.2f}s (< 5s)")


@pytest.mark.slow
def test_criterion_7_excess_risk_scaling():
    t0 = time.time()
    res = scaling_study(HomPoisson(2.0), RnnConfig(widths=(16, 16)), [50, 200, 800], TrainConfig(), replicates=3,
                        T=1.0, n_test=5000, seed=0)
    dt = time.time() - t0
    means = ", ".join(f"{r['mean_gap']:.3g}" for r in res.table)
    report(7, -0.55 <= res.slope <= -0.15 and res.decreasing and dt < 600,
           f"slope={res.slope:.3f} (bracket [-0.55, -0.15]), mean gaps [{means}] "
           f"strictly decreasing={res.decreasing}, {dt:.0f}s (< 600s)")


@pytest.mark.slow
def test_criterion_8_interpolation_failure(counterexample_run):
    code, _, doc, dt = counterexample_run
    lb = doc["lower_bound"]
    est = doc["estimates"]
    gap = {k: v["gap"] for k, v in est.items()}
    # the stated event probability exp(-16/27) and the value exp(-10/9) from integrating the truth
    bounds = {"exp(-16/27)": lb["inf_F"] * math.exp(-16 / 27), "exp(-10/9)": lb["inf_F"] * lb["P_E"]}
    ok = code == 0 and doc["ordering_ok"] and dt < 600
    parts = []
    for name, b in bounds.items():
        this = (gap["NaiveSingleLayer"] >= 0.5 * b and gap["ConstantHold"] >= 0.5 * b
                and gap["InputEmbedding"] <= 0.25 * b)
        ok = ok and this
        parts.append(f"P(E)={name}: bound={b:.3g} {'met' if this else 'NOT met'}")
    seps = ", ".join(f"{k} {v:.3g}" for k, v in doc["separations"].items())
    report(8, ok, f"gaps Naive={gap['NaiveSingleLayer']:.3g}, ConstantHold={gap['ConstantHold']:.3g}, "
                  f"InputEmbedding={gap['InputEmbedding']:.3g}; " + "; ".join(parts)
                  + f"; separations (stderr units) {seps} (>= 3); {dt:.0f}s (< 600s)")


def test_criterion_9_determinism(tmp_path):
    from click.testing import CliRunner
    from tpplab.cli import main
    hawkes = {"kind": "LinearHawkesExp", "background": {"name": "constant", "params": {"c": 1.0}},
              "alpha": 0.5, "beta": 1.0}
    cfgs = {
        "simulate": {"model": hawkes, "n": 40, "horizon": 2.0},
        "construct": {"theorem": "t5", "truth": hawkes, "T": 2.0, "s0": 6, "n_check": 10},
        "bounds": oracles.REFERENCE,
        "lipschitz": {"L": [1, 2], "trials": 50},
        "scaling": {"n_grid": [10, 20, 40], "replicates": 1, "n_test": 100, "arch": {"widths": [3]},
                    "train": {"epochs": 2}},
    }
    paths = {k: tmp_path / f"{k}.json" for k in cfgs}
    for k, p in paths.items():
        p.write_text(json.dumps(cfgs[k]))
    runner = CliRunner()
    runs = {
        "simulate": lambda o: ["simulate", "--config", paths["simulate"], "--seed", 3, "--out", o],
        "train": lambda o: ["train", "--config", tmp_path / "train.json", "--seed", 3, "--out", o],
        "construct": lambda o: ["construct", "--config", paths["construct"], "--out", o],
        "bounds": lambda o: ["bounds", "--config", paths["bounds"], "--out", o],
        "experiment lipschitz": lambda o: ["experiment", "lipschitz", "--config", paths["lipschitz"], "--out", o],
        "experiment scaling": lambda o: ["experiment", "scaling", "--config", paths["scaling"], "--workers", 1,
                                         "--out", o],
    }
    seqs = None
    same, failed = [], []
    for name, args in runs.items():
        if name == "train":
            (tmp_path / "train.json").write_text(json.dumps(
                {"data": str(seqs), "arch": {"widths": [3]}, "train": {"epochs": 3}}))
        outs = []
        for rep in ("a", "b"):
            o = tmp_path / name.replace(" ", "_") / rep
            res = runner.invoke(main, [str(a) for a in args(o)])
            if res.exit_code != 0:
                failed.append(f"{name} exit {res.exit_code}")
            outs.append(o)
        if name == "simulate":
            seqs = outs[0] / "sequences.jsonl"
        files = sorted(p.name for p in outs[0].iterdir()) if outs[0].exists() else []
        ok = bool(files) and all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files)
        (same if ok else failed).append(name)
    report(9, not failed, f"byte-identical reruns: {', '.join(same)}" + (f"; failures: {failed}" if failed else ""))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
