"""Reproducible studies: excess-risk estimation and scaling, Lipschitz domination
trials and the interpolation-failure counterexample.

Gaps are Monte-Carlo estimates over fresh simulated test sequences.  Two
estimators are available, both paired (candidate and truth evaluated on the
same sequences with the same quadrature nodes):

``paired``       mean of loss(candidate) - loss(truth) per sequence.
``compensator``  mean of int_0^T [lam - lam* - lam* log(lam / lam*)] dt per
                 sequence.  For a predictable candidate this has the same
                 expectation (the event sum is replaced by its compensator),
                 the integrand is nonnegative, and the variance is far lower.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import catalogue as cat
from .bounds import BoundConfig, Deltas, lipschitz_bound
from .constructive import build_poisson_rnn
from .core import EventSequence, NonHomPoisson, model_to_doc, simulate_many, stream
from .errors import ConfigError, TrainingError
from .quadrature import fixed_panels, nodes_weights
from .rnn import Interp, Link, RnnConfig, RnnTppModel, intensity_fn, spectral_norm
from .train import TrainConfig, fit_erm, init_params

PANELS = 4


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 63-bit seed for a labelled sub-task."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# ------------------------------------------------------------ excess risk

@dataclass
class ExcessRiskEstimate:
    mean_candidate_nll: float
    mean_truth_nll: float
    gap: float
    stderr: float
    n_train: int | None
    n_test: int
    seed: int
    estimator: str
    mean_events_plus_one: float

    def to_doc(self) -> dict:
        return asdict(self)


def _candidate_fn(candidate, seq: EventSequence):
    if isinstance(candidate, RnnTppModel):
        return intensity_fn(candidate, seq)
    if hasattr(candidate, "kind"):
        return lambda t: np.asarray(candidate.intensity(seq.times, t), dtype=float)
    if callable(candidate):
        return lambda t: np.asarray(candidate(seq, t), dtype=float)
    raise ConfigError("candidate must be an RnnTppModel, a model spec or a callable (seq, t)")


def _breakpoints(truth, T: float) -> list:
    bg = getattr(truth, "background", None)
    fn = getattr(bg, "breakpoints", None)
    return list(fn(T)) if fn is not None else []


def _per_sequence(candidate, truth, seq: EventSequence, breaks, panels: int):
    """(loss candidate, loss truth, compensator-form gap) on shared nodes."""
    T = seq.horizon
    edges = np.unique(np.concatenate([[0.0], seq.times, breaks, [T]]))
    nodes, weights = nodes_weights(*fixed_panels(edges, panels))
    f = _candidate_fn(candidate, seq)
    lam = f(nodes)
    lam_star = np.asarray(truth.intensity(seq.times, nodes), dtype=float)
    if len(seq):
        ev = f(seq.times)
        ev_star = np.asarray(truth.intensity(seq.times, seq.times), dtype=float)
    else:
        ev = ev_star = np.empty(0)
    loss_c = math.fsum(weights * lam) - math.fsum(np.log(ev))
    loss_t = math.fsum(weights * lam_star) - math.fsum(np.log(ev_star))
    integrand = lam - lam_star - lam_star * np.log(lam / lam_star)
    return loss_c, loss_t, math.fsum(weights * integrand)


def _stderr(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def excess_risk(candidate, truth, T: float, n_test: int = 5000, seed: int = 0, estimator: str = "paired",
                test: Sequence[EventSequence] | None = None, n_train: int | None = None,
                panels: int = PANELS) -> ExcessRiskEstimate:
    """Monte-Carlo excess risk of ``candidate`` against the data-generating ``truth``."""
    if estimator not in ("paired", "compensator"):
        raise ConfigError(f"unknown estimator {estimator!r}")
    if test is None:
        if n_test < 100:
            raise ConfigError("n_test must be >= 100")
        test = simulate_many(truth, T, n_test, seed)
    breaks = _breakpoints(truth, T)
    rows = np.array([_per_sequence(candidate, truth, s, breaks, panels) for s in test])
    lc, lt, comp = rows[:, 0], rows[:, 1], rows[:, 2]
    diff = lc - lt if estimator == "paired" else comp
    counts = np.array([len(s) + 1 for s in test], dtype=float)
    return ExcessRiskEstimate(float(np.mean(lc)), float(np.mean(lt)), float(np.mean(diff)), _stderr(diff),
                              n_train, len(test), int(seed), estimator, float(np.mean(counts)))


# ---------------------------------------------------------------- scaling

@dataclass
class ScalingResult:
    rows: list            # per (n, replicate)
    table: list           # per n: n, mean_gap, stderr, n_ok
    slope: float
    intercept: float
    decreasing: bool
    config: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return asdict(self)


def _fit_slope(ns, gaps):
    ns = np.asarray(ns, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if gaps.size < 2 or np.any(~(gaps > 0)):
        return math.nan, math.nan
    A = np.vstack([np.log(ns), np.ones_like(ns)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, np.log(gaps), rcond=None)
    return float(slope), float(icpt)


def _scaling_cell(args):
    truth, arch, cfg, T, n, r, seed, test, estimator, val_frac = args
    train = simulate_many(truth, T, n, derive_seed(seed, 1, n, r))
    n_val = max(int(round(val_frac * n)), 10) if val_frac > 0 else 0
    val = simulate_many(truth, T, n_val, derive_seed(seed, 2, n, r)) if n_val else None
    init = init_params(arch, "small-uniform", derive_seed(seed, 3, n, r))
    row = {"n": n, "replicate": r, "status": "ok", "gap": math.nan, "stderr": math.nan, "epochs": 0}
    try:
        model, trace = fit_erm(init, train, replace(cfg, seed=derive_seed(seed, 4, n, r) % 2**31), val)
    except TrainingError as exc:
        row["status"] = f"failed: {exc}"
        return row
    est = excess_risk(model, truth, T, test=test, estimator=estimator, n_train=n, seed=seed)
    row.update(gap=est.gap, stderr=est.stderr, epochs=len(trace) - 1)
    return row


def scaling_study(truth, arch: RnnConfig, n_grid: Sequence[int], cfg: TrainConfig, replicates: int = 3,
                  T: float = 1.0, n_test: int = 5000, seed: int = 0, estimator: str = "compensator",
                  val_frac: float = 0.25, workers: int = 1) -> ScalingResult:
    """Train fresh models per (n, replicate) and fit log gap against log n."""
    n_grid = [int(n) for n in n_grid]
    if len(n_grid) < 3 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ConfigError("n_grid must be ascending with at least 3 points")
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    # one shared test set: every cell is compared on the same sequences
    test = simulate_many(truth, T, n_test, derive_seed(seed, 0))
    tasks = [(truth, arch, cfg, T, n, r, seed, test, estimator, val_frac) for n in n_grid for r in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_scaling_cell, tasks))
    else:
        rows = [_scaling_cell(t) for t in tasks]
    table = []
    for n in n_grid:
        gaps = np.array([r["gap"] for r in rows if r["n"] == n and r["status"] == "ok"])
        mean = float(np.mean(gaps)) if gaps.size else math.nan
        table.append({"n": n, "mean_gap": mean, "stderr": _stderr(gaps) if gaps.size > 1 else math.nan,
                      "n_ok": int(gaps.size)})
    means = [row["mean_gap"] for row in table]
    slope, icpt = _fit_slope(n_grid, means)
    decreasing = all(b < a for a, b in zip(means, means[1:]))
    conf = {"truth": model_to_doc(truth), "arch": arch.to_doc(), "train": asdict(cfg), "n_grid": n_grid,
            "replicates": replicates, "T": T, "n_test": n_test, "seed": seed, "estimator": estimator}
    return ScalingResult(rows, table, slope, icpt, decreasing, conf)


# ---------------------------------------------------------- Lipschitz trials

@dataclass
class LipschitzReport:
    max_ratio: float
    violations: int
    trials: int
    rows: list
    per_L: dict

    def to_doc(self) -> dict:
        return asdict(self)


def _scaled(rng, shape, bound):
    """Random array whose spectral (or Euclidean) norm is uniform in [0, bound]."""
    A = rng.normal(size=shape)
    norm = spectral_norm(A) if A.ndim == 2 else float(np.linalg.norm(A))
    return A * (bound * rng.uniform() / norm) if norm > 0 else A


def _random_params(rng, cfg: BoundConfig, dims):
    p = {}
    for l in range(cfg.L):
        p[f"Wx{l}"] = _scaled(rng, (dims[l + 1], dims[l]), cfg.B_x)
        p[f"Wh{l}"] = _scaled(rng, (dims[l + 1], dims[l + 1]), cfg.B_h)
        p[f"b{l}"] = _scaled(rng, (dims[l + 1],), cfg.B_b)
    p["w_out"] = _scaled(rng, (dims[-1],), cfg.B_x)
    p["b_out"] = np.array(rng.uniform(-cfg.B_b, cfg.B_b))
    return p


def _shrink_into(p, cfg: BoundConfig):
    out = {}
    for k, v in p.items():
        if k.startswith("Wx") or k.startswith("Wh"):
            cap = cfg.B_x if k.startswith("Wx") else cfg.B_h
            n = spectral_norm(v)
            out[k] = v * min(1.0, cap / n) if n > 0 else v
        elif k == "w_out":
            n = float(np.linalg.norm(v))
            out[k] = v * min(1.0, cfg.B_x / n) if n > 0 else v
        elif k == "b_out":
            out[k] = np.clip(v, -cfg.B_b, cfg.B_b)
        else:
            n = float(np.linalg.norm(v))
            out[k] = v * min(1.0, cfg.B_b / n) if n > 0 else v
    return out


def param_deltas(p1: dict, p2: dict, L: int) -> Deltas:
    d = Deltas.zeros(L)
    for l in range(L):
        d.db[l] = np.linalg.norm(p1[f"b{l}"] - p2[f"b{l}"])
        d.dx[l] = spectral_norm(p1[f"Wx{l}"] - p2[f"Wx{l}"])
        d.dh[l] = spectral_norm(p1[f"Wh{l}"] - p2[f"Wh{l}"])
    d.db[L] = abs(float(p1["b_out"] - p2["b_out"]))
    d.dx[L] = np.linalg.norm(p1["w_out"] - p2["w_out"])
    return d


def lipschitz_trials(cfg: BoundConfig, trials: int = 1000, seed: int = 0, max_events: int = 6,
                     identical: bool = False) -> LipschitzReport:
    """Compare measured |lam_1(t) - lam_2(t)| with the Lipschitz bound on random pairs."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = stream(seed, 31337)
    arch = RnnConfig(widths=(cfg.D,) * cfg.L, input_dim=2, l_f=cfg.l_f, u_f=cfg.u_f, link=Link.CLAMP.value,
                     interpolation=Interp.INPUT_EMBEDDING.value)
    dims = (2,) + arch.widths
    rows = []
    for trial in range(trials):
        p1 = _random_params(rng, cfg, dims)
        if identical:
            p2 = {k: v.copy() for k, v in p1.items()}
        elif trial % 2:
            p2 = _random_params(rng, cfg, dims)
        else:
            scale = 10.0 ** rng.uniform(-3, 0)
            p2 = _shrink_into({k: v + scale * rng.normal(size=np.shape(v)) for k, v in p1.items()}, cfg)
        n_ev = int(rng.integers(0, max_events + 1))
        seq = EventSequence(np.sort(rng.uniform(0.0, cfg.T, n_ev)), cfg.T)
        t = float(rng.uniform(0.0, cfg.T)) or cfg.T
        m1, m2 = RnnTppModel(arch, p1), RnnTppModel(arch, p2)
        diff = abs(float(intensity_fn(m1, seq)(np.array([t]))[0] - intensity_fn(m2, seq)(np.array([t]))[0]))
        i = int(seq.prefix_count(np.array([t]))[0])
        bound = lipschitz_bound(cfg, i, param_deltas(p1, p2, cfg.L))
        ratio = 0.0 if diff == 0.0 else (diff / bound if bound > 0 else math.inf)
        rows.append({"trial": trial, "events": n_ev, "interval": i, "diff": diff, "bound": bound, "ratio": ratio})
    ratios = np.array([r["ratio"] for r in rows])
    return LipschitzReport(float(ratios.max()), int(np.sum(ratios > 1.0)), trials, rows,
                           {cfg.L: float(ratios.max())})


# ---------------------------------------------------------- counterexample

def counterexample_truth(T: float = 1.0) -> NonHomPoisson:
    return NonHomPoisson(cat.ThreePiece(T))


def _g_gap(x, y):
    return x - y * np.log(x) - (y - y * np.log(y))


def counterexample_F(alpha: float, b: float, T: float = 1.0, n: int = 64) -> float:
    """int over [T/3, 2T/3] of g(clip(alpha t + b, T, 4T), 9t^2/T) - g(9t^2/T, 9t^2/T), Gauss-Legendre."""
    x, w = np.polynomial.legendre.leggauss(n)
    a, c = T / 3.0, 2.0 * T / 3.0
    t = 0.5 * (a + c) + 0.5 * (c - a) * x
    y = 9.0 / T * t * t
    lam = np.clip(alpha * t + b, T, 4.0 * T)
    return float(np.sum(0.5 * (c - a) * w * _g_gap(lam, y)))


def _plateau(level: float, lo: float, hi: float, T: float, n: int = 64) -> float:
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
    y = 9.0 / T * t * t
    return float(np.sum(0.5 * (hi - lo) * w * _g_gap(np.full_like(t, level), y)))


def counterexample_lower_bound(T: float = 1.0, grid: int = 200) -> dict:
    """inf F(alpha, b) over the compact box (grid then Nelder-Mead) and the two plateau cases."""
    A = np.linspace(-18.0, 18.0, grid)
    Bv = np.linspace(-16.0 * T, 16.0 * T, grid)
    vals = np.array([[counterexample_F(a, b, T) for b in Bv] for a in A])
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    res = minimize(lambda p: counterexample_F(p[0], p[1], T), [A[i], Bv[j]], method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 4000})
    box = min(float(res.fun), float(vals[i, j]))
    a_opt, b_opt = (res.x if res.fun <= vals[i, j] else (A[i], Bv[j]))
    I1, I2, I0 = (T / 3.0, 5.0 * T / 12.0), (7.0 * T / 12.0, 2.0 * T / 3.0), (T / 3.0, 2.0 * T / 3.0)
    C1 = min(_plateau(lv, *I, T) for lv in (T, 4.0 * T) for I in (I1, I2))
    C2 = min(_plateau(lv, *I0, T) for lv in (T, 4.0 * T))
    inf_F = min(box, C1, C2)
    lam_int = float(cat.ThreePiece(T).integral(0.0, 2.0 * T / 3.0))
    p_E = math.exp(-lam_int)
    # best constant level (alpha = 0) for the constant-hold family
    rc = minimize(lambda p: counterexample_F(0.0, p[0], T), [2.0 * T], method="Nelder-Mead",
                  options={"xatol": 1e-10, "fatol": 1e-15})
    return {"inf_F": inf_F, "box_min": box, "C1": C1, "C2": C2, "alpha": float(a_opt), "b": float(b_opt),
            "P_E": p_E, "Lambda_2T3": lam_int, "bound": inf_F * p_E,
            "const_level": float(rc.x[0]), "const_F": float(rc.fun)}


@dataclass
class CounterexampleResult:
    lower_bound: dict
    estimates: dict          # variant -> ExcessRiskEstimate doc
    ordering_ok: bool
    separations: dict        # variant -> (gap difference) / pooled stderr against InputEmbedding
    config: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return asdict(self)


VARIANTS = (Interp.NAIVE.value, Interp.CONSTANT_HOLD.value, Interp.INPUT_EMBEDDING.value)


def _variant_init(variant: str, T: float, width: int, init: str, lb: dict, seed: int, budget: float):
    if variant == Interp.INPUT_EMBEDDING.value:
        if init == "oracle":
            built = build_poisson_rnn(cat.ThreePiece(T), T, budget=budget, seed=seed, clamp=(T, 4.0 * T))
            return init_params(built.config, "constructive-warm-start", warm=built)
        arch = RnnConfig((width, width), 2, T, 4.0 * T, Link.CLAMP.value, variant)
        return init_params(arch, "small-uniform", seed)
    arch = RnnConfig((width,), 2, T, 4.0 * T, Link.CLAMP.value, variant)
    model = init_params(arch, "small-uniform", seed)
    if init == "oracle":
        p = dict(model.params)
        p["w_out"] = np.zeros_like(p["w_out"])
        if variant == Interp.NAIVE.value:
            p["alpha_naive"], p["b_out"] = np.array(lb["alpha"]), np.array(lb["b"])
        else:
            p["b_out"] = np.array(lb["const_level"])
        model = model.with_params(p)
    return model


def counterexample_study(T: float = 1.0, variants: Sequence[str] = VARIANTS, cfg: TrainConfig | None = None,
                         n: int = 800, seed: int = 0, n_test: int = 5000, width: int = 8,
                         init: str = "oracle", estimator: str = "compensator",
                         budget: float = 0.02) -> CounterexampleResult:
    """Train each interpolation variant on the piecewise truth and estimate its excess risk.

    ``init='oracle'`` starts every variant at its own family's best approximant
    (the constructive build for InputEmbedding, the F-minimizing line or
    constant for the others) before ERM; ``'small-uniform'`` starts from scratch.
    """
    if T <= 0:
        raise ConfigError("T must be positive")
    if init not in ("oracle", "small-uniform"):
        raise ConfigError(f"unknown init {init!r}")
    cfg = cfg or TrainConfig(lr=1e-3, epochs=20, patience=5, link=None)
    truth = counterexample_truth(T)
    lb = counterexample_lower_bound(T)
    train = simulate_many(truth, T, n, derive_seed(seed, 1))
    val = simulate_many(truth, T, max(n // 4, 10), derive_seed(seed, 2))
    test = simulate_many(truth, T, n_test, derive_seed(seed, 3))
    estimates = {}
    for k, variant in enumerate(variants):
        model0 = _variant_init(variant, T, width, init, lb, derive_seed(seed, 4, k) % 2**31, budget)
        model, _ = fit_erm(model0, train, replace(cfg, link=None, seed=derive_seed(seed, 5, k) % 2**31), val)
        est = excess_risk(model, truth, T, test=test, estimator=estimator, n_train=n, seed=seed)
        estimates[variant] = est.to_doc()
    seps = {}
    ok = True
    ie = estimates.get(Interp.INPUT_EMBEDDING.value)
    if ie is not None:
        for v, e in estimates.items():
            if v == Interp.INPUT_EMBEDDING.value:
                continue
            pooled = math.hypot(e["stderr"], ie["stderr"])
            seps[v] = (e["gap"] - ie["gap"]) / pooled if pooled > 0 else math.inf
            ok = ok and e["gap"] > ie["gap"] and seps[v] >= 3.0
    conf = {"T": T, "variants": list(variants), "train": asdict(cfg), "n": n, "seed": seed,
            "n_test": n_test, "width": width, "init": init, "estimator": estimator, "budget": budget}
    return CounterexampleResult(lb, estimates, ok, seps, conf)


# ---------------------------------------------------------------- outputs

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(doc), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_csv(path, rows: list, columns: Sequence[str] | None = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
