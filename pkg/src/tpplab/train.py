"""Reverse-mode gradients of the discretized NLL and projected first-order ERM.

The engine evaluates a whole batch of sequences at once: the grid recursion
runs in lockstep over padded sequences and every query (event times and
quadrature nodes) is one row of a flat design.  Gradients are accumulated per
fixed block of sequences and the blocks are combined by a pairwise tree sum, so
results depend only on the dataset order.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import EventSequence, stream
from .errors import ConfigError, TrainingError
from .quadrature import QuadConfig, discretize, fixed_panels, nodes_weights
from .rnn import (Interp, RnnConfig, RnnTppModel, _grid_inputs, intensity_fn,
                  output_link, param_norm, spectral_norm, zeros)

BLOCK = 64


# ---------------------------------------------------------------- batching

class Batch:
    """Flattened query design for a list of sequences.

    Quadrature nodes come from ``quad``: fixed panels are shared across
    parameter values; adaptive panels are chosen once, at ``model`` (the
    discretization is then held fixed for differentiation).
    """

    def __init__(self, seqs: Sequence[EventSequence], input_dim: int, quad: QuadConfig,
                 model: RnnTppModel | None = None):
        self.seqs = list(seqs)
        B = len(self.seqs)
        self.B = B
        self.lengths = np.array([len(s) for s in self.seqs], dtype=int)
        nmax = int(self.lengths.max()) if B else 0
        self.nmax = nmax
        self.Xg = np.zeros((B, max(nmax, 1), input_dim))
        q_seq, q_J, q_t, q_w, q_node = [], [], [], [], []
        for b, s in enumerate(self.seqs):
            n = len(s)
            if n:
                self.Xg[b, :n] = _grid_inputs(s, input_dim)
                q_seq.append(np.full(n, b)); q_J.append(np.arange(n)); q_t.append(s.times)
                q_w.append(np.zeros(n)); q_node.append(np.zeros(n, dtype=bool))
            edges = np.concatenate([[0.0], s.times, [s.horizon]])
            if quad.fixed_panels is not None:
                nodes, weights = nodes_weights(*fixed_panels(edges, quad.fixed_panels))
            else:
                if model is None:
                    raise ConfigError("adaptive discretization needs a reference model")
                nodes, weights = discretize(intensity_fn(model, s), edges, quad)
            q_seq.append(np.full(nodes.size, b)); q_J.append(s.prefix_count(nodes))
            q_t.append(nodes); q_w.append(weights); q_node.append(np.ones(nodes.size, dtype=bool))
        cat = lambda parts, dt=float: np.concatenate(parts).astype(dt) if parts else np.empty(0, dt)
        self.q_seq = cat(q_seq, int)
        self.q_J = cat(q_J, int)
        self.q_t = cat(q_t)
        self.q_w = cat(q_w)
        self.q_node = cat(q_node, bool)
        last = np.zeros(self.q_t.size)
        has = self.q_J > 0
        if np.any(has):
            last[has] = self.Xg[self.q_seq[has], self.q_J[has] - 1, 0]
        cols = [self.q_t, self.q_t - last]
        if input_dim == 3:
            cols.append(self.q_J.astype(float))
        self.q_X = np.stack(cols, axis=-1) if self.q_t.size else np.empty((0, input_dim))

    def subset(self, idx):
        """Batch restricted to sequences ``idx`` (queries re-indexed)."""
        sub = object.__new__(Batch)
        idx = np.asarray(idx, dtype=int)
        remap = -np.ones(self.B, dtype=int)
        remap[idx] = np.arange(idx.size)
        keep = remap[self.q_seq] >= 0
        sub.seqs = [self.seqs[i] for i in idx]
        sub.B = idx.size
        sub.lengths = self.lengths[idx]
        sub.nmax = int(sub.lengths.max()) if sub.B else 0
        sub.Xg = self.Xg[idx][:, : max(sub.nmax, 1)]
        sub.q_seq = remap[self.q_seq[keep]]
        for name in ("q_J", "q_t", "q_w", "q_node", "q_X"):
            setattr(sub, name, getattr(self, name)[keep])
        return sub


def _grid_forward(model: RnnTppModel, batch: Batch):
    cfg = model.config
    H = [np.zeros((batch.B, batch.nmax + 1, d)) for d in cfg.widths]
    for j in range(1, batch.nmax + 1):
        below = batch.Xg[:, j - 1]
        for l in range(cfg.L):
            z = below @ model.Wx(l).T + H[l][:, j - 1] @ model.Wh(l).T + model.b(l)
            H[l][:, j] = np.tanh(z)
            below = H[l][:, j]
    return H


def _forward(model: RnnTppModel, batch: Batch):
    cfg = model.config
    H = _grid_forward(model, batch)
    s, J, X = batch.q_seq, batch.q_J, batch.q_X
    A = []
    if cfg.interpolation == Interp.INPUT_EMBEDDING.value:
        below = X
        for l in range(cfg.L):
            a = np.tanh(below @ model.Wx(l).T + H[l][s, J] @ model.Wh(l).T + model.b(l))
            A.append(a)
            below = a
        top = below
    else:
        top = H[-1][s, J]
    o = top @ model.params["w_out"] + model.params["b_out"]
    if cfg.interpolation in (Interp.NAIVE.value, Interp.LINEAR_IN_TIME.value):
        o = o + model.params["alpha_naive"] * X[:, 1]
    lam, dlam = output_link(cfg, o)
    return H, A, top, lam, dlam


def batch_losses(model: RnnTppModel, batch: Batch) -> np.ndarray:
    """Per-sequence NLL on the batch discretization."""
    _, _, _, lam, _ = _forward(model, batch)
    contrib = np.where(batch.q_node, batch.q_w * lam, -np.log(lam))
    return np.bincount(batch.q_seq, weights=contrib, minlength=batch.B)


def _backward(model: RnnTppModel, batch: Batch, H, A, top, lam, dlam):
    cfg = model.config
    s, J, X = batch.q_seq, batch.q_J, batch.q_X
    g = {k: np.zeros_like(v) for k, v in model.params.items()}
    coeff = np.where(batch.q_node, batch.q_w, -1.0 / lam)
    dO = coeff * dlam
    g["w_out"] = top.T @ dO
    g["b_out"] = np.array(dO.sum())
    dH = [np.zeros_like(h) for h in H]
    if cfg.interpolation == Interp.INPUT_EMBEDDING.value:
        dA = np.outer(dO, model.params["w_out"])
        for l in range(cfg.L - 1, -1, -1):
            dZ = dA * (1.0 - A[l] ** 2)
            below = A[l - 1] if l > 0 else X
            g[f"Wx{l}"] += dZ.T @ below
            g[f"Wh{l}"] += dZ.T @ H[l][s, J]
            g[f"b{l}"] += dZ.sum(axis=0)
            np.add.at(dH[l], (s, J), dZ @ model.Wh(l))
            dA = dZ @ model.Wx(l)
    else:
        np.add.at(dH[-1], (s, J), np.outer(dO, model.params["w_out"]))
        if cfg.interpolation in (Interp.NAIVE.value, Interp.LINEAR_IN_TIME.value):
            g["alpha_naive"] = np.array(float(dO @ X[:, 1]))
    # backprop through the event grid
    for j in range(batch.nmax, 0, -1):
        for l in range(cfg.L - 1, -1, -1):
            h = H[l][:, j]
            dz = dH[l][:, j] * (1.0 - h * h)
            below = H[l - 1][:, j] if l > 0 else batch.Xg[:, j - 1]
            g[f"Wx{l}"] += dz.T @ below
            g[f"Wh{l}"] += dz.T @ H[l][:, j - 1]
            g[f"b{l}"] += dz.sum(axis=0)
            dH[l][:, j - 1] += dz @ model.Wh(l)
            if l > 0:
                dH[l - 1][:, j] += dz @ model.Wx(l)
    return g


def pairwise_sum(items: list):
    """Tree reduction of a list of arrays or dicts of arrays."""
    if not items:
        raise ValueError("nothing to sum")
    items = list(items)
    while len(items) > 1:
        nxt = []
        for i in range(0, len(items) - 1, 2):
            a, b = items[i], items[i + 1]
            nxt.append({k: a[k] + b[k] for k in a} if isinstance(a, dict) else a + b)
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def batch_loss_grad(model: RnnTppModel, batch: Batch):
    """(sum of per-sequence NLLs, gradient of that sum)."""
    losses, grads = [], []
    for start in range(0, batch.B, BLOCK):
        sub = batch.subset(np.arange(start, min(start + BLOCK, batch.B)))
        H, A, top, lam, dlam = _forward(model, sub)
        contrib = np.where(sub.q_node, sub.q_w * lam, -np.log(lam))
        losses.append(np.array(contrib.sum()))
        grads.append(_backward(model, sub, H, A, top, lam, dlam))
    return float(pairwise_sum(losses)), pairwise_sum(grads)


def grad_nll(model: RnnTppModel, seq: EventSequence, quad: QuadConfig | None = None):
    """Exact gradient of the NLL with quadrature nodes held fixed.

    Returns ``(loss, grads)`` where ``grads`` mirrors ``model.params``.
    """
    quad = quad or QuadConfig()
    batch = Batch([seq], model.config.input_dim, quad, model)
    H, A, top, lam, dlam = _forward(model, batch)
    contrib = np.where(batch.q_node, batch.q_w * lam, -np.log(lam))
    return float(contrib.sum()), _backward(model, batch, H, A, top, lam, dlam)


def nll_fixed(model: RnnTppModel, seq: EventSequence, nodes_from: RnnTppModel, quad: QuadConfig) -> float:
    """NLL of ``model`` on the discretization chosen at ``nodes_from``."""
    batch = Batch([seq], model.config.input_dim, quad, nodes_from)
    return float(batch_losses(model, batch)[0])


# ---------------------------------------------------------------- projection

def project(model: RnnTppModel, B_m: float) -> RnnTppModel:
    """Rescale every matrix with spectral norm above B_m (and every bias
    vector with Euclidean norm above B_m) onto the ball."""
    if B_m <= 0:
        raise ConfigError("projection bound must be positive")
    out = {}
    for name, val in model.params.items():
        if name == "alpha_naive":
            out[name] = val.copy()
            continue
        nrm = spectral_norm(val) if val.ndim == 2 else float(np.linalg.norm(val))
        out[name] = val * (B_m / nrm) if nrm > B_m else val.copy()
    return model.with_params(out)


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"          # gd | momentum | adam
    lr: float = 1e-2
    schedule: str = "cosine"         # cosine | constant
    epochs: int = 100
    batch_size: int | None = None    # None: full batch
    B_m: float | None = None
    seed: int = 0
    quad_tol: float = 1e-9
    quad_panels: int | None = 2      # fixed GL panels per interval; None: adaptive
    patience: int | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    link: str | None = "softplus-clamp"
    free: tuple | None = None        # names of trainable parameters (None: all)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("step size must be positive")
        if self.B_m is not None and self.B_m <= 0:
            raise ConfigError("B_m must be positive when projection is enabled")
        if self.optimizer not in ("gd", "momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    @property
    def quad(self) -> QuadConfig:
        return QuadConfig(tol=self.quad_tol, fixed_panels=self.quad_panels)


@dataclass
class TraceRow:
    epoch: int
    mean_train_nll: float
    mean_val_nll: float
    param_norm: float


def write_trace(path, trace: list[TraceRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_train_nll", "mean_val_nll", "param_norm"])
        for r in trace:
            w.writerow([r.epoch, repr(r.mean_train_nll), repr(r.mean_val_nll), repr(r.param_norm)])


def _mean_nll(model, batch) -> float:
    if batch is None or batch.B == 0:
        return float("nan")
    return float(pairwise_sum(list(batch_losses(model, batch)))) / batch.B


def fit_erm(init: RnnTppModel, train: Sequence[EventSequence], cfg: TrainConfig,
            val: Sequence[EventSequence] | None = None):
    """Projected first-order minimization of the mean training NLL.

    Returns ``(model, trace)``; the model is the best iterate by validation
    NLL (training NLL when no validation set is given).
    """
    if not train:
        raise ConfigError("training set is empty")
    model = init.copy()
    if cfg.link is not None and model.config.link != cfg.link:
        model = RnnTppModel(replace(model.config, link=cfg.link), model.params, dict(model.meta))
    if cfg.epochs == 0:
        return init.copy(), [TraceRow(0, _mean_nll(init, Batch(train, init.config.input_dim, cfg.quad, init)),
                                      _mean_nll(init, Batch(val, init.config.input_dim, cfg.quad, init)) if val else float("nan"),
                                      param_norm(init))]
    if cfg.B_m is not None:
        model = project(model, cfg.B_m)
    dim = model.config.input_dim
    tb = Batch(train, dim, cfg.quad, model)
    vb = Batch(val, dim, cfg.quad, model) if val else None
    free = set(cfg.free) if cfg.free is not None else set(model.params)
    n = tb.B
    bs = n if cfg.batch_size is None else max(1, min(cfg.batch_size, n))
    steps_per_epoch = math.ceil(n / bs)
    total = cfg.epochs * steps_per_epoch
    rng = stream(cfg.seed, 7919)
    state = {k: [np.zeros_like(v), np.zeros_like(v)] for k, v in model.params.items()}

    def score(m):
        tr = _mean_nll(m, tb)
        va = _mean_nll(m, vb) if vb is not None else float("nan")
        return tr, va

    tr, va = score(model)
    trace = [TraceRow(0, tr, va, param_norm(model))]
    best = model.copy()
    best_key = va if vb is not None else tr
    since_best = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            idx = np.sort(order[start: start + bs])
            sub = tb if bs == n else tb.subset(idx)
            loss, grads = batch_loss_grad(model, sub)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            lr = cfg.lr if cfg.schedule == "constant" else cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total))
            step += 1
            newp = {}
            for k, v in model.params.items():
                if k not in free:
                    newp[k] = v
                    continue
                gk = grads[k] / sub.B
                if not np.all(np.isfinite(gk)):
                    raise TrainingError(f"non-finite gradient for {k} at epoch {epoch}")
                m1, m2 = state[k]
                if cfg.optimizer == "gd":
                    upd = gk
                elif cfg.optimizer == "momentum":
                    m1 = cfg.momentum * m1 + gk
                    upd = m1
                else:
                    m1 = cfg.beta1 * m1 + (1 - cfg.beta1) * gk
                    m2 = cfg.beta2 * m2 + (1 - cfg.beta2) * gk * gk
                    mh = m1 / (1 - cfg.beta1 ** step)
                    vh = m2 / (1 - cfg.beta2 ** step)
                    upd = mh / (np.sqrt(vh) + cfg.eps)
                state[k] = [m1, m2]
                newp[k] = v - lr * upd
            model = model.with_params(newp)
            if cfg.B_m is not None:
                model = project(model, cfg.B_m)
        tr, va = score(model)
        if not math.isfinite(tr):
            raise TrainingError(f"training NLL became non-finite at epoch {epoch}")
        trace.append(TraceRow(epoch, tr, va, param_norm(model)))
        key = va if vb is not None else tr
        if key < best_key:
            best_key, best, since_best = key, model.copy(), 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                break
    return best, trace


# --------------------------------------------------------------- init schemes

def init_params(cfg: RnnConfig, scheme: str = "small-uniform", seed: int = 0,
                warm: RnnTppModel | None = None) -> RnnTppModel:
    if scheme == "small-uniform":
        rng = stream(seed, 104729)
        params = {k: rng.uniform(-0.1, 0.1, size=s) for k, s in cfg.shapes().items()}
        params["alpha_naive"] = np.array(rng.uniform(-0.1, 0.1)) if cfg.interpolation in (
            Interp.NAIVE.value, Interp.LINEAR_IN_TIME.value) else np.zeros(())
        return RnnTppModel(cfg, params)
    if scheme == "constructive-warm-start":
        if warm is None:
            raise ConfigError("warm start needs a constructed model")
        wc = warm.config
        if wc.widths != cfg.widths or wc.input_dim != cfg.input_dim:
            raise ConfigError(f"warm-start shape mismatch: built {wc.widths}/{wc.input_dim}, "
                              f"requested {cfg.widths}/{cfg.input_dim}")
        return RnnTppModel(cfg, {k: v.copy() for k, v in warm.params.items()}, dict(warm.meta))
    raise ConfigError(f"unknown init scheme {scheme!r}")
