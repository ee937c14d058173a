"""Continuous-time RNN intensity model.

Grid recursion over events, hidden-state interpolation between events, and a
clamped scalar output.  Query evaluation is vectorized: every query time is
mapped to the index ``j`` of its interval ``(t_j, t_{j+1}]`` and recomputes the
layer stack from the embedding ``x(t)`` and the frozen grid states ``h_j``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from enum import Enum

import numpy as np

from .core import EventSequence
from .errors import ConfigError, DomainError
from .quadrature import QuadConfig, discretize

FORMAT_VERSION = 1


class Interp(str, Enum):
    INPUT_EMBEDDING = "InputEmbedding"
    CONSTANT_HOLD = "ConstantHold"
    LINEAR_IN_TIME = "LinearInTime"
    NAIVE = "NaiveSingleLayer"


class Link(str, Enum):
    CLAMP = "identity-clamp"
    SOFTPLUS = "softplus-clamp"


@dataclass(frozen=True)
class RnnConfig:
    widths: tuple
    input_dim: int = 2
    l_f: float = 1e-3
    u_f: float = 10.0
    link: str = Link.CLAMP.value
    interpolation: str = Interp.INPUT_EMBEDDING.value

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ConfigError("need at least one layer and positive widths")
        if self.input_dim not in (2, 3):
            raise ConfigError("input_dim must be 2 or 3")
        if not (0.0 < self.l_f < self.u_f):
            raise ConfigError("clamp must satisfy 0 < l_f < u_f")
        try:
            Link(self.link)
            interp = Interp(self.interpolation)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if interp is Interp.NAIVE and len(self.widths) != 1:
            raise ConfigError("NaiveSingleLayer requires exactly one layer")

    @property
    def L(self) -> int:
        return len(self.widths)

    @property
    def D(self) -> int:
        return max(self.widths)

    def shapes(self) -> dict:
        dims = (self.input_dim,) + self.widths
        out = {}
        for l in range(self.L):
            out[f"Wx{l}"] = (dims[l + 1], dims[l])
            out[f"Wh{l}"] = (dims[l + 1], dims[l + 1])
            out[f"b{l}"] = (dims[l + 1],)
        out["w_out"] = (dims[-1],)
        out["b_out"] = ()
        out["alpha_naive"] = ()
        return out

    def to_doc(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass
class RnnTppModel:
    """Parameters are held in a flat name -> array dict (see ``RnnConfig.shapes``)."""

    config: RnnConfig
    params: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.config.shapes()
        fixed = {}
        for name, shape in shapes.items():
            if name not in self.params:
                if name == "alpha_naive":
                    fixed[name] = np.zeros(())
                    continue
                raise ConfigError(f"missing parameter {name}")
            arr = np.array(self.params[name], dtype=float)
            if arr.shape != shape:
                raise ConfigError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            fixed[name] = arr
        extra = set(self.params) - set(shapes)
        if extra:
            raise ConfigError(f"unknown parameters {sorted(extra)}")
        self.params = fixed

    # convenient views
    def Wx(self, l): return self.params[f"Wx{l}"]
    def Wh(self, l): return self.params[f"Wh{l}"]
    def b(self, l): return self.params[f"b{l}"]

    def copy(self) -> "RnnTppModel":
        return RnnTppModel(self.config, {k: v.copy() for k, v in self.params.items()}, dict(self.meta))

    def with_params(self, params: dict) -> "RnnTppModel":
        return RnnTppModel(self.config, params, dict(self.meta))


def zeros(config: RnnConfig) -> RnnTppModel:
    return RnnTppModel(config, {k: np.zeros(s) for k, s in config.shapes().items()})


# ------------------------------------------------------------------ embedding

def embed(t, seq: EventSequence, channels: int = 2) -> np.ndarray:
    """x(t;S) = (t, t - t_j[, N(t-)]) with t_j the last event strictly before t (t_0 = 0)."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    j = seq.prefix_count(t_arr)
    last = np.where(j > 0, seq.times[np.maximum(j - 1, 0)] if len(seq) else 0.0, 0.0)
    cols = [t_arr, t_arr - last]
    if channels == 3:
        cols.append(j.astype(float))
    x = np.stack(cols, axis=-1)
    return x[0] if np.ndim(t) == 0 else x


def _grid_inputs(seq: EventSequence, channels: int) -> np.ndarray:
    """Embedding at each event t_j, using events strictly before t_j."""
    t = seq.times
    prev = np.concatenate([[0.0], t[:-1]]) if t.size else np.empty(0)
    cols = [t, t - prev]
    if channels == 3:
        cols.append(np.arange(t.size, dtype=float))
    return np.stack(cols, axis=-1) if t.size else np.empty((0, channels))


# ---------------------------------------------------------------- link funcs

def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def output_link(config: RnnConfig, o):
    """Returns (lambda, dlambda/do) with the boundary-inclusive clamp subgradient."""
    o = np.asarray(o, dtype=float)
    if config.link == Link.SOFTPLUS.value:
        raw = softplus(o)
        slope = sigmoid(o)
    else:
        raw = o
        slope = np.ones_like(o)
    inside = (raw >= config.l_f) & (raw <= config.u_f)
    lam = np.clip(raw, config.l_f, config.u_f)
    return lam, np.where(inside, slope, 0.0)


# ----------------------------------------------------------------- recursion

def hidden_grid(model: RnnTppModel, seq: EventSequence) -> list[np.ndarray]:
    """Per-layer arrays H[l] of shape (N_e + 1, d_l); row 0 is h_0 = 0."""
    cfg = model.config
    X = _grid_inputs(seq, cfg.input_dim)
    n = len(seq)
    H = [np.zeros((n + 1, d)) for d in cfg.widths]
    for j in range(1, n + 1):
        below = X[j - 1]
        for l in range(cfg.L):
            z = model.Wx(l) @ below + model.Wh(l) @ H[l][j - 1] + model.b(l)
            H[l][j] = np.tanh(z)
            below = H[l][j]
    return H


def _check_times(seq: EventSequence, t: np.ndarray):
    if np.any(t <= 0.0) or np.any(t > seq.horizon):
        raise DomainError(f"query time must lie in (0, {seq.horizon}]")


def query_forward(model: RnnTppModel, seq: EventSequence, t: np.ndarray, H=None):
    """Pre-link output o(t) plus cached activations for backprop.

    Returns ``(o, cache)`` where cache has the interval index ``J``, the
    embeddings ``X`` and per-layer activations ``A`` (InputEmbedding mode).
    """
    cfg = model.config
    if H is None:
        H = hidden_grid(model, seq)
    t = np.asarray(t, dtype=float)
    J = seq.prefix_count(t)
    X = embed(t, seq, cfg.input_dim).reshape(t.size, cfg.input_dim)
    mode = cfg.interpolation
    A = []
    if mode == Interp.INPUT_EMBEDDING.value:
        below = X
        for l in range(cfg.L):
            z = below @ model.Wx(l).T + H[l][J] @ model.Wh(l).T + model.b(l)
            a = np.tanh(z)
            A.append(a)
            below = a
        o = below @ model.params["w_out"] + model.params["b_out"]
    else:
        top = H[-1][J]
        o = top @ model.params["w_out"] + model.params["b_out"]
        if mode in (Interp.NAIVE.value, Interp.LINEAR_IN_TIME.value):
            o = o + model.params["alpha_naive"] * X[:, 1]
    return o, {"J": J, "X": X, "A": A, "H": H}


def intensity(model: RnnTppModel, seq: EventSequence, t):
    """Clamped intensity at t in (0, T]; vectorized over t."""
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    _check_times(seq, arr)
    o, _ = query_forward(model, seq, arr)
    lam, _ = output_link(model.config, o)
    return float(lam[0]) if np.ndim(t) == 0 else lam


@dataclass(frozen=True)
class ExactIntensity:
    """Wraps a ground-truth model spec so the RNN evaluators can score it."""

    truth: object

    def fn(self, seq: EventSequence):
        return lambda t: np.asarray(self.truth.intensity(seq.times, np.asarray(t, dtype=float)), dtype=float)


def intensity_fn(model, seq: EventSequence):
    """Vectorized closure with the grid states precomputed."""
    if isinstance(model, ExactIntensity):
        return model.fn(seq)
    H = hidden_grid(model, seq)

    def f(t):
        o, _ = query_forward(model, seq, np.asarray(t, dtype=float), H)
        return output_link(model.config, o)[0]
    return f


def quad_nodes(model: RnnTppModel, seq: EventSequence, quad: QuadConfig):
    edges = np.concatenate([[0.0], seq.times, [seq.horizon]])
    return discretize(intensity_fn(model, seq), edges, quad)


def nll_loss(model, seq: EventSequence, quad: QuadConfig | None = None) -> float:
    """-(sum_j log lambda(t_j) - int_0^T lambda)."""
    quad = quad or QuadConfig()
    f = intensity_fn(model, seq)
    edges = np.concatenate([[0.0], seq.times, [seq.horizon]])
    nodes, weights = discretize(f, edges, quad)
    integral = float(np.dot(weights, f(nodes))) if nodes.size else 0.0
    ev = float(np.sum(np.log(f(seq.times)))) if len(seq) else 0.0
    return integral - ev


# ---------------------------------------------------------------------- norms

def spectral_norm(M, rtol: float = 1e-10, max_iter: int = 10000) -> float:
    """Largest singular value by power iteration on M^T M."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0 or not np.any(M):
        return 0.0
    G = M.T @ M
    # deterministic start vector with no special alignment
    v = np.cos(np.arange(1, G.shape[0] + 1, dtype=float))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space; restart on a basis vector
            v = np.zeros_like(v); v[int(np.argmax(np.sum(G * G, axis=0)))] = 1.0
            continue
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= rtol * new:
            lam = new
            break
        lam = new
    # one Rayleigh refinement
    lam = max(lam, float(v @ (G @ v)))
    return math.sqrt(lam)


def param_norm(model: RnnTppModel) -> float:
    cfg = model.config
    vals = []
    for l in range(cfg.L):
        vals += [spectral_norm(model.Wx(l)), spectral_norm(model.Wh(l)), float(np.linalg.norm(model.b(l)))]
    vals += [float(np.linalg.norm(model.params["w_out"])), abs(float(model.params["b_out"]))]
    return max(vals)


# ------------------------------------------------------------------ checkpoints

def to_doc(model: RnnTppModel) -> dict:
    weights = {k: v.tolist() for k, v in model.params.items()}
    return {"format_version": FORMAT_VERSION, "config": model.config.to_doc(),
            "weights": weights, "meta": model.meta}


def from_doc(doc: dict) -> RnnTppModel:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    cfg = RnnConfig(**doc["config"])
    return RnnTppModel(cfg, {k: np.array(v, dtype=float) for k, v in doc["weights"].items()},
                       dict(doc.get("meta", {})))


def dumps(model: RnnTppModel) -> str:
    # json writes floats with repr, the shortest round-trip form
    return json.dumps(to_doc(model), sort_keys=True, indent=1)


def save(model: RnnTppModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(model) + "\n")


def load(path) -> RnnTppModel:
    with open(path, encoding="utf-8") as fh:
        return from_doc(json.load(fh))
