"""Ground-truth point-process models.

Intensities are predictable: an event at ``t_j`` only affects ``lambda(t)``
for ``t > t_j``.  All intensity routines are vectorized over query times.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import catalogue as cat
from .errors import ConfigError, DomainError, EvaluationError
from .quadrature import integrate


# ------------------------------------------------------------------ sequences

class EventSequence:
    """Strictly increasing event times in (0, T]."""

    __slots__ = ("times", "horizon")

    def __init__(self, times: Iterable[float], horizon: float):
        t = np.array(list(times) if not isinstance(times, np.ndarray) else times, dtype=float).ravel()
        T = float(horizon)
        if not math.isfinite(T) or T <= 0.0:
            raise ConfigError(f"horizon must be a positive finite number, got {horizon!r}")
        if t.size:
            if not np.all(np.isfinite(t)):
                raise ConfigError("event times must be finite")
            if t[0] <= 0.0:
                raise ConfigError("event times must be > 0")
            if t[-1] > T:
                raise ConfigError("event times must be <= horizon")
            if np.any(np.diff(t) <= 0.0):
                raise ConfigError("event times must be strictly increasing")
        t.setflags(write=False)
        self.times = t
        self.horizon = T

    def __len__(self) -> int:
        return int(self.times.size)

    def __eq__(self, other) -> bool:
        return (isinstance(other, EventSequence) and self.horizon == other.horizon
                and np.array_equal(self.times, other.times))

    def __repr__(self) -> str:
        return f"EventSequence(n={len(self)}, T={self.horizon})"

    def prefix_count(self, t) -> np.ndarray:
        """Number of events strictly before each t."""
        return np.searchsorted(self.times, np.asarray(t, dtype=float), side="left")

    def to_doc(self) -> dict:
        return {"t": [float(x) for x in self.times], "T": self.horizon}

    @classmethod
    def from_doc(cls, doc) -> "EventSequence":
        try:
            return cls(doc["t"], doc["T"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"sequence record needs keys 't' and 'T': {exc}") from exc


def write_jsonl(path, seqs: Sequence[EventSequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in seqs:
            fh.write(json.dumps(s.to_doc(), separators=(",", ":")) + "\n")


def read_jsonl(path) -> list[EventSequence]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: not JSON ({exc})") from exc
            try:
                out.append(EventSequence.from_doc(doc))
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return out


# ------------------------------------------------------------------------ rng

def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based generator for substream ``index`` of ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------- models

def _exp_states(times: np.ndarray, beta: float) -> np.ndarray:
    """A_j = sum_{i<=j} exp(-beta (t_j - t_i)), i.e. excitation just after t_j."""
    a = np.empty(times.size)
    acc = 0.0
    prev = 0.0
    for j, tj in enumerate(times):
        acc = acc * math.exp(-beta * (tj - prev)) + 1.0
        a[j] = acc
        prev = tj
    return a


def _exp_excitation(times: np.ndarray, beta: float, t) -> np.ndarray:
    """sum_{t_i < t} exp(-beta (t - t_i)) at each query t."""
    t = np.asarray(t, dtype=float)
    if times.size == 0:
        return np.zeros_like(t)
    a = _exp_states(times, beta)
    j = np.searchsorted(times, t, side="left")
    last = np.where(j > 0, times[np.maximum(j - 1, 0)], 0.0)
    amp = np.where(j > 0, a[np.maximum(j - 1, 0)], 0.0)
    return amp * np.exp(-beta * (t - last))


@dataclass(frozen=True)
class HomPoisson:
    rate: float
    kind = "HomPoisson"

    def intensity(self, times, t):
        return np.full_like(np.asarray(t, dtype=float), self.rate)

    def bound_B0(self, T):
        return self.rate

    def bound_B1(self, T):
        return self.rate

    def c_mu(self, T):
        return 0.0

    def majorant(self, T):
        return lambda t, ev: self.rate


@dataclass(frozen=True)
class NonHomPoisson:
    background: object
    kind = "NonHomPoisson"

    def __post_init__(self):
        object.__setattr__(self, "background", cat.background(self.background))

    def intensity(self, times, t):
        return self.background(t)

    def bound_B0(self, T):
        return self.background.bounds(T)[1]

    def bound_B1(self, T):
        return self.background.bounds(T)[0]

    def c_mu(self, T):
        return 0.0

    def majorant(self, T):
        b0 = self.bound_B0(T)
        return lambda t, ev: b0


@dataclass(frozen=True)
class LinearHawkesExp:
    background: object
    alpha: float
    beta: float
    kind = "LinearHawkesExp"

    def __post_init__(self):
        object.__setattr__(self, "background", cat.background(self.background))
        if self.beta <= 0 or self.alpha < 0:
            raise ConfigError("LinearHawkesExp needs alpha >= 0 and beta > 0")

    def intensity(self, times, t):
        return self.background(t) + self.alpha * _exp_excitation(times, self.beta, t)

    def bound_B0(self, T):
        return self.background.bounds(T)[1]

    def bound_B1(self, T):
        return self.background.bounds(T)[0]

    def kernel(self):
        return cat.Exponential(self.alpha, self.beta)

    def c_mu(self, T):
        return self.alpha / self.beta * (1.0 - math.exp(-self.beta * T))


@dataclass(frozen=True)
class LinearHawkesGeneral:
    background: object
    kernel: object
    kind = "LinearHawkesGeneral"

    def __post_init__(self):
        object.__setattr__(self, "background", cat.background(self.background))
        object.__setattr__(self, "kernel", cat.kernel(self.kernel))

    def intensity(self, times, t):
        t = np.asarray(t, dtype=float)
        out = self.background(t)
        if times.size == 0:
            return out
        lag = t[..., None] - times
        contrib = np.where(lag > 0.0, self.kernel(np.where(lag > 0.0, lag, 0.0)), 0.0)
        return out + contrib.sum(axis=-1)

    def bound_B0(self, T):
        return self.background.bounds(T)[1]

    def bound_B1(self, T):
        return self.background.bounds(T)[0]

    def c_mu(self, T):
        return float(self.kernel.integral(0.0, T))


@dataclass(frozen=True)
class NonlinearHawkesExp:
    background: object
    alpha: float
    beta: float
    link: object
    kind = "NonlinearHawkesExp"

    def __post_init__(self):
        object.__setattr__(self, "background", cat.background(self.background))
        object.__setattr__(self, "link", cat.link(self.link))
        if self.beta <= 0 or self.alpha < 0:
            raise ConfigError("NonlinearHawkesExp needs alpha >= 0 and beta > 0")

    def linear_part(self, times, t):
        return self.background(t) + self.alpha * _exp_excitation(times, self.beta, t)

    def intensity(self, times, t):
        return self.link(self.linear_part(times, t))

    def bound_B0(self, T):
        return self.link.bounds[1]

    def bound_B1(self, T):
        return self.link.bounds[0]

    def c_mu(self, T):
        return 0.0


@dataclass(frozen=True)
class SelfCorrecting:
    mu: float
    alpha: float
    link: object
    kind = "SelfCorrecting"

    def __post_init__(self):
        object.__setattr__(self, "link", cat.link(self.link))

    def intensity(self, times, t):
        t = np.asarray(t, dtype=float)
        n = np.searchsorted(times, t, side="left")
        return self.link(self.mu * t - self.alpha * n)

    def bound_B0(self, T):
        return self.link.bounds[1]

    def bound_B1(self, T):
        return self.link.bounds[0]

    def c_mu(self, T):
        return 0.0


MODEL_KINDS = {cls.kind: cls for cls in (HomPoisson, NonHomPoisson, LinearHawkesExp,
                                          LinearHawkesGeneral, NonlinearHawkesExp, SelfCorrecting)}
_FUNC_FIELDS = {"background": cat.to_doc, "kernel": cat.to_doc, "link": cat.to_doc}


def model_to_doc(model) -> dict:
    doc = {"kind": model.kind}
    for name in model.__dataclass_fields__:
        val = getattr(model, name)
        doc[name] = _FUNC_FIELDS[name](val) if name in _FUNC_FIELDS else val
    return doc


def model_from_doc(doc):
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError("model spec must be an object with a 'kind'")
    kind = doc["kind"]
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; known: {sorted(MODEL_KINDS)}")
    fields = {k: v for k, v in doc.items() if k != "kind"}
    try:
        return MODEL_KINDS[kind](**fields)
    except TypeError as exc:
        raise ConfigError(f"bad fields for {kind}: {exc}") from exc


def validate(model, T: float, grid: int = 10001) -> None:
    """Check the regularity assumptions (bounds, subcriticality, link bounds)."""
    ts = np.linspace(0.0, T, grid)
    if hasattr(model, "background") and not isinstance(model, (HomPoisson,)):
        lo, hi = model.background.bounds(T)
        vals = model.background(ts)
        if lo <= 0.0:
            raise ConfigError(f"background lower bound must be positive, got {lo}")
        if np.any(vals < lo - 1e-12) or np.any(vals > hi + 1e-12):
            raise ConfigError("background leaves its declared bounds")
    if isinstance(model, HomPoisson) and model.rate <= 0.0:
        raise ConfigError("rate must be positive")
    if isinstance(model, (LinearHawkesGeneral, LinearHawkesExp)):
        mu = model.kernel if isinstance(model, LinearHawkesGeneral) else model.kernel()
        if np.any(mu(ts) < 0.0):
            raise ConfigError("kernel must be nonnegative")
        closed = float(mu.integral(0.0, T))
        quad = integrate(mu, [0.0, T], tol=1e-10)
        if abs(closed - quad) > 1e-6:
            raise ConfigError(f"kernel mass mismatch: closed {closed} vs quadrature {quad}")
        if closed >= 1.0:
            raise ConfigError(f"kernel mass c_mu={closed} must be < 1 (subcritical)")
    if isinstance(model, (NonlinearHawkesExp, SelfCorrecting)):
        lo, hi = model.link.bounds
        if not (math.isfinite(hi) and lo >= 0.0):
            raise ConfigError("link must be bounded with finite upper bound and nonnegative lower bound")
        xs = np.linspace(-50.0, 50.0, 20001)
        ys = model.link(xs)
        if np.any(ys < lo - 1e-12) or np.any(ys > hi + 1e-12):
            raise ConfigError("link leaves its declared bounds")
        slopes = np.abs(np.diff(ys)) / np.diff(xs)
        if np.any(slopes > model.link.lipschitz * (1 + 1e-9) + 1e-12):
            raise ConfigError("link violates its declared Lipschitz constant")


# ---------------------------------------------------------------- operations

def intensity_at(model, seq: EventSequence, t):
    """Left-continuous conditional intensity at t in (0, T]."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr > seq.horizon):
        raise DomainError(f"query time must lie in (0, {seq.horizon}]")
    out = model.intensity(seq.times, arr)
    return float(out) if np.ndim(out) == 0 else out


def _closed_compensator(model, seq, t: float):
    times = seq.times[seq.times < t]
    if isinstance(model, HomPoisson):
        return model.rate * t
    if isinstance(model, LinearHawkesExp):
        base = float(model.background.integral(0.0, t))
        exc = np.sum(1.0 - np.exp(-model.beta * (t - times)))
        return base + model.alpha / model.beta * float(exc)
    return None


def compensator(model, seq: EventSequence, t: float, tol: float = 1e-9, method: str = "auto") -> float:
    """Lambda(t) = int_0^t lambda*(s) ds."""
    t = float(t)
    if t < 0.0 or t > seq.horizon:
        raise DomainError(f"upper limit must lie in [0, {seq.horizon}]")
    if t == 0.0:
        return 0.0
    if method == "auto":
        val = _closed_compensator(model, seq, t)
        if val is not None:
            return float(val)
    edges = np.concatenate([[0.0], seq.times[seq.times < t], [t]])
    return integrate(lambda s: model.intensity(seq.times, s), edges, tol=tol)


def compensator_at_events(model, seq: EventSequence, tol: float = 1e-9) -> np.ndarray:
    """Lambda(t_1), ..., Lambda(t_N), Lambda(T)."""
    pts = list(seq.times) + [seq.horizon]
    if isinstance(model, (HomPoisson, LinearHawkesExp)):
        return np.array([compensator(model, seq, p) for p in pts])
    edges = np.concatenate([[0.0], seq.times, [seq.horizon]])
    edges = np.unique(edges)
    pieces = [integrate(lambda s: model.intensity(seq.times, s), [a, b], tol=tol / max(len(edges), 1))
              for a, b in zip(edges[:-1], edges[1:])]
    cum = np.cumsum(pieces)
    # edges[1:] are t_1..t_N, T (T may coincide with t_N)
    vals = list(cum[: len(seq)])
    vals.append(cum[-1])
    return np.array(vals)


def loglik(model, seq: EventSequence, tol: float = 1e-9) -> float:
    """sum_j log lambda*(t_j) - Lambda(T)."""
    lam = model.intensity(seq.times, seq.times) if len(seq) else np.empty(0)
    if np.any(~(lam > 0.0)):
        raise EvaluationError("intensity is zero (or invalid) at an event time")
    return float(np.sum(np.log(lam))) - compensator(model, seq, seq.horizon, tol=tol)


# ----------------------------------------------------------------- simulation

def _thin(model, T: float, rng: np.random.Generator) -> EventSequence:
    ev: list[float] = []
    if isinstance(model, HomPoisson):
        t = 0.0
        while True:
            t += rng.exponential(1.0 / model.rate)
            if t > T:
                break
            if t > 0.0:
                ev.append(t)
        return EventSequence(ev, T)

    if isinstance(model, LinearHawkesExp):
        b0 = model.bound_B0(T)
        const_bg = isinstance(model.background, cat.Constant)
        t, exc = 0.0, 0.0   # exc: excitation just after time t
        while True:
            m = b0 + model.alpha * exc
            gap = rng.exponential(1.0 / m)
            t_new = t + gap
            if t_new > T:
                break
            exc_new = exc * math.exp(-model.beta * gap)
            lam = (model.background.c if const_bg else float(model.background(t_new))) + model.alpha * exc_new
            accept = rng.uniform() * m <= lam
            t, exc = t_new, exc_new
            if accept and t > 0.0:
                ev.append(t)
                exc += 1.0
        return EventSequence(ev, T)

    if isinstance(model, NonlinearHawkesExp):
        m = model.bound_B0(T)
        t, exc = 0.0, 0.0
        while True:
            gap = rng.exponential(1.0 / m)
            t += gap
            if t > T:
                break
            exc *= math.exp(-model.beta * gap)
            lam = float(model.link(float(model.background(t)) + model.alpha * exc))
            if rng.uniform() * m <= lam and t > 0.0:
                ev.append(t)
                exc += 1.0
        return EventSequence(ev, T)

    if isinstance(model, LinearHawkesGeneral):
        b0 = model.bound_B0(T)
        mu_max = model.kernel.sup(T)
        t = 0.0
        while True:
            m = b0 + len(ev) * mu_max
            t += rng.exponential(1.0 / m)
            if t > T:
                break
            lam = float(model.background(t)) + float(np.sum(model.kernel(t - np.asarray(ev)))) if ev else float(model.background(t))
            if rng.uniform() * m <= lam and t > 0.0:
                ev.append(t)
        return EventSequence(ev, T)

    # NonHomPoisson and SelfCorrecting: global majorant
    m = model.bound_B0(T)
    if not (math.isfinite(m) and m > 0.0):
        raise ConfigError("no finite positive intensity majorant for this model")
    t = 0.0
    while True:
        t += rng.exponential(1.0 / m)
        if t > T:
            break
        lam = float(model.intensity(np.asarray(ev), np.array([t]))[0])
        if rng.uniform() * m <= lam and t > 0.0:
            ev.append(t)
    return EventSequence(ev, T)


def simulate(model, horizon: float, rng_seed: int, index: int = 0) -> EventSequence:
    """Ogata thinning on [0, horizon]; deterministic in (seed, index)."""
    if horizon <= 0:
        raise DomainError("horizon must be positive")
    if isinstance(model, (NonlinearHawkesExp, SelfCorrecting)):
        hi = model.link.bounds[1]
        if not math.isfinite(hi) or hi <= 0:
            raise ConfigError("link needs a finite positive upper bound for thinning")
    return _thin(model, float(horizon), stream(rng_seed, index))


def simulate_many(model, horizon: float, n: int, seed: int, start: int = 0) -> list[EventSequence]:
    """n sequences, sequence i drawn from substream ``start + i``."""
    return [simulate(model, horizon, seed, start + i) for i in range(n)]


# ------------------------------------------------------------- tail constants

@dataclass(frozen=True)
class TailBound:
    a_N: float
    c_N: float
    eta: float

    def prob_bound(self, s):
        return self.a_N * np.exp(-self.c_N * np.asarray(s, dtype=float))


def tail_constants(model, eta: float, T: float) -> TailBound:
    """Constants with P(N_e >= s) <= a_N exp(-c_N s)."""
    if isinstance(model, SelfCorrecting):
        raise ConfigError("no tail constants are provided for the self-correcting model")
    if isinstance(model, NonlinearHawkesExp):
        b0, c_mu = model.link.bounds[1], 0.0
    else:
        b0, c_mu = model.bound_B0(T), model.c_mu(T)
    return tail_constants_from(b0, c_mu, T, eta)


def tail_constants_from(B0: float, c_mu: float, T: float, eta: float) -> TailBound:
    upper = math.inf if c_mu <= 0.0 else 1.0 / c_mu
    if not (1.0 < eta < upper):
        raise DomainError(f"eta must lie in (1, {upper}), got {eta}")
    if not (0.0 <= c_mu < 1.0):
        raise DomainError("c_mu must lie in [0, 1)")
    log_eta = math.log(eta)
    a_N = 2.0 * math.sqrt(B0 * T) * math.exp(log_eta * eta * B0 * T / 2.0) / (1.0 - c_mu)
    c_N = log_eta * (1.0 - c_mu * eta) / 2.0
    return TailBound(a_N, c_N, eta)
