"""Named catalogue of background rates, excitation kernels and link functions.

Every entry is a small frozen dataclass so model specs stay JSON-friendly and
carry their regularity metadata (smoothness order, value bounds).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------- backgrounds

@dataclass(frozen=True)
class Constant:
    c: float
    s: int = 2
    name = "constant"

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.c)

    def deriv(self, t, order: int):
        if order == 0:
            return self(t)
        return np.zeros_like(np.asarray(t, dtype=float))

    def integral(self, a, b):
        return self.c * (np.asarray(b, dtype=float) - a)

    def bounds(self, T: float):
        return self.c, self.c


@dataclass(frozen=True)
class Affine:
    a: float
    b: float
    s: int = 2
    name = "affine"

    def __call__(self, t):
        return self.a + self.b * np.asarray(t, dtype=float)

    def deriv(self, t, order: int):
        t = np.asarray(t, dtype=float)
        if order == 0:
            return self(t)
        if order == 1:
            return np.full_like(t, self.b)
        return np.zeros_like(t)

    def integral(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return self.a * (b - a) + 0.5 * self.b * (b * b - a * a)

    def bounds(self, T: float):
        ends = (self.a, self.a + self.b * T)
        return min(ends), max(ends)


@dataclass(frozen=True)
class Sinusoid:
    base: float
    amp: float
    period: float
    phase: float = 0.0
    s: int = 2
    name = "sinusoid"

    def _w(self):
        return TWO_PI / self.period

    def __call__(self, t):
        return self.base + self.amp * np.sin(self._w() * np.asarray(t, dtype=float) + self.phase)

    def deriv(self, t, order: int):
        t = np.asarray(t, dtype=float)
        w = self._w()
        d = self.amp * w**order * np.sin(w * t + self.phase + 0.5 * order * math.pi)
        return d + (self.base if order == 0 else 0.0)

    def integral(self, a, b):
        w = self._w()
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return self.base * (b - a) + self.amp / w * (np.cos(w * a + self.phase) - np.cos(w * b + self.phase))

    def bounds(self, T: float):
        return self.base - abs(self.amp), self.base + abs(self.amp)


@dataclass(frozen=True)
class Bump:
    """Raised-cosine bump ``base + height * (1 + cos(pi (t-center)/width)) / 2``."""

    base: float
    height: float
    center: float
    width: float
    s: int = 2
    name = "bump"

    def _u(self, t):
        return (np.asarray(t, dtype=float) - self.center) / self.width

    def __call__(self, t):
        u = self._u(t)
        inside = np.abs(u) < 1.0
        return self.base + self.height * np.where(inside, 0.5 * (1.0 + np.cos(math.pi * u)), 0.0)

    def deriv(self, t, order: int):
        if order == 0:
            return self(t)
        u = self._u(t)
        inside = np.abs(u) < 1.0
        k = math.pi / self.width
        d = 0.5 * self.height * k**order * np.cos(math.pi * u + 0.5 * order * math.pi)
        return np.where(inside, d, 0.0)

    def integral(self, a, b):
        def prim(t):
            u = np.clip(self._u(t), -1.0, 1.0)
            return 0.5 * self.height * self.width * (u + np.sin(math.pi * u) / math.pi)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return self.base * (b - a) + prim(b) - prim(a)

    def bounds(self, T: float):
        lo, hi = sorted((self.base, self.base + self.height))
        return lo, hi


@dataclass(frozen=True)
class ThreePiece:
    """Continuous piecewise rate: T on [0, T/3], 9 t^2 / T on (T/3, 2T/3), 4T on [2T/3, T]."""

    T: float
    s: int = 1
    name = "three_piece"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        T = self.T
        return np.where(t <= T / 3.0, T, np.where(t < 2.0 * T / 3.0, 9.0 / T * t * t, 4.0 * T))

    def deriv(self, t, order: int):
        if order == 0:
            return self(t)
        t = np.asarray(t, dtype=float)
        mid = (t > self.T / 3.0) & (t < 2.0 * self.T / 3.0)
        val = {1: 18.0 / self.T * t, 2: np.full_like(t, 18.0 / self.T)}.get(order, np.zeros_like(t))
        return np.where(mid, val, 0.0)

    def integral(self, a, b):
        T = self.T

        def prim(t):
            t = np.clip(np.asarray(t, dtype=float), 0.0, T)
            p1 = T * np.minimum(t, T / 3.0)
            m = np.clip(t, T / 3.0, 2.0 * T / 3.0)
            p2 = 3.0 / T * (m**3 - (T / 3.0) ** 3)
            p3 = 4.0 * T * np.maximum(t - 2.0 * T / 3.0, 0.0)
            return p1 + p2 + p3
        return prim(b) - prim(a)

    def bounds(self, T: float):
        return self.T, 4.0 * self.T

    def breakpoints(self, T: float):
        return [self.T / 3.0, 2.0 * self.T / 3.0]


# -------------------------------------------------------------------- kernels

@dataclass(frozen=True)
class Exponential:
    alpha: float
    beta: float
    k: int = 3
    name = "exponential"

    def __call__(self, t):
        return self.alpha * np.exp(-self.beta * np.asarray(t, dtype=float))

    def deriv(self, t, order: int):
        return (-self.beta) ** order * self(t)

    def integral(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return self.alpha / self.beta * (np.exp(-self.beta * a) - np.exp(-self.beta * b))

    def sup(self, T: float) -> float:
        return max(self.alpha, 0.0)


@dataclass(frozen=True)
class ExpMixtureKernel:
    weights: tuple
    rates: tuple
    k: int = 3
    name = "exp_mixture"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.weights) != len(self.rates) or not self.weights:
            raise ConfigError("exp_mixture needs matching, nonempty weights and rates")

    def __call__(self, t):
        return self.deriv(t, 0)

    def deriv(self, t, order: int):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for w, r in zip(self.weights, self.rates):
            out = out + w * (-r) ** order * np.exp(-r * t)
        return out

    def integral(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return sum(w / r * (np.exp(-r * a) - np.exp(-r * b)) for w, r in zip(self.weights, self.rates))

    def sup(self, T: float) -> float:
        grid = np.linspace(0.0, T, 4097)
        return float(np.max(self(grid)))


@dataclass(frozen=True)
class PeriodicKernel:
    """``(mass/period) * (1 - cos(2 pi t / period))``; all derivatives match at 0 and period."""

    mass: float
    period: float
    k: int = 3
    name = "periodic"

    def _w(self):
        return TWO_PI / self.period

    def __call__(self, t):
        return self.deriv(t, 0)

    def deriv(self, t, order: int):
        t = np.asarray(t, dtype=float)
        w = self._w()
        c = self.mass / self.period
        d = -c * w**order * np.cos(w * t + 0.5 * order * math.pi)
        return d + (c if order == 0 else 0.0)

    def integral(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        w = self._w()
        return self.mass / self.period * ((b - a) - (np.sin(w * b) - np.sin(w * a)) / w)

    def sup(self, T: float) -> float:
        return 2.0 * self.mass / self.period


# ---------------------------------------------------------------------- links

@dataclass(frozen=True)
class SigmoidLink:
    lo: float
    hi: float
    shift: float = 0.0
    scale: float = 1.0
    name = "sigmoid"

    def __call__(self, x):
        z = (np.asarray(x, dtype=float) - self.shift) / self.scale
        return self.lo + (self.hi - self.lo) * 0.5 * (1.0 + np.tanh(0.5 * z))

    @property
    def bounds(self):
        return self.lo, self.hi

    @property
    def lipschitz(self):
        return (self.hi - self.lo) / (4.0 * self.scale)


@dataclass(frozen=True)
class ClipLink:
    lo: float
    hi: float
    name = "clip"

    def __call__(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    @property
    def bounds(self):
        return self.lo, self.hi

    @property
    def lipschitz(self):
        return 1.0


@dataclass(frozen=True)
class ConstantLink:
    c: float
    name = "constant"

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.c)

    @property
    def bounds(self):
        return self.c, self.c

    @property
    def lipschitz(self):
        return 0.0


BACKGROUNDS = {cls.name: cls for cls in (Constant, Affine, Sinusoid, Bump, ThreePiece)}
KERNELS = {cls.name: cls for cls in (Exponential, ExpMixtureKernel, PeriodicKernel)}
LINKS = {cls.name: cls for cls in (SigmoidLink, ClipLink, ConstantLink)}


def _build(table, kind, doc):
    if isinstance(doc, (Constant, Affine, Sinusoid, Bump, ThreePiece, Exponential, ExpMixtureKernel,
                        PeriodicKernel, SigmoidLink, ClipLink, ConstantLink)):
        return doc
    try:
        name = doc["name"]
        params = dict(doc.get("params", {}))
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"{kind} spec must be an object with a 'name'") from exc
    if name not in table:
        raise ConfigError(f"unknown {kind} {name!r}; known: {sorted(table)}")
    try:
        return table[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {kind} {name!r}: {exc}") from exc


def background(doc):
    return _build(BACKGROUNDS, "background", doc)


def kernel(doc):
    return _build(KERNELS, "kernel", doc)


def link(doc):
    return _build(LINKS, "link", doc)


def to_doc(fn) -> dict:
    params = asdict(fn)
    for key, val in params.items():
        if isinstance(val, tuple):
            params[key] = list(val)
    return {"name": fn.name, "params": params}


def kernel_c0(mu, T: float, k: int | None = None, grid: int = 8193) -> float:
    """max_{j<=k} sup_[0,T] |mu^(j)| on a dense grid."""
    k = mu.k if k is None else k
    t = np.linspace(0.0, T, grid)
    return float(max(np.max(np.abs(mu.deriv(t, j))) for j in range(k + 1)))
