"""Numeric evaluators for the Lipschitz, covering-number and stochastic-error
bounds of the RNN intensity class.

Symbol table (code name -> meaning):

=============  =====================================================
``gamma``      rho_sigma * B_x
``beta_lip``   rho_sigma * B_h  (not the Hawkes decay rate)
``B_m``        max(B_b, B_h, B_x)
``B_in``       bound on the input embedding norm, sqrt(2) * T by default
``s0``         truncation level for the event count
=============  =====================================================

Quantities that can overflow (``M(s)``, ``C(N0)``) are carried as logs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import TailBound
from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class BoundConfig:
    L: int
    D: int
    B_x: float
    B_h: float
    B_b: float
    T: float = 1.0
    l_f: float = 1.0
    u_f: float = 2.0
    rho_sigma: float = 1.0
    rho_f: float = 1.0
    B_sigma: float = 1.0
    B_in: float | None = None

    def __post_init__(self):
        if self.L < 1 or self.D < 1:
            raise ConfigError("L and D must be positive")
        for name in ("B_x", "B_h", "B_b", "T", "l_f", "u_f", "rho_sigma", "rho_f", "B_sigma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.B_in is None:
            object.__setattr__(self, "B_in", math.sqrt(2.0) * self.T)

    @property
    def B_m(self) -> float:
        return max(self.B_b, self.B_h, self.B_x)

    @property
    def gamma(self) -> float:
        return self.rho_sigma * self.B_x

    @property
    def beta_lip(self) -> float:
        return self.rho_sigma * self.B_h

    def to_doc(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------- S_i^l

def log_s_poly(i: int, l: int, beta_lip: float) -> float:
    """log S_i^l; -inf for i = -1."""
    if i < -1 or l < 0:
        raise DomainError("need i >= -1 and l >= 0")
    if i == -1:
        return -math.inf
    if beta_lip == 0.0:
        return 0.0
    lb = math.log(beta_lip)
    terms = [math.lgamma(j + l + 1) - math.lgamma(l + 1) - math.lgamma(j + 1) + j * lb for j in range(i + 1)]
    top = max(terms)
    return top + math.log(math.fsum(math.exp(x - top) for x in terms))


def s_poly(i: int, l: int, beta_lip: float) -> float:
    """S_i^l = sum_{j=0}^{i} C(j+l, l) beta^j, with S_{-1}^l = 0."""
    if i < -1 or l < 0:
        raise DomainError("need i >= -1 and l >= 0")
    if i == -1:
        return 0.0
    try:
        terms = [math.comb(j + l, l) * beta_lip**j for j in range(i + 1)]
        if all(math.isfinite(t) and t < 1e300 for t in terms):
            return math.fsum(terms)
    except OverflowError:
        pass
    lg = log_s_poly(i, l, beta_lip)
    return math.exp(lg) if lg < 709.0 else math.inf


# ------------------------------------------------------------------- Lemma 4

@dataclass
class Deltas:
    """Per-layer parameter distances, index ``l - 1`` for layer ``l``.

    ``db`` and ``dx`` have L+1 entries (the last is the output layer);
    ``dh`` has L entries.
    """

    db: np.ndarray
    dx: np.ndarray
    dh: np.ndarray

    @classmethod
    def zeros(cls, L: int) -> "Deltas":
        return cls(np.zeros(L + 1), np.zeros(L + 1), np.zeros(L))


def lipschitz_bound(cfg: BoundConfig, i: int, d: Deltas) -> float:
    """Upper bound on |lambda_1(t) - lambda_2(t)| for t in (t_i, t_{i+1}]."""
    L = cfg.L
    g, bl = cfg.gamma, cfg.beta_lip
    bsd = cfg.B_sigma * math.sqrt(cfg.D)
    db = lambda l: float(d.db[l - 1])
    dx = lambda l: float(d.dx[l - 1])
    dh = lambda l: float(d.dh[l - 1])
    inner = 0.0
    for l in range(L):
        inner += g**l * s_poly(i, l, bl) * db(L - l)
    for l in range(L - 1):
        inner += bsd * g**l * s_poly(i, l, bl) * dx(L - l)
    inner += cfg.B_in * g ** (L - 1) * s_poly(i, L - 1, bl) * dx(1)
    for l in range(L):
        inner += bsd * g**l * s_poly(i - 1, l, bl) * dh(L - l)
    return cfg.rho_f * g * inner + cfg.rho_f * db(L + 1) + cfg.rho_f * bsd * dx(L + 1)


# ------------------------------------------------------------------- Lemma 5

def _log_geom(beta: float, n: int) -> float:
    """log((beta^n - 1)/(beta - 1)), the limit log(n) at beta = 1."""
    if beta == 1.0:
        return math.log(n)
    lb = math.log(beta)
    x = n * lb
    if x > 30.0:
        return x + math.log1p(-math.exp(-x)) - math.log(beta - 1.0)
    return math.log(math.expm1(x) / (beta - 1.0))


def _log1p_exp(x: float) -> float:
    return x + math.log1p(math.exp(-x)) if x > 30.0 else math.log1p(math.exp(x))


def log_C(cfg: BoundConfig, N0: int) -> float:
    """log C(N0)."""
    bsd = cfg.B_sigma * math.sqrt(cfg.D)
    return (math.log(cfg.rho_f) + math.log(max(bsd, cfg.B_in, 1.0))
            + max(cfg.L * math.log(cfg.gamma), 0.0)
            + (cfg.L - 1) * math.log(N0 + 1) + _log_geom(cfg.beta_lip, N0 + 1))


def covering_log(cfg: BoundConfig, N0: int, eps: float) -> float:
    """log of the covering-number bound at scale eps under d_{N0}."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    if N0 < 0:
        raise DomainError("N0 must be >= 0")
    k = 3 * cfg.L + 2
    log_ratio = log_C(cfg, N0) + math.log(k * cfg.B_m * math.sqrt(cfg.D)) - math.log(eps)
    return cfg.D**2 * k * _log1p_exp(log_ratio)


# ---------------------------------------------------------------- Theorem 3

def log_M(cfg: BoundConfig, s: int) -> float:
    return math.log(cfg.B_m * math.sqrt(cfg.D)) + log_C(cfg, s)


def truncation_level(tail: TailBound, n: int, delta: float, rule: str = "standard") -> int:
    """s0 from the tail constants.

    ``standard``: ceil((log(2 a_N n / delta) - 1) / c_N), which only guarantees
    n a_N exp(-c_N s0) <= e * delta / 2.  ``strict``: ceil(log(2 a_N n / delta) / c_N),
    which guarantees the delta / 2 level.
    """
    base = math.log(2.0 * tail.a_N * n / delta)
    if rule == "standard":
        s0 = math.ceil((base - 1.0) / tail.c_N)
    elif rule == "strict":
        s0 = math.ceil(base / tail.c_N)
    else:
        raise ConfigError(f"unknown truncation rule {rule!r}")
    return max(int(s0), 0)


@dataclass
class BoundReport:
    s0: int
    log_M: float
    M: float
    covering_log: float
    value: float
    terms: dict
    tail: dict
    n: int
    delta: float
    provenance: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return asdict(self)


def stochastic_error_bound(cfg: BoundConfig, tail: TailBound, n: int, delta: float,
                           s0: int | None = None, rule: str = "standard") -> BoundReport:
    """Uniform deviation bound sup |X_theta| holding with probability 1 - delta."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if not (0.0 < delta < 1.0):
        raise DomainError("delta must lie in (0, 1)")
    injected = s0 is not None
    if s0 is None:
        s0 = truncation_level(tail, n, delta, rule)
    lm = log_M(cfg, s0)
    k = 3 * cfg.L + 2
    t_conf = math.sqrt(math.log(4.0 / delta))
    t_cover = cfg.D * math.sqrt(k) * (math.sqrt(_log1p_exp(lm)) + 1.0)
    t_tail = 1.0 / (1.0 - math.exp(-tail.c_N)) ** 2
    pref = 192.0 / math.sqrt(n) * (cfg.T + 1.0 / cfg.l_f) * (s0 + 1) * cfg.u_f
    value = pref * (t_conf + t_cover + t_tail)
    return BoundReport(
        s0=s0, log_M=lm, M=math.exp(lm) if lm < 709 else math.inf,
        covering_log=covering_log(cfg, s0, 1.0 / math.sqrt(n)),
        value=value,
        terms={"prefactor": pref, "confidence": t_conf, "covering": t_cover, "tail": t_tail},
        tail={"a_N": tail.a_N, "c_N": tail.c_N, "eta": tail.eta,
              "tail_mass": n * tail.a_N * math.exp(-tail.c_N * s0)},
        n=n, delta=delta,
        provenance={
            "s0": "injected" if injected else f"truncation rule '{rule}'",
            "M": "rho_f B_m sqrt(D) (B_sigma sqrt(D) v B_in v 1)(gamma^L v 1)(s0+1)^(L-1) geom(beta_lip, s0+1)",
            "covering_log": "evaluated at N0 = s0, eps = 1/sqrt(n)",
        })


def excess_risk_rate(case: str, s: float = 2, k: float = 3, n: float | None = None):
    """Rate exponent (and n**exponent when n is given) for each model family."""
    if case in ("poisson", "vanilla"):
        e = -s / (2.0 * (s + 1.0))
    elif case == "general":
        if k < 2:
            raise DomainError("general case needs k >= 2")
        e = -0.5 * min(s / (s + 1.0), (k - 1.0) / (k + 4.0))
    elif case == "nonlinear":
        e = -0.25
    else:
        raise ConfigError(f"unknown case {case!r}")
    return e if n is None else (e, float(n) ** e)
