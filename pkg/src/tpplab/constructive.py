"""Explicit RNN-TPP weights approximating Poisson, Hawkes and nonlinear Hawkes intensities.

Every builder wires fitted shallow tanh blocks into a standard ``RnnTppModel``
and records a certificate: an upper bound on sup_t |lambda_hat(t) - lambda*(t)|
valid on sequences with at most ``s0`` events.

Layer 1 carries recurrent state blocks side by side (block-diagonal
recurrent weights).  Each block realizes a map ``g(S_prev, elapsed)`` through
a fitted net ``V tanh(W (S_prev, elapsed) + b0)``: the readout ``V h`` is the
state, so the recurrent weight is ``W_S V``.  Layer 2 relays every readout
through psi_h(u) = (2/h) tanh(h u / 2), and the output layer takes a fixed
linear combination.

State conventions: the state before the first event is 0; after events
t_1..t_J the exponential state is sum_i exp(-beta (t - t_i)) + 1, the rotation
state is (sum_i sin w (t - t_i), sum_i cos w (t - t_i) + 1) and the count
state is J + 1.  The output subtracts the +1 offsets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import catalogue as cat
from .core import EventSequence, model_to_doc, LinearHawkesExp, LinearHawkesGeneral, \
    NonHomPoisson, NonlinearHawkesExp
from .errors import ConfigError, ConstructionError, NumericError
from .quadrature import integrate
from .rnn import Interp, Link, RnnConfig, RnnTppModel
from .shallow import ShallowTanhNet, box, fit_shallow_tanh, fit_to_budget, identity_error, identity_net

__all__ = [
    "ShallowTanhNet", "fit_shallow_tanh", "identity_net", "identity_error",
    "ExpMixture", "KernelRemainder", "FourierDecomposition", "decompose_kernel", "fourier_coefficients",
    "build_poisson_rnn", "build_vanilla_hawkes_rnn", "build_linear_hawkes_rnn", "build_nonlinear_hawkes_rnn",
    "recursion_state", "exp_map", "rotation_map", "certificate",
]

STATE_MARGIN = 0.5
DEFAULT_MAX_WIDTH = 1024
COEF_TOL = 1e-12


def psi_step(s0: int, budget: float) -> float:
    """Identity-relay step h = (12 (s0 + 1))^-2 * sqrt(budget)."""
    return (12.0 * (s0 + 1)) ** -2 * math.sqrt(budget)


# ------------------------------------------------------------- exact maps

def exp_map(beta: float):
    """g(x, y) = x exp(-beta y) + 1 on rows (x, y)."""
    return lambda X: X[:, 0] * np.exp(-beta * X[:, 1]) + 1.0


def rotation_map(w: float):
    """g_l(x, y) = (x1 cos wy + x2 sin wy, -x1 sin wy + x2 cos wy + 1) on rows (x1, x2, y)."""
    def g(X):
        c, s = np.cos(w * X[:, 2]), np.sin(w * X[:, 2])
        return np.stack([X[:, 0] * c + X[:, 1] * s, -X[:, 0] * s + X[:, 1] * c + 1.0], axis=1)
    return g


def recursion_state(g, seq: EventSequence, t: float, dim: int = 1) -> np.ndarray:
    """Run S_j = g(S_{j-1}, t_j - t_{j-1}) from S_0 = 0 and return g(S_J, t - t_J).

    ``g`` maps rows (state..., elapsed) to the next state; J counts events
    strictly before t.
    """
    times = seq.times
    J = int(seq.prefix_count(np.array([t]))[0])
    S = np.zeros(dim)
    prev = 0.0
    for j in range(J):
        S = np.atleast_1d(g(np.concatenate([S, [times[j] - prev]])[None, :])).reshape(dim)
        prev = times[j]
    return np.atleast_1d(g(np.concatenate([S, [t - prev]])[None, :])).reshape(dim)


# ------------------------------------------------------------ kernel tools

@dataclass
class ExpMixture:
    """mu = remainder - sum_j coefficients[j] exp(-rates[j] t)."""

    coefficients: np.ndarray
    rates: np.ndarray
    k: int
    residual: float = 0.0
    boundary_mismatch: float = 0.0
    # ||alpha||_inf <= alpha_bound_over_C * C with C the unquantified Vandermonde constant
    alpha_bound_over_C: float = math.nan

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if np.any(np.diff(self.rates) <= 0) or self.rates[0] <= 0 or self.rates[-1] > 1:
            raise ValueError("rates must be strictly increasing in (0, 1]")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return sum(a * np.exp(-d * t) for a, d in zip(self.coefficients, self.rates))


@dataclass(frozen=True)
class KernelRemainder:
    """mu_tilde = mu + sum_j alpha_j exp(-delta_j t)."""

    mu: object
    alphas: tuple
    rates: tuple
    k: int

    def deriv(self, t, order: int):
        t = np.asarray(t, dtype=float)
        out = self.mu.deriv(t, order)
        for a, d in zip(self.alphas, self.rates):
            out = out + a * (-d) ** order * np.exp(-d * t)
        return out

    def __call__(self, t):
        return self.deriv(t, 0)


def _boundary_system(k: int, T: float):
    rates = np.arange(1, k + 1) / k
    A = np.array([[(-d) ** r * (1.0 - math.exp(-d * T)) for d in rates] for r in range(k)])
    return rates, A


def decompose_kernel(mu, T: float, k: int | None = None):
    """Subtract an exponential mixture so the remainder has matching endpoint derivatives.

    Returns ``(ExpMixture, KernelRemainder)`` with mu = remainder - mixture.
    """
    mu = cat.kernel(mu)
    k = mu.k if k is None else int(k)
    if k < 1:
        raise ConfigError("k must be >= 1")
    rates, A = _boundary_system(k, T)
    rhs = np.array([float(mu.deriv(T, r) - mu.deriv(0.0, r)) for r in range(k)])
    try:
        alpha = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular boundary-matching system") from exc
    if not np.all(np.isfinite(alpha)):
        raise NumericError("boundary-matching system produced non-finite coefficients")
    residual = float(np.max(np.abs(A @ alpha - rhs))) if k else 0.0
    rem = KernelRemainder(mu, tuple(float(a) for a in alpha), tuple(float(d) for d in rates), k)
    mismatch = max(abs(float(rem.deriv(T, r) - rem.deriv(0.0, r))) for r in range(k))
    c0 = cat.kernel_c0(mu, T, k)
    mix = ExpMixture(alpha, rates, k, residual, mismatch,
                     alpha_bound_over_C=2.0 * c0 * 8.0**k / (1.0 - math.exp(-T)))
    return mix, rem


@dataclass
class FourierDecomposition:
    """S_N(t) = mu0 / 2 + sum_l mu[l-1] cos(w_l t) + nu[l-1] sin(w_l t), w_l = 2 pi l / T."""

    mu0: float
    mu: np.ndarray
    nu: np.ndarray
    T: float
    N: int
    k: int
    C0: float

    def w(self, l: int) -> float:
        return 2.0 * math.pi * l / self.T

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full_like(t, 0.5 * self.mu0)
        for l in range(1, self.N + 1):
            out = out + self.mu[l - 1] * np.cos(self.w(l) * t) + self.nu[l - 1] * np.sin(self.w(l) * t)
        return out

    def coefficient_bound(self, l: int) -> float:
        return 2.0 * self.C0 * self.T**self.k / (2.0 * l * math.pi) ** self.k

    def truncation_bound(self) -> float:
        if self.k < 2 or self.N < 1:
            return math.inf
        return (2.0 * self.C0 * self.T ** (self.k + 1)
                / ((self.k - 1) * (2.0 * math.pi) ** self.k * self.N ** (self.k - 1)))

    def measured_truncation(self, target, grid: int = 20001) -> float:
        t = np.linspace(0.0, self.T, grid)
        return float(np.max(np.abs(self(t) - np.asarray(target(t), dtype=float))))


def fourier_coefficients(mu_tilde, N: int, T: float, k: int | None = None, C0: float | None = None,
                         tol: float = 1e-10) -> FourierDecomposition:
    """Fourier coefficients of ``mu_tilde`` on [0, T] by adaptive quadrature."""
    if N < 0:
        raise ConfigError("N must be >= 0")
    k = getattr(mu_tilde, "k", 3) if k is None else k
    if C0 is None:
        C0 = cat.kernel_c0(mu_tilde, T, k) if hasattr(mu_tilde, "deriv") else math.nan
    f = lambda t: np.asarray(mu_tilde(t), dtype=float)
    mu0 = 2.0 / T * integrate(f, [0.0, T], tol)
    mus, nus = np.zeros(N), np.zeros(N)
    for l in range(1, N + 1):
        w = 2.0 * math.pi * l / T
        edges = np.linspace(0.0, T, 2 * l + 1)
        mus[l - 1] = 2.0 / T * integrate(lambda t: f(t) * np.cos(w * t), edges, tol)
        nus[l - 1] = 2.0 / T * integrate(lambda t: f(t) * np.sin(w * t), edges, tol)
    return FourierDecomposition(float(mu0), mus, nus, T, N, k, float(C0))


# ---------------------------------------------------------------- assembly

@dataclass
class Block:
    """One first-layer block and how its readouts enter the output."""

    name: str
    Wt: np.ndarray          # (n,) weight on the absolute-time channel
    Wy: np.ndarray          # (n,) weight on the elapsed-time channel
    Wh: np.ndarray          # (n, n)
    b: np.ndarray           # (n,)
    R: np.ndarray           # (q, n) readout rows
    coefs: np.ndarray       # (q,) output coefficients on the relayed readouts
    offset: float           # constant added to the output
    M: float                # relay input magnitude bound
    error: float            # certified contribution to the sup intensity error
    detail: dict = field(default_factory=dict)


def _state_block(name, net: ShallowTanhNet, state_dim: int, coefs, offset, M, error, detail) -> Block:
    """Wire a fitted ``g`` net (inputs state..., elapsed; no output bias) as a recurrent block."""
    if np.any(net.c != 0.0):
        raise ConstructionError(f"block '{name}' needs a net without output bias", component=name)
    Ws = net.W[:, :state_dim]
    return Block(name, np.zeros(net.width), net.W[:, state_dim].copy(), Ws @ net.V, net.b0.copy(),
                 net.V.copy(), np.atleast_1d(np.asarray(coefs, dtype=float)), float(offset), M, error, detail)


def _count_block(h0: float, coef: float, s0: int, error: float, detail) -> Block:
    """S_j = psi_h0(S_{j-1} + 1) as a single unit."""
    return Block("count", np.zeros(1), np.zeros(1), np.array([[1.0]]), np.array([h0 / 2.0]),
                 np.array([[2.0 / h0]]), np.array([coef]), -coef, s0 + 1 + STATE_MARGIN, error, detail)


def _background_block(net: ShallowTanhNet | None, const: float, T: float, error: float, detail) -> Block | None:
    if net is None:
        return None
    t = np.linspace(0.0, T, 20001)
    M = float(np.max(np.abs(net.hidden(t[:, None]) @ net.V[0]))) * 1.01 + 1e-12
    n = net.width
    return Block("background", net.W[:, 0].copy(), np.zeros(n), np.zeros((n, n)), net.b0.copy(),
                 net.V.copy(), np.array([1.0]), float(net.c[0]), M, error, detail)


def _assemble(blocks: list[Block], h: float, clamp, extra_offset: float = 0.0) -> tuple:
    """Return (layer params for layers 1-2, w_out, b_out)."""
    blocks = [b for b in blocks if b is not None]
    n = sum(b.Wh.shape[0] for b in blocks)
    q = sum(b.R.shape[0] for b in blocks)
    if n == 0:
        n, q = 1, 1
    Wx0 = np.zeros((n, 2))
    Wh0 = np.zeros((n, n))
    b0 = np.zeros(n)
    Wx1 = np.zeros((q, n))
    w_out = np.zeros(q)
    b_out = extra_offset
    i = j = 0
    for blk in blocks:
        m, r = blk.Wh.shape[0], blk.R.shape[0]
        Wx0[i:i + m, 0] = blk.Wt
        Wx0[i:i + m, 1] = blk.Wy
        Wh0[i:i + m, i:i + m] = blk.Wh
        b0[i:i + m] = blk.b
        Wx1[j:j + r, i:i + m] = 0.5 * h * blk.R
        w_out[j:j + r] = 2.0 / h * blk.coefs
        b_out += blk.offset
        i += m
        j += r
    params = {"Wx0": Wx0, "Wh0": Wh0, "b0": b0, "Wx1": Wx1, "Wh1": np.zeros((q, q)), "b1": np.zeros(q)}
    return params, w_out, float(b_out)


def _finish(params, w_out, b_out, widths, clamp, cert: dict) -> RnnTppModel:
    cfg = RnnConfig(widths=widths, input_dim=2, l_f=clamp[0], u_f=clamp[1], link=Link.CLAMP.value,
                    interpolation=Interp.INPUT_EMBEDDING.value)
    params = dict(params, w_out=w_out, b_out=np.array(b_out))
    return RnnTppModel(cfg, params, {"certificate": cert, "tool_version": __version__})


def certificate(model: RnnTppModel) -> dict:
    return model.meta["certificate"]


def _certify(blocks, extra: dict, budget: float, target_doc: dict, s0: int, h: float, clamp) -> dict:
    comps = {b.name: float(b.error) for b in blocks if b is not None}
    comps.update(extra)
    total = math.fsum(comps.values())
    cert = {
        "target_model": target_doc, "s_0": int(s0), "budget": float(budget),
        "certified_error": total, "measured_error": None, "component_errors": comps,
        "psi_step": h, "clamp": list(clamp),
        "component_detail": {b.name: b.detail for b in blocks if b is not None},
    }
    if total > budget:
        worst = max(comps, key=comps.get)
        raise ConstructionError(
            f"certified error {total:.3g} exceeds budget {budget:.3g}; largest component '{worst}' "
            f"contributes {comps[worst]:.3g}; increase the width budget", component=worst)
    return cert


def _fit_background(lam0, T: float, budget: float, max_width: int, seed: int):
    """(net or None, constant, certified error)."""
    if isinstance(lam0, cat.Constant):
        return None, float(lam0.c), 0.0
    target = lambda X: lam0(X[:, 0])
    net = fit_to_budget(target, [0.0], [T], budget, max_width, seed, out_bias=True, name="background")
    return net, 0.0, net.certified_sup_error


def _fit_state_net(target, lo, hi, err_budget, max_width, seed, name, start=4):
    return fit_to_budget(target, lo, hi, err_budget, max_width, seed, out_bias=False, start=start, name=name)


def _check_margin(name, s0, err):
    if (s0 + 1) * err > STATE_MARGIN:
        raise ConstructionError(f"accumulated state error in '{name}' exceeds the domain margin", component=name)


def _detail(net: ShallowTanhNet) -> dict:
    return {"width": net.width, "certified_sup_error": net.certified_sup_error,
            "measured_sup_error": net.measured_sup_error,
            "domain": [list(map(float, net.lo)), list(map(float, net.hi))]}


def _exp_block(name, beta, coef, s0, T, h, err_budget, max_width, seed) -> Block:
    lo = [-STATE_MARGIN, 0.0]
    hi = [s0 + STATE_MARGIN, T]
    net = _fit_state_net(exp_map(beta), lo, hi, err_budget, max_width, seed, name)
    _check_margin(name, s0, net.certified_sup_error)
    M = s0 + 1 + STATE_MARGIN
    err = abs(coef) * ((s0 + 1) * net.certified_sup_error + identity_error(h, M))
    return _state_block(name, net, 1, [coef], -coef, M, err, dict(_detail(net), rate=beta, coefficient=coef))


def _rotation_block(name, w, nu, mu, s0, T, h, err_budget, max_width, seed) -> Block:
    m = STATE_MARGIN
    lo = [-(s0 - 1) - m, -(s0 - 2) - m, 0.0]
    hi = [(s0 - 1) + m, s0 + m, T]
    lo[0], lo[1] = min(lo[0], -m), min(lo[1], -m)
    hi[0], hi[1] = max(hi[0], m), max(hi[1], 1.0 + m)
    net = _fit_state_net(rotation_map(w), lo, hi, err_budget, max_width, seed, name, start=64)
    _check_margin(name, s0, net.certified_sup_error)
    M = s0 + 1 + m
    err = math.hypot(nu, mu) * ((s0 + 1) * net.certified_sup_error + math.sqrt(2.0) * identity_error(h, M))
    return _state_block(name, net, 2, [nu, mu], -mu, M, err, dict(_detail(net), frequency=w, coefficients=[nu, mu]))


def _background_of(spec):
    return cat.background(spec)


def _default_clamp(B1: float, upper: float):
    return (min(B1, 1.0), upper)


def _check_clamp(clamp, lower: float, upper: float):
    l_f, u_f = clamp
    if not (0.0 < l_f < u_f):
        raise ConfigError("clamp must satisfy 0 < l_f < u_f")
    if l_f > lower + 1e-12 or u_f < upper - 1e-12:
        raise ConfigError(f"clamp ({l_f}, {u_f}) must contain the intensity range [{lower}, {upper}]")


# ---------------------------------------------------------------- builders

def build_poisson_rnn(lam0, T: float, budget: float = 0.01, max_width: int = DEFAULT_MAX_WIDTH,
                      clamp=None, seed: int = 0) -> RnnTppModel:
    """Two-layer model with zero recurrent weights approximating a background rate."""
    lam0 = _background_of(lam0)
    B1, B0 = lam0.bounds(T)
    clamp = tuple(clamp) if clamp is not None else _default_clamp(B1, B0)
    _check_clamp(clamp, B1, B0)
    h = psi_step(0, budget)
    net, const, err = _fit_background(lam0, T, 0.5 * budget, max_width, seed)
    blk = None
    if net is not None:
        blk = _background_block(net, const, T, err + identity_error(h, 1.0), _detail(net))
        blk.error = err + identity_error(h, blk.M)
    target = model_to_doc(NonHomPoisson(lam0))
    cert = _certify([blk], {}, budget, target, 0, h, clamp)
    params, w_out, b_out = _assemble([blk], h, clamp, extra_offset=const)
    widths = (params["Wh0"].shape[0], params["Wh1"].shape[0])
    return _finish(params, w_out, b_out, widths, clamp, cert)


def _split(budget: float, n: int, weights) -> list:
    return [budget / n / max(w, 1e-300) for w in weights]


def _vanilla_blocks(lam0, alpha, beta, T, s0, budget, max_width, seed):
    h = psi_step(s0, budget)
    B1, B0 = lam0.bounds(T)
    bg_share = 0.0 if isinstance(lam0, cat.Constant) else 0.25 * budget
    net, const, err0 = _fit_background(lam0, T, 0.9 * bg_share, max_width, seed)
    bg = _background_block(net, const, T, 0.0, _detail(net) if net else {})
    if bg is not None:
        bg.error = err0 + identity_error(h, bg.M)
    used = bg.error if bg is not None else 0.0
    M = s0 + 1 + STATE_MARGIN
    rem = budget - used - alpha * identity_error(h, M)
    blocks = [bg]
    if alpha > 0:
        g_budget = 0.9 * rem / (alpha * (s0 + 1))
        blocks.append(_exp_block("excitation", beta, alpha, s0, T, h, g_budget, max_width, seed))
    return blocks, const, h


def build_vanilla_hawkes_rnn(lam0, alpha: float, beta: float, T: float, s0: int, budget: float = 0.05,
                             max_width: int = DEFAULT_MAX_WIDTH, clamp=None, seed: int = 0) -> RnnTppModel:
    """Two-layer model for lambda0(t) + alpha sum_i exp(-beta (t - t_i))."""
    lam0 = _background_of(lam0)
    if not (alpha >= 0 and beta > 0 and alpha / beta < 1):
        raise ConfigError("need alpha >= 0, beta > 0 and alpha / beta < 1")
    B1, B0 = lam0.bounds(T)
    upper = B0 + alpha * s0
    clamp = tuple(clamp) if clamp is not None else _default_clamp(B1, upper)
    _check_clamp(clamp, B1, upper)
    blocks, const, h = _vanilla_blocks(lam0, alpha, beta, T, s0, budget, max_width, seed)
    target = model_to_doc(LinearHawkesExp(lam0, alpha, beta))
    cert = _certify(blocks, {}, budget, target, s0, h, clamp)
    params, w_out, b_out = _assemble(blocks, h, clamp, extra_offset=const)
    widths = (params["Wh0"].shape[0], params["Wh1"].shape[0])
    return _finish(params, w_out, b_out, widths, clamp, cert)


def _choose_fourier_order(rem: KernelRemainder, T: float, s0: int, trunc_budget: float, max_order: int):
    c0 = cat.kernel_c0(rem, T, rem.k)
    for N in range(0, max_order + 1):
        four = fourier_coefficients(rem, N, T, rem.k, c0)
        trunc = four.measured_truncation(rem)
        if s0 * 1.1 * trunc <= trunc_budget:
            return four, trunc
    raise ConstructionError(f"Fourier truncation error {trunc:.3g} too large at order {max_order}",
                            component="fourier_truncation")


def build_linear_hawkes_rnn(lam0, mu, T: float, s0: int, budget: float = 0.1,
                            max_width: int = DEFAULT_MAX_WIDTH, max_order: int = 16, k: int | None = None,
                            clamp=None, seed: int = 0) -> RnnTppModel:
    """Two-layer model for lambda0(t) + sum_i mu(t - t_i) with a smooth kernel mu on [0, T]."""
    lam0 = _background_of(lam0)
    mu = cat.kernel(mu)
    B1, B0 = lam0.bounds(T)
    upper = B0 + s0 * mu.sup(T)
    clamp = tuple(clamp) if clamp is not None else _default_clamp(B1, upper)
    _check_clamp(clamp, B1, upper)
    h = psi_step(s0, budget)
    mix, rem = decompose_kernel(mu, T, k)
    scale = max(1.0, float(np.max(np.abs(mix.coefficients))))

    # background first, then Fourier truncation, then the recurrent blocks share the rest
    bg_share = 0.0 if isinstance(lam0, cat.Constant) else 0.2 * budget
    net, const, err0 = _fit_background(lam0, T, 0.9 * bg_share, max_width, seed)
    bg = _background_block(net, const, T, 0.0, _detail(net) if net else {})
    if bg is not None:
        bg.error = err0 + identity_error(h, bg.M)
    four, trunc = _choose_fourier_order(rem, T, s0, 0.2 * budget, max_order)
    trunc_err = s0 * 1.1 * trunc

    M = s0 + 1 + STATE_MARGIN
    psi_err = identity_error(h, M)
    exp_terms = [(j, float(a), float(d)) for j, (a, d) in enumerate(zip(mix.coefficients, mix.rates))
                 if abs(a) > COEF_TOL * scale]
    rot_terms = [(l, float(four.nu[l - 1]), float(four.mu[l - 1])) for l in range(1, four.N + 1)
                 if math.hypot(four.nu[l - 1], four.mu[l - 1]) > COEF_TOL * scale]
    count_coef = 0.5 * four.mu0 if abs(four.mu0) > COEF_TOL * scale else 0.0
    count_err = abs(count_coef) * ((s0 + 1) * identity_error(h, M) + psi_err)

    fixed = (bg.error if bg is not None else 0.0) + trunc_err + count_err
    fixed += sum(abs(a) * psi_err for _, a, _ in exp_terms)
    fixed += sum(math.hypot(nu, m) * math.sqrt(2.0) * psi_err for _, nu, m in rot_terms)
    rem_budget = budget - fixed
    n_rec = len(exp_terms) + len(rot_terms)
    blocks = [bg]
    if n_rec and rem_budget <= 0:
        raise ConstructionError("no budget left for the recurrent blocks", component="fourier_truncation")
    for j, a, d in exp_terms:
        g_budget = 0.9 * rem_budget / (n_rec * abs(a) * (s0 + 1))
        blocks.append(_exp_block(f"exp_{j + 1}", d, -a, s0, T, h, g_budget, max_width, seed))
    for l, nu, m in rot_terms:
        g_budget = min(0.9 * rem_budget / (n_rec * math.hypot(nu, m) * (s0 + 1)), 0.5 * STATE_MARGIN / (s0 + 1))
        blocks.append(_rotation_block(f"rotation_{l}", four.w(l), nu, m, s0, T, h, g_budget, max_width, seed))
    if count_coef != 0.0:
        blocks.append(_count_block(h, count_coef, s0, count_err, {"coefficient": count_coef}))

    target = model_to_doc(LinearHawkesGeneral(lam0, mu))
    cert = _certify(blocks, {"fourier_truncation": trunc_err}, budget, target, s0, h, clamp)
    cert["decomposition"] = {
        "k": mix.k, "coefficients": mix.coefficients.tolist(), "rates": mix.rates.tolist(),
        "residual": mix.residual, "boundary_mismatch": mix.boundary_mismatch,
        "alpha_bound_over_C": mix.alpha_bound_over_C,
        "fourier_order": four.N, "fourier_mu0": four.mu0, "fourier_mu": four.mu.tolist(),
        "fourier_nu": four.nu.tolist(), "measured_truncation": trunc,
        "truncation_bound": four.truncation_bound(),
    }
    params, w_out, b_out = _assemble(blocks, h, clamp, extra_offset=const)
    widths = (params["Wh0"].shape[0], params["Wh1"].shape[0])
    n_total = widths[0]
    cert["width"] = {"actual": list(widths),
                     "theory_formula": "N + N_mu^5 (log N)^4",
                     "theory_value": n_total + four.N**5 * max(math.log(max(n_total, 2)), 1.0) ** 4}
    return _finish(params, w_out, b_out, widths, clamp, cert)


def build_nonlinear_hawkes_rnn(lam0, alpha: float, beta: float, link, T: float, s0: int, budget: float = 0.1,
                               max_width: int = DEFAULT_MAX_WIDTH, clamp=None, seed: int = 0) -> RnnTppModel:
    """Four-layer model for Psi(lambda0(t) + alpha sum_i exp(-beta (t - t_i))).

    Layers 1-2 produce the linear part, layer 3 is a fitted net for Psi on
    [-1, B0 + alpha s0 + 1] and layer 4 relays its readout.
    """
    lam0 = _background_of(lam0)
    link = cat.link(link)
    if not (alpha >= 0 and beta > 0):
        raise ConfigError("need alpha >= 0 and beta > 0")
    lo_link, hi_link = link.bounds
    if lo_link <= 0:
        raise ConfigError("link lower bound must be positive")
    if clamp is None:
        clamp = (lo_link, hi_link) if hi_link > lo_link else (0.5 * lo_link, 2.0 * hi_link)
    clamp = tuple(clamp)
    _check_clamp(clamp, lo_link, hi_link)
    B1, B0 = lam0.bounds(T)
    L_psi = link.lipschitz

    h = psi_step(s0, budget)
    # Psi fit and its relay take a quarter; the linear part gets the rest scaled by 1/L
    psi_budget = 0.25 * budget
    a, b = -1.0, B0 + alpha * s0 + 1.0
    psi_net = fit_to_budget(lambda X: link(X[:, 0]), [a], [b], 0.9 * psi_budget, max_width, seed,
                            out_bias=True, name="link")
    lin_budget = (budget - psi_net.certified_sup_error) / max(L_psi, 1e-300) if L_psi > 0 else 1.0
    lin_budget = min(lin_budget, 1.0 - 1e-9)   # keeps the linear part inside the link domain margin
    blocks, const, h1 = _vanilla_blocks(lam0, alpha, beta, T, s0, 0.8 * lin_budget, max_width, seed)
    lin_err = math.fsum(bk.error for bk in blocks if bk is not None)
    params, w_lin, b_lin = _assemble(blocks, h1, clamp, extra_offset=const)

    # relay of Psi_hat's readout (magnitude bounded by the fitted output range)
    xs = np.linspace(a, b, 20001)[:, None]
    M4 = float(np.max(np.abs(psi_net.hidden(xs) @ psi_net.V[0]))) * 1.01 + 1e-12
    relay_err = identity_error(h, M4)
    n3 = psi_net.width
    params["Wx2"] = np.outer(psi_net.W[:, 0], w_lin)
    params["Wh2"] = np.zeros((n3, n3))
    params["b2"] = psi_net.W[:, 0] * b_lin + psi_net.b0
    params["Wx3"] = 0.5 * h * psi_net.V.copy()
    params["Wh3"] = np.zeros((1, 1))
    params["b3"] = np.zeros(1)
    w_out = np.array([2.0 / h])
    b_out = float(psi_net.c[0])

    comps = {"linear_part": L_psi * lin_err, "link": psi_net.certified_sup_error, "link_relay": relay_err}
    total = math.fsum(comps.values())
    target = model_to_doc(NonlinearHawkesExp(lam0, alpha, beta, link))
    cert = {
        "target_model": target, "s_0": int(s0), "budget": float(budget), "certified_error": total,
        "measured_error": None, "component_errors": comps, "psi_step": h, "clamp": list(clamp),
        "component_detail": {"link": _detail(psi_net), "link_lipschitz": L_psi,
                             "linear_components": {bk.name: bk.error for bk in blocks if bk is not None},
                             "linear_psi_step": h1},
    }
    if total > budget:
        worst = max(comps, key=comps.get)
        raise ConstructionError(f"certified error {total:.3g} exceeds budget {budget:.3g}; "
                                f"largest component '{worst}'", component=worst)
    widths = (params["Wh0"].shape[0], params["Wh1"].shape[0], n3, 1)
    return _finish(params, w_out, b_out, widths, clamp, cert)


# ------------------------------------------------------------ verification

def filtered_sequences(truth, T: float, s0: int | None, n: int, seed: int, max_draws: int = 100_000):
    """First ``n`` simulated sequences with at most ``s0`` events (all when s0 is None)."""
    from .core import simulate
    out, i = [], 0
    while len(out) < n:
        if i >= max_draws:
            raise ConstructionError(f"only {len(out)} of {n} sequences had at most {s0} events")
        s = simulate(truth, T, seed, i)
        if s0 is None or len(s) <= s0:
            out.append(s)
        i += 1
    return out


def measure_sup_error(model: RnnTppModel, truth, T: float, s0: int | None, n: int = 100, seed: int = 1,
                      grid: int = 1000) -> float:
    """max over filtered sequences and a time grid (plus just-after-event points) of |lam_hat - lam*|."""
    from .core import intensity_at
    from .rnn import intensity
    worst = 0.0
    for s in filtered_sequences(truth, T, s0, n, seed):
        t = np.linspace(T / grid, T, grid)
        after = np.minimum(s.times + 1e-9 * T, T)
        t = np.unique(np.concatenate([t, s.times, after]))
        err = np.abs(intensity(model, s, t) - intensity_at(truth, s, t))
        worst = max(worst, float(np.max(err)))
    return worst
