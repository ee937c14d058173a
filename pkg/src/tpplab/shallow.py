"""Fitted one-hidden-layer tanh networks with measured sup-error certificates.

A net is ``x -> V tanh(W x + b0) + c`` in raw input coordinates.  Fitting:
random-feature initialization, linear least squares for the output layer,
then (for moderate sizes) Levenberg-Marquardt refinement of all weights.
The certificate is the maximum error over an independent validation set
(scrambled Sobol points plus box faces and corners), inflated by a safety
factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import qmc

from .core import stream
from .errors import ConstructionError

CERT_FACTOR = 1.1
N_CERT_MIN = 10_000


@dataclass
class ShallowTanhNet:
    W: np.ndarray            # (N, d)
    b0: np.ndarray           # (N,)
    V: np.ndarray            # (p, N)
    c: np.ndarray            # (p,)
    lo: np.ndarray
    hi: np.ndarray
    certified_sup_error: float = math.inf
    measured_sup_error: float = math.inf
    meta: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.V.shape[0]

    def hidden(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.tanh(X @ self.W.T + self.b0)

    def __call__(self, X):
        out = self.hidden(X) @ self.V.T + self.c
        return out[:, 0] if self.output_dim == 1 else out

    def padded(self, width: int) -> "ShallowTanhNet":
        """Same function with zero-weight units appended."""
        extra = width - self.width
        if extra < 0:
            raise ValueError("cannot shrink a net by padding")
        d, p = self.input_dim, self.output_dim
        return ShallowTanhNet(np.vstack([self.W, np.zeros((extra, d))]),
                              np.concatenate([self.b0, np.zeros(extra)]),
                              np.hstack([self.V, np.zeros((p, extra))]), self.c.copy(),
                              self.lo, self.hi, self.certified_sup_error,
                              self.measured_sup_error, dict(self.meta, padded_from=self.width))


def _as_2d(y, m):
    y = np.asarray(y, dtype=float)
    return y.reshape(m, -1)


def _box_points(lo, hi, n, seed, scramble_seed):
    d = lo.size
    if d == 1:
        # uniform grid with an offset so fitting and validation never coincide
        u = (np.arange(n) + (0.5 if scramble_seed % 2 else 0.25)) / n
        pts = u[:, None]
    else:
        m = int(math.ceil(math.log2(n)))
        pts = qmc.Sobol(d, scramble=True, seed=int(seed * 1000 + scramble_seed)).random_base2(m)
    return lo + (hi - lo) * pts


def _face_points(lo, hi, per_edge):
    """Corners plus a grid on every face of the box."""
    d = lo.size
    if d == 1:
        return np.array([[lo[0]], [hi[0]]])
    axes = [np.linspace(lo[k], hi[k], per_edge) for k in range(d)]
    faces = []
    for k in range(d):
        others = [axes[j] for j in range(d) if j != k]
        mesh = np.stack(np.meshgrid(*others, indexing="ij"), axis=-1).reshape(-1, d - 1)
        for val in (lo[k], hi[k]):
            pts = np.insert(mesh, k, val, axis=1)
            faces.append(pts)
    return np.vstack(faces)


def validation_points(lo, hi, seed: int = 0, n: int = 16384):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = max(n, N_CERT_MIN)
    interior = _box_points(lo, hi, n, seed, 7)
    per_edge = {1: 2, 2: 257, 3: 41}.get(lo.size, 9)
    return np.vstack([interior, _face_points(lo, hi, per_edge)])


def fitting_points(lo, hi, n: int, seed: int = 0):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    interior = _box_points(lo, hi, n, seed, 2)
    per_edge = {1: 2, 2: 65, 3: 17}.get(lo.size, 5)
    return np.vstack([interior, _face_points(lo, hi, per_edge)])


def _random_features(N, d, rng, scale_hi):
    """Hidden weights in normalized [-1,1]^d coordinates."""
    dirs = rng.normal(size=(N, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scale = rng.uniform(0.3, scale_hi, size=N)
    Wn = dirs * scale[:, None]
    centers = rng.uniform(-1.0, 1.0, size=(N, d))
    bn = -np.sum(Wn * centers, axis=1)
    return Wn, bn


def _solve_outer(Hid, Y, out_bias):
    A = np.hstack([Hid, np.ones((Hid.shape[0], 1))]) if out_bias else Hid
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    if out_bias:
        return coef[:-1].T, coef[-1]
    return coef.T, np.zeros(Y.shape[1])


def _refine(Xn, Y, Wn, bn, V, c, out_bias, max_nfev):
    """Levenberg-Marquardt on all weights (normalized coordinates)."""
    m, d = Xn.shape
    N = Wn.shape[0]
    p = Y.shape[1]

    def unpack(z):
        i = 0
        W = z[i:i + N * d].reshape(N, d); i += N * d
        b = z[i:i + N]; i += N
        Vv = z[i:i + p * N].reshape(p, N); i += p * N
        cc = z[i:i + p] if out_bias else np.zeros(p)
        return W, b, Vv, cc

    def resid(z):
        W, b, Vv, cc = unpack(z)
        Hh = np.tanh(Xn @ W.T + b)
        return (Hh @ Vv.T + cc - Y).T.ravel()

    def jac(z):
        W, b, Vv, cc = unpack(z)
        Hh = np.tanh(Xn @ W.T + b)
        S = 1.0 - Hh * Hh
        blocks = []
        for o in range(p):
            g = S * Vv[o]                       # (m, N)
            dW = (g[:, :, None] * Xn[:, None, :]).reshape(m, N * d)
            dV = np.zeros((m, p * N)); dV[:, o * N:(o + 1) * N] = Hh
            row = [dW, g, dV]
            if out_bias:
                dc = np.zeros((m, p)); dc[:, o] = 1.0
                row.append(dc)
            blocks.append(np.hstack(row))
        return np.vstack(blocks)

    z0 = np.concatenate([Wn.ravel(), bn, V.ravel()] + ([c] if out_bias else []))
    n_par = z0.size
    method = "lm" if m * p >= n_par else "trf"
    res = least_squares(resid, z0, jac=jac, method=method, max_nfev=max_nfev, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return unpack(res.x)


FEATURE_SCALES = (1.0, 2.0, 4.0)


def _fit_raw(target, lo, hi, N, seed, out_bias, refine, n_fit, restarts):
    d = lo.size
    X = fitting_points(lo, hi, n_fit, seed)
    Y = _as_2d(target(X), X.shape[0])
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    Xn = (X - mid) / half
    n_par = N * (d + 1) + Y.shape[1] * (N + 1)
    do_refine = refine and n_par * X.shape[0] * Y.shape[1] <= 1e6 and np.any(Y != 0)

    def fit_err(Wn, bn, V, c):
        # selection uses the fitting set; validation stays independent
        return np.max(np.abs(np.tanh(Xn @ Wn.T + bn) @ V.T + c - Y))

    best = None
    refine_all = do_refine and n_par <= 64
    for r in range(restarts):
        # the last candidate scales with the resolution a width-N net can afford
        for k, scale in enumerate(FEATURE_SCALES + (2.0 * N ** (1.0 / d),)):
            rng = stream(seed, 1000 * N + 10 * r + k)
            Wn, bn = _random_features(N, d, rng, scale_hi=scale)
            V, c = _solve_outer(np.tanh(Xn @ Wn.T + bn), Y, out_bias)
            if refine_all:
                Wn, bn, V, c = _refine(Xn, Y, Wn, bn, V, c, out_bias, max_nfev=refine)
            err = fit_err(Wn, bn, V, c)
            if best is None or err < best[0]:
                best = (err, Wn, bn, V, c)
    if do_refine and not refine_all:
        Wn, bn, V, c = _refine(Xn, Y, *best[1:], out_bias, max_nfev=refine)
        # re-solve the linear part exactly after the nonlinear pass
        V, c = _solve_outer(np.tanh(Xn @ Wn.T + bn), Y, out_bias)
        err = fit_err(Wn, bn, V, c)
        if err < best[0]:
            best = (err, Wn, bn, V, c)
    _, Wn, bn, V, c = best
    # fold the normalization into the hidden layer
    W = Wn / half
    b0 = bn - W @ mid
    return ShallowTanhNet(W, b0, V, c, lo, hi)


def certify(net: ShallowTanhNet, target, seed: int = 0) -> ShallowTanhNet:
    Xv = validation_points(net.lo, net.hi, seed)
    Yv = _as_2d(target(Xv), Xv.shape[0])
    diff = _as_2d(net(Xv), Xv.shape[0]) - Yv
    err = float(np.max(np.linalg.norm(diff, axis=1))) if diff.size else 0.0
    net.measured_sup_error = err
    net.certified_sup_error = CERT_FACTOR * err
    net.meta["n_validation"] = int(Xv.shape[0])
    return net


def ladder(target, lo, hi, widths, seed: int = 0, out_bias: bool = True, refine: int = 60,
           n_fit: int | None = None):
    """Yield the best-so-far certified net at each width of an increasing ladder.

    The net at each rung is the better of a fresh fit and the previous rung's
    net padded with zero units, so certified error never increases along the
    ladder.  Errors are Euclidean norms for vector-valued targets.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    prev = None
    for N in widths:
        nf = n_fit or min(max(2000, 8 * N), 12000)
        restarts = 2 if N <= 8 else 1
        net = certify(_fit_raw(target, lo, hi, N, seed, out_bias, refine, nf, restarts), target, seed)
        net.meta["fitted_width"] = N
        if prev is not None and prev.certified_sup_error <= net.certified_sup_error:
            net = prev.padded(N)
        prev = net
        yield net


def width_ladder(width: int) -> list[int]:
    rungs = [width]
    while rungs[-1] % 2 == 0 and rungs[-1] // 2 >= 4:
        rungs.append(rungs[-1] // 2)
    return rungs[::-1]


def box(domain):
    """Normalize a domain to (lo, hi) arrays; accepts (lo, hi) or [(lo, hi), ...]."""
    arr = np.asarray(domain, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2 or np.any(arr[:, 1] <= arr[:, 0]):
        raise ValueError("domain must be (lo, hi) or a list of (lo, hi) pairs with lo < hi")
    return arr[:, 0].copy(), arr[:, 1].copy()


def fit_shallow_tanh(target, domain, width: int, seed: int = 0, budget: float | None = None,
                     out_bias: bool = True, refine: int = 60) -> ShallowTanhNet:
    """Fit ``target`` (rows of X -> values) on the box ``domain`` with ``width`` tanh units.

    Raises ConstructionError when ``budget`` is given and the certified error
    exceeds it.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    lo, hi = box(domain)
    net = None
    for net in ladder(target, lo, hi, width_ladder(width), seed, out_bias, refine):
        pass
    if budget is not None and net.certified_sup_error > budget:
        raise ConstructionError(
            f"certified error {net.certified_sup_error:.3g} exceeds budget {budget:.3g} at width {width}")
    return net


def fit_to_budget(target, lo, hi, budget: float, max_width: int, seed: int = 0,
                  out_bias: bool = True, start: int = 4, refine: int = 60, name: str = "net"):
    """Smallest ladder width (doubling from ``start``) meeting ``budget``."""
    widths = []
    w = start
    while w <= max_width:
        widths.append(w)
        w *= 2
    if not widths:
        widths = [max_width]
    last = None
    for net in ladder(target, lo, hi, widths, seed, out_bias, refine):
        last = net
        if net.certified_sup_error <= budget:
            return net
    raise ConstructionError(
        f"component '{name}': certified error {last.certified_sup_error:.3g} exceeds its budget "
        f"{budget:.3g} at the width cap {max_width}; increase the width budget", component=name)


# ------------------------------------------------------------------ identity

def identity_error(h: float, M: float) -> float:
    """sup_{|u|<=M} |psi_h(u) - u| = M - (2/h) tanh(hM/2), evaluated stably."""
    x = 0.5 * h * M
    if x < 1e-2:
        gap = x**3 / 3.0 - 2.0 * x**5 / 15.0 + 17.0 * x**7 / 315.0
    else:
        gap = x - math.tanh(x)
    return 2.0 / h * gap


def identity_net(h: float, M: float) -> ShallowTanhNet:
    """psi_h(u) = (2/h) tanh(h u / 2), exact weights (tanh'(0) = 1)."""
    if h <= 0 or M <= 0:
        raise ValueError("h and M must be positive")
    net = ShallowTanhNet(np.array([[h / 2.0]]), np.zeros(1), np.array([[2.0 / h]]), np.zeros(1),
                         np.array([-M]), np.array([M]))
    u = np.linspace(-M, M, 20001)
    net.measured_sup_error = float(np.max(np.abs(net(u[:, None]) - u)))
    net.certified_sup_error = max(identity_error(h, M), net.measured_sup_error)
    net.meta["analytic_sup_error"] = identity_error(h, M)
    return net
