"""Composite Gauss-Legendre quadrature with level-wise adaptive bisection.

Integrands are vectorized callables ``f(t_array) -> values``.  Panels never
straddle the edges passed in, so piecewise-smooth integrands (intensities
between events) are integrated on their smooth pieces only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GL_ORDER = 16
_X, _W = np.polynomial.legendre.leggauss(GL_ORDER)


@dataclass(frozen=True)
class QuadConfig:
    tol: float = 1e-9
    max_depth: int = 40
    # when set, skip adaptivity and use this many equal panels per interval
    fixed_panels: int | None = None


def _panel_nodes(lo: np.ndarray, hi: np.ndarray):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = mid[:, None] + half[:, None] * _X[None, :]
    weights = half[:, None] * _W[None, :]
    return nodes, weights


def panels(f, edges, tol: float = 1e-9, max_depth: int = 40):
    """Adaptive panels covering consecutive intervals of ``edges``.

    Returns ``(lo, hi)`` arrays of accepted panels.  A panel is accepted when
    the one-panel and two-half-panel estimates agree to within its share of
    ``tol`` (share proportional to its width).
    """
    edges = np.asarray(edges, dtype=float)
    lo = edges[:-1].copy()
    hi = edges[1:].copy()
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    total = float(np.sum(hi - lo))
    if total <= 0.0:
        return np.empty(0), np.empty(0)
    out_lo, out_hi = [], []
    for depth in range(max_depth + 1):
        if lo.size == 0:
            break
        mid = 0.5 * (lo + hi)
        n1, w1 = _panel_nodes(lo, hi)
        na, wa = _panel_nodes(lo, mid)
        nb, wb = _panel_nodes(mid, hi)
        m = lo.size
        vals = np.asarray(f(np.concatenate([n1.ravel(), na.ravel(), nb.ravel()])), dtype=float)
        v1 = vals[: m * GL_ORDER].reshape(m, GL_ORDER)
        va = vals[m * GL_ORDER: 2 * m * GL_ORDER].reshape(m, GL_ORDER)
        vb = vals[2 * m * GL_ORDER:].reshape(m, GL_ORDER)
        q1 = np.sum(v1 * w1, axis=1)
        q2 = np.sum(va * wa, axis=1) + np.sum(vb * wb, axis=1)
        share = tol * (hi - lo) / total
        ok = np.abs(q1 - q2) <= share
        if depth == max_depth:
            ok[:] = True
        # accepted panels are stored as their two halves (the finer rule)
        out_lo.append(lo[ok]); out_hi.append(mid[ok])
        out_lo.append(mid[ok]); out_hi.append(hi[ok])
        bad = ~ok
        lo = np.concatenate([lo[bad], mid[bad]])
        hi = np.concatenate([mid[bad], hi[bad]])
    lo_all = np.concatenate(out_lo) if out_lo else np.empty(0)
    hi_all = np.concatenate(out_hi) if out_hi else np.empty(0)
    order = np.argsort(lo_all, kind="stable")
    return lo_all[order], hi_all[order]


def fixed_panels(edges, per_interval: int):
    edges = np.asarray(edges, dtype=float)
    lo, hi = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        cuts = np.linspace(a, b, per_interval + 1)
        lo.append(cuts[:-1]); hi.append(cuts[1:])
    if not lo:
        return np.empty(0), np.empty(0)
    return np.concatenate(lo), np.concatenate(hi)


def nodes_weights(lo, hi):
    """Flattened GL nodes and weights for the given panels."""
    if len(lo) == 0:
        return np.empty(0), np.empty(0)
    n, w = _panel_nodes(np.asarray(lo), np.asarray(hi))
    return n.ravel(), w.ravel()


def discretize(f, edges, quad: QuadConfig):
    if quad.fixed_panels is not None:
        lo, hi = fixed_panels(edges, quad.fixed_panels)
    else:
        lo, hi = panels(f, edges, quad.tol, quad.max_depth)
    return nodes_weights(lo, hi)


def integrate(f, edges, tol: float = 1e-9, max_depth: int = 40) -> float:
    """Integral of ``f`` over ``[edges[0], edges[-1]]`` split at ``edges``."""
    nodes, weights = nodes_weights(*panels(f, edges, tol, max_depth))
    if nodes.size == 0:
        return 0.0
    return float(np.dot(weights, f(nodes)))


def gauss_legendre(f, a: float, b: float, n: int = 64) -> float:
    """Plain n-point Gauss-Legendre rule on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (b - a) * x + 0.5 * (a + b)
    return float(0.5 * (b - a) * np.dot(w, f(t)))
