"""Vectorized panel quadrature for tail integrals.

Integrals over ``[lo, hi]`` are split into geometrically graded panels that
cluster at both endpoints, because every integrand in this package has its
mass concentrated near ``y = 0`` (small jump) and near ``y = x`` (big jump).
Each panel is integrated with 16- and 8-point Gauss-Legendre rules; the
difference is the (conservative) error estimate.  All rows (one per ``x``)
are evaluated in a single numpy call.
"""

from __future__ import annotations

import numpy as np

_HI_N, _LO_N = 16, 8
_HI_T, _HI_W = np.polynomial.legendre.leggauss(_HI_N)
_LO_T, _LO_W = np.polynomial.legendre.leggauss(_LO_N)

MAX_PANELS = 2**20


class QuadratureError(ArithmeticError):
    """Raised when refinement hits the panel cap before meeting tolerance."""

    def __init__(self, message: str, estimate: np.ndarray, error: np.ndarray):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


def graded_edges(lo, hi, *, smallest: float = 1e-10, ratio: float = 2.0) -> np.ndarray:
    """Panel edges on [lo, hi] refined geometrically toward both ends.

    ``lo`` and ``hi`` are arrays of equal shape ``(m,)``.  Returns an array
    ``(m, P + 1)`` of increasing edges; rows with ``hi <= lo`` get degenerate
    (zero-length) panels.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    half = np.maximum(hi - lo, 0.0) / 2.0
    top = float(np.max(half)) if half.size else 0.0
    if top <= 0.0:
        return np.stack([lo, lo], axis=1)
    k = int(np.clip(np.ceil(np.log(top / smallest) / np.log(ratio)), 1, 80))
    # fractions of the half-length: 0, r^-k, ..., r^-1, 1
    frac = np.concatenate([[0.0], ratio ** -np.arange(k, 0, -1, dtype=float), [1.0]])
    # rows with a short half-length do not need the deepest levels, but keeping
    # a common panel count keeps the arrays rectangular.
    left = lo[:, None] + half[:, None] * frac[None, :]
    right = hi[:, None] - half[:, None] * frac[None, ::-1]
    return np.concatenate([left, right[:, 1:]], axis=1)


def _rule(f, edges: np.ndarray, rows: np.ndarray):
    a = edges[:, :-1]
    b = edges[:, 1:]
    mid = 0.5 * (a + b)[..., None]
    rad = 0.5 * (b - a)[..., None]
    y_hi = mid + rad * _HI_T
    y_lo = mid + rad * _LO_T
    f_hi = f(y_hi, rows)
    f_lo = f(y_lo, rows)
    p_hi = np.sum(f_hi * _HI_W, axis=-1) * rad[..., 0]
    p_lo = np.sum(f_lo * _LO_W, axis=-1) * rad[..., 0]
    return p_hi.sum(axis=1), np.abs(p_hi - p_lo).sum(axis=1)


def _split(edges: np.ndarray) -> np.ndarray:
    mids = 0.5 * (edges[:, :-1] + edges[:, 1:])
    out = np.empty((edges.shape[0], 2 * edges.shape[1] - 1))
    out[:, 0::2] = edges
    out[:, 1::2] = mids
    return out


def panel_quad(f, edges, *, rtol: float = 1e-11, atol: float = 0.0,
               max_panels: int = MAX_PANELS):
    """Integrate ``f`` row-wise over the panels in ``edges``.

    ``f(y, rows)`` receives node abscissae of shape ``(r, P, n)`` and the row
    indices ``rows`` (shape ``(r,)``) they belong to; it must return values of
    the same shape as ``y``.  Rows failing ``err <= rtol*|I| + atol`` have all
    their panels bisected until they pass or the panel cap is reached.

    Returns ``(integral, error_estimate)``, each of shape ``(m,)``.
    """
    edges = np.atleast_2d(np.asarray(edges, dtype=float))
    m = edges.shape[0]
    total = np.zeros(m)
    err = np.zeros(m)
    rows = np.arange(m)
    current = edges
    while True:
        val, e = _rule(f, current, rows)
        total[rows] = val
        err[rows] = e
        bad = ~(e <= rtol * np.abs(val) + atol)
        if not bad.any():
            return total, err
        if 2 * (current.shape[1] - 1) > max_panels:
            raise QuadratureError(
                f"quadrature did not converge on {int(bad.sum())} row(s); "
                f"max relative error estimate {np.max(e[bad] / np.maximum(np.abs(val[bad]), 1e-300)):.3e}",
                total, err)
        rows = rows[bad]
        current = _split(current[bad])
