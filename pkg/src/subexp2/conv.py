"""Tail-accurate convolution.

Two backends:

* lattice convolution of :class:`GriddedMeasure` objects (exact for lattice
  measures, used for bulk mass and signed series), and
* quadrature on survival functions for tail values.  For laws ``A`` and
  ``B`` on the half line,

      tail_{A*B}(x) = tail_A(x) + tail_B(x) + tail_A(x) * r(x),
      r(x) = -tail_B(x) + int_{[0,x]} (tail_A(x-y)/tail_A(x) - 1) B(dy),

  which for ``A = B`` is the identity
  ``tail2(x) - 2 tail(x) + tail(x)**2 = int (tail(x-y) - tail(x)) rho(dy)``.
  The integrand is nonnegative and ``r`` is evaluated directly, so the
  second-order excess never comes from subtracting two nearly equal tails.
"""

from __future__ import annotations

import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, signal, stats

from .laws import AtomicLaw, GriddedMeasure, Law
from .quad import QuadratureError, graded_edges, panel_quad

__all__ = [
    "CompoundWeights", "poisson_weights", "convolve_grid", "grid_power",
    "excess_ratio", "tail_convolve", "FoldTable", "Folds", "nfold_tail",
    "compound_tail", "QuadratureError",
]

RTOL = 1e-11
# grids longer than this are convolved by FFT (absolute error ~1e-16 of total mass)
FFT_MIN = 512
CHUNK = 128


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("HT_THREADS", "1")))
    except ValueError:
        return 1


def _chunked(fn, x: np.ndarray, chunk: int = CHUNK):
    """Apply ``fn`` (returning a tuple of arrays) to chunks of ``x``."""
    pieces = [x[i:i + chunk] for i in range(0, len(x), chunk)] or [x]
    n = _threads()
    if n > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(n) as pool:
            parts = list(pool.map(fn, pieces))
    else:
        parts = [fn(p) for p in pieces]
    return tuple(np.concatenate(cols) for cols in zip(*parts))


# --------------------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class CompoundWeights:
    """Weights ``p_0..p_M`` of ``sum_n p_n rho^{n*}``, possibly signed.

    ``eps1`` is the declared geometric envelope: ``sum |p_n| (1+eps1)**n``
    must be finite, which on a truncated sequence means the envelope sum is
    computed and stored.  ``dropped`` bounds the mass of the discarded tail
    of ``sum |p_n|``.
    """

    p: np.ndarray
    eps1: float = 0.1
    dropped: float = 0.0
    probability: bool = False

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("weights must be a nonempty 1-d sequence")
        if not self.eps1 > 0:
            raise ValueError("eps1 must be positive")
        if self.probability:
            if np.any(p < 0):
                raise ValueError("probability weights must be nonnegative")
            if abs(math.fsum(p) + self.dropped - 1.0) > 1e-12:
                raise ValueError("probability weights must sum to 1")

    @property
    def M(self) -> int:
        return len(self.p) - 1

    @property
    def signed(self) -> bool:
        return bool(np.any(self.p < 0))

    @property
    def envelope(self) -> float:
        n = np.arange(len(self.p))
        return float(np.sum(np.abs(self.p) * (1.0 + self.eps1) ** n))

    def factorial_moment(self, k: int) -> float:
        """``sum_n n(n-1)...(n-k+1) p_n``."""
        n = np.arange(len(self.p), dtype=float)
        f = np.ones_like(n)
        for j in range(k):
            f *= n - j
        return float(math.fsum(f * self.p))


def poisson_weights(delta: float, budget: float = 1e-14) -> CompoundWeights:
    """Poisson(delta) pmf truncated where the dropped mass is below ``budget``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    m = int(stats.poisson.isf(budget, delta)) + 1
    while stats.poisson.sf(m, delta) > budget:
        m += 1
    n = np.arange(m + 1)
    p = stats.poisson.pmf(n, delta)
    return CompoundWeights(p, eps1=1.0, dropped=float(stats.poisson.sf(m, delta)),
                           probability=True)


# --------------------------------------------------------------------------------------
# lattice backend


def convolve_grid(a: GriddedMeasure, b: GriddedMeasure, size: int | None = None) -> GriddedMeasure:
    """Lattice convolution; origins add, cells beyond ``size`` go to overflow."""
    if not math.isclose(a.step, b.step, rel_tol=1e-12):
        raise ValueError(f"mismatched steps {a.step} != {b.step}")
    wa, wb = a.weights(), b.weights()
    n = a.size + b.size if size is None else int(size)
    if min(len(wa), len(wb)) > FFT_MIN:
        # only the first n + 1 cells are kept, so trim the inputs first
        full = signal.fftconvolve(wa[: n + 1], wb[: n + 1])
        if not (a.signed or b.signed):
            np.maximum(full, 0.0, out=full)
    else:
        full = np.convolve(wa, wb)
    kept = full[: n + 1]
    if len(kept) < n + 1:
        kept = np.concatenate([kept, np.zeros(n + 1 - len(kept))])
    total = a.total * b.total
    overflow = total - math.fsum(kept)
    signed = a.signed or b.signed
    if not signed:
        overflow = max(overflow, 0.0)
    # the heavier extrapolation dominates a convolution tail
    ext = max((a, b), key=lambda g: (g.overflow > 0, g.extrapolation == "power",
                                     -g.extrapolation_param if g.extrapolation == "power" else 0))
    return GriddedMeasure(a.origin + b.origin, a.step, float(kept[0]), kept[1:],
                          float(overflow), signed, ext.extrapolation, ext.extrapolation_param)


def grid_power(g: GriddedMeasure, n: int, size: int | None = None) -> GriddedMeasure:
    """``g^{n*}`` on a lattice truncated to ``size`` cells (default ``g.size``)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    size = g.size if size is None else size
    out = GriddedMeasure(0.0, g.step, 1.0, np.zeros(size))
    for _ in range(n):
        out = convolve_grid(out, g, size)
    return out


# --------------------------------------------------------------------------------------
# quadrature backend


def _upper_gap(A, B, x, lo_a, lo_b, log_ta):
    """(1/tail_A(x) - 1) * B((max(x - lo_A, lo_B), x]), the part where tail_A(x-y) = 1."""
    if lo_a <= 0:
        return np.zeros_like(x)
    a = np.maximum(x - lo_a, lo_b)
    width = np.maximum(x - a, 0.0)
    mass = np.where(width > 0, np.asarray(B.local_mass(a, np.where(width > 0, width, 1.0))), 0.0)
    return np.expm1(-log_ta) * mass


def _excess_law(A, B: Law, x, rtol, atol=0.0):
    lo_a, lo_b = A.lower, B.lower
    log_ta = np.asarray(A.log_tail(x))
    hi = np.maximum(x - lo_a, lo_b)
    edges = graded_edges(np.full_like(x, lo_b), hi)

    def f(y, rows):
        xr = x[rows][:, None, None]
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.asarray(A.rise(xr, y)) * np.asarray(B.density(y))
        huge = ~np.isfinite(out)
        if np.any(huge):
            # rise overflowed: no cancellation left, so multiply in log space
            xb, yb = np.broadcast_arrays(xr, y)
            xh, yh = xb[huge], yb[huge]
            out[huge] = np.exp(np.asarray(A.log_tail(xh - yh)) - np.asarray(A.log_tail(xh))
                               + np.asarray(B.log_density(yh)))
        return out

    integral, err = panel_quad(f, edges, rtol=rtol, atol=atol)
    gap = _upper_gap(A, B, x, lo_a, lo_b, log_ta)
    r = -np.asarray(B.tail(x)) + integral + gap
    return r, err


def _overflow_density(g: GriddedMeasure, y):
    ov, p, e = g.overflow, g.extrapolation_param, g.edge
    if g.extrapolation == "power":
        return ov * p * np.exp(-(p + 1) * np.log1p(y) + p * math.log1p(e))
    return ov * p * y ** (p - 1) * np.exp(-(y**p - e**p))


def _excess_grid(A, g: GriddedMeasure, x, rtol, atol=0.0):
    pos = g.positions()
    w = g.weights()
    r = -np.asarray(g.tail(x))
    err = np.zeros_like(x)
    for i, xi in enumerate(x):
        keep = (pos <= xi) & (w != 0)
        if np.any(keep):
            r[i] += math.fsum(np.asarray(A.rise(xi, pos[keep])) * w[keep])
    if g.overflow:
        if g.extrapolation == "none":
            at = g.edge + g.step
            hit = x >= at
            if np.any(hit):
                r[hit] += g.overflow * np.asarray(A.rise(x[hit], at))
        else:
            beyond = x > g.edge
            if np.any(beyond):
                xb = x[beyond]
                edges = graded_edges(np.full_like(xb, g.edge), xb - A.lower)

                def f(y, rows):
                    return np.asarray(A.rise(xb[rows][:, None, None], y)) * _overflow_density(g, y)

                val, e = panel_quad(f, edges, rtol=rtol, atol=atol)
                r[beyond] += val
                err[beyond] += e
    return r, err


def excess_ratio(A, B, x, *, rtol: float = RTOL, atol: float = 0.0):
    """``(tail_{A*B}(x) - tail_A(x) - tail_B(x)) / tail_A(x)`` and its error estimate.

    ``A`` needs ``log_tail``, ``rise`` and ``lower``; ``B`` is a law with a
    density or a :class:`GriddedMeasure`.
    """
    x0 = np.asarray(x, dtype=float)
    xs = np.atleast_1d(x0).ravel()
    if np.any(xs < 0):
        raise ValueError("x must be nonnegative")
    if isinstance(B, (GriddedMeasure, AtomicLaw)):
        r, e = _excess_grid(A, B, xs, rtol, atol)
    else:
        r, e = _chunked(lambda c: _excess_law(A, B, c, rtol, atol), xs)
    if x0.ndim == 0:
        return float(r[0]), float(e[0])
    return r.reshape(x0.shape), e.reshape(x0.shape)


def tail_convolve(A, B, x, *, rtol: float = RTOL, return_error: bool = False):
    """Survival function of ``A * B`` at ``x``.

    Relative accuracy is governed by ``rtol`` (the quadrature tolerance on
    the excess integral) and holds deep into the tail because nothing is
    subtracted.  Raises :class:`QuadratureError` if refinement hits the
    panel cap.
    """
    # r enters as tail_A * (1 + r): absolute accuracy in r is all the sum needs
    r, e = excess_ratio(A, B, x, rtol=rtol, atol=rtol)
    ta = np.asarray(A.tail(x))
    tb = np.asarray(B.tail(x))
    val = ta + tb + ta * r
    err = ta * e + ta * getattr(A, "interp_error", 0.0)
    if np.ndim(x) == 0:
        val, err = float(val), float(err)
    return (val, err) if return_error else val


# --------------------------------------------------------------------------------------
# n-fold powers


class FoldTable:
    """Tabulated survival function of ``rho^{n*}`` (``n >= 2``).

    ``log tail`` is held as a quintic spline in ``v = log(x - lower)`` on an
    evenly spaced ``v`` grid; both the left end (``tail -> 1``) and the
    power/slowly varying right end are smooth in that variable.
    ``interp_error`` is the largest absolute log-tail discrepancy found at
    check points between nodes.
    """

    def __init__(self, n: int, lower: float, v: np.ndarray, log_tail: np.ndarray,
                 interp_error: float, mean: float, xmax: float):
        self.n = n
        self.lower = lower
        self.v = v
        self.values = log_tail
        self.spline = interpolate.make_interp_spline(v, log_tail, k=5)
        self.interp_error = interp_error
        self._mean = mean
        self.xmax = xmax

    def log_tail(self, x):
        x0 = np.asarray(x, dtype=float)
        if np.any(x0 > self.xmax * (1 + 1e-12)):
            raise ValueError(f"fold table built to {self.xmax:g}; requested {np.max(x0):g}")
        s = x0 - self.lower
        smin = math.exp(self.v[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = self.spline(np.log(np.maximum(s, smin)))
        out = np.where(s >= smin, inner, self.values[0] * np.maximum(s, 0.0) / smin)
        return float(out) if x0.ndim == 0 else out

    def tail(self, x):
        return np.exp(self.log_tail(x))

    def rise(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return np.expm1(self.log_tail(x - y) - self.log_tail(x))

    def drop(self, x, c):
        return -np.expm1(self.log_tail(np.asarray(x) + c) - self.log_tail(x))

    def local_mass(self, x, c):
        return self.tail(x) * self.drop(x, c)

    def mean(self) -> float:
        return self._mean


class Folds:
    """Memoized convolution powers of one law.

    ``tail(n, x)`` evaluates ``rho^{n*}`` at ``x`` as one quadrature step on
    top of the tabulated ``rho^{(n-1)*}`` (or exactly, for ``n <= 2``), so
    each query carries the error of a single table interpolation.
    Tables are built once per requested range and then only read; a lock
    serializes construction.
    """

    def __init__(self, law: Law, *, dv: float = 0.025, smin: float = 1e-7,
                 rtol: float = RTOL):
        self.law = law
        self.dv = dv
        self.smin = smin
        self.rtol = rtol
        self._tables: dict[int, FoldTable] = {}
        self._lock = threading.RLock()

    def base(self, n: int, xmax: float):
        """The law used as ``A`` when computing ``rho^{n*} = A * rho``."""
        if n == 2:
            return self.law
        return self.table(n - 1, xmax)

    def table(self, n: int, xmax: float) -> FoldTable:
        if n < 2:
            raise ValueError("tables exist for n >= 2")
        # round the range up to a power of two (idempotent): nearby queries such as
        # x + c then reuse the table, and a doubling costs only log(2)/dv more nodes
        xmax = 2.0 ** math.ceil(math.log2(max(xmax, 1.0)))
        t = self._tables.get(n)
        if t is not None and t.xmax >= xmax:
            return t
        with self._lock:
            t = self._tables.get(n)
            if t is not None and t.xmax >= xmax:
                return t
            # build all smaller tables to at least the same range
            lower_tab = None if n == 2 else self.table(n - 1, xmax)
            t = self._build(n, xmax, lower_tab)
            self._tables[n] = t
            return t

    def _build(self, n, xmax, prev):
        law = self.law
        A = law if prev is None else prev
        lower = n * law.lower
        smax = xmax - lower
        if smax <= self.smin:
            smax = 10 * self.smin
        # even steps, with the last node pinned at xmax so every level covers the same range
        top = math.log(smax)
        v = np.arange(math.log(self.smin), top, self.dv)
        if top - v[-1] < 0.25 * self.dv:
            v = v[:-1]
        v = np.append(v, top)
        x = lower + np.exp(v)
        r, re = excess_ratio(A, law, x, rtol=self.rtol, atol=self.rtol)
        ta = np.asarray(A.tail(x))
        with np.errstate(divide="ignore", invalid="ignore"):
            val = ta * (1.0 + r) + np.asarray(law.tail(x))
            lt = np.log(val)
            node_err = float(np.nanmax(np.where(val > 0, ta * re / val, 0.0)))
        lt = np.minimum(lt, 0.0)
        mean = n * law.mean()
        table = FoldTable(n, lower, v, lt, 0.0, mean, max(xmax, float(lower + np.exp(v[-1]))))
        # interpolation check at every 8th midpoint
        vm = 0.5 * (v[:-1] + v[1:])[::8]
        xm = lower + np.exp(vm)
        rm, _ = excess_ratio(A, law, xm, rtol=self.rtol, atol=self.rtol)
        with np.errstate(divide="ignore"):
            exact = np.log(np.asarray(A.tail(xm)) * (1.0 + rm) + np.asarray(law.tail(xm)))
        # sampled at a subset of midpoints, hence the safety factor
        table.interp_error = 4.0 * float(np.max(np.abs(table.log_tail(xm) - exact)))
        table.interp_error += node_err + getattr(prev, "interp_error", 0.0)
        return table

    def tail(self, n: int, x, *, return_error: bool = False):
        x0 = np.asarray(x, dtype=float)
        if n < 0:
            raise ValueError("n must be nonnegative")
        if n == 0:
            val, err = np.where(x0 < 0, 1.0, 0.0), np.zeros(x0.shape)
        elif n == 1:
            val, err = np.asarray(self.law.tail(x0)), np.zeros(x0.shape)
        else:
            xmax = float(np.max(x0)) if x0.size else 1.0
            xmax = max(xmax, n * self.law.lower + 1.0)
            A = self.base(n, xmax)
            val, err = tail_convolve(A, self.law, x0, rtol=self.rtol, return_error=True)
        if x0.ndim == 0:
            val, err = float(val), float(err)
        return (val, err) if return_error else val


def nfold_tail(law, n: int, x, *, folds: Folds | None = None, return_error: bool = False):
    """Survival function of ``law^{n*}``; ``n = 0`` is the point mass at 0."""
    if isinstance(law, GriddedMeasure):
        g = grid_power(law, n, law.size * max(n, 1))
        val = g.tail(x)
        return (val, 0.0 * np.asarray(val)) if return_error else val
    folds = folds if folds is not None else Folds(law)
    return folds.tail(n, x, return_error=return_error)


def compound_tail(w: CompoundWeights, jump, x, *, folds: Folds | None = None,
                  return_error: bool = False, size: int | None = None):
    """``sum_n p_n tail(jump^{n*})(x)``; signed when the weights are."""
    x0 = np.asarray(x, dtype=float)
    total = np.zeros(x0.shape)
    err = np.zeros(x0.shape)
    if isinstance(jump, GriddedMeasure):
        if jump.origin != 0:
            raise ValueError("gridded jump laws must start at the origin")
        # the lattice must reach past every requested x
        reach = int(math.ceil(float(np.max(x0, initial=0.0)) / jump.step)) + 2
        size = max(size or jump.size * 4, reach)
        g = GriddedMeasure(0.0, jump.step, 1.0, np.zeros(size))
        for n, pn in enumerate(w.p):
            if n:
                g = convolve_grid(g, jump, size)
            total = total + pn * np.asarray(g.tail(x0))
    else:
        folds = folds if folds is not None else Folds(jump)
        terms = []
        for n, pn in enumerate(w.p):
            if pn == 0:
                continue
            v, e = folds.tail(n, x0, return_error=True)
            terms.append(pn * np.asarray(v))
            err = err + abs(pn) * np.asarray(e)
        total = np.sum(terms, axis=0) if terms else total
    # terms beyond M: mass w.dropped, each fold tail bounded by min(1, n * tail)
    tj = np.asarray(jump.tail(np.maximum(x0, 0.0)))
    err = err + w.dropped * np.minimum(1.0, 2.0 * (w.M + 1) * tj)
    if x0.ndim == 0:
        total, err = float(total), float(err)
    return (total, err) if return_error else total
