"""Compound Poisson laws built from truncated Levy measures, and their inversion.

Only the big-jump part of a Levy measure is modelled: mass ``delta`` above
a cutoff ``c`` with normalized jump law ``nu_(c)``.  The compound Poisson
law ``e^{-delta} sum delta^n/n! nu_(c)^{n*}`` has an atom ``e^{-delta}`` at 0.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .conv import (CompoundWeights, Folds, compound_tail, convolve_grid,
                   poisson_weights)
from .laws import GriddedMeasure, Law, Restricted, discretize, parse_law

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


class InversionError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LevySpec:
    """Levy measure restricted to ``(cutoff, inf)``: ``delta * jump``."""

    cutoff: float
    delta: float
    jump: Law | GriddedMeasure

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        j = self.jump
        if isinstance(j, GriddedMeasure):
            if abs(j.total - 1.0) > 1e-12:
                raise ValueError(f"jump law has mass {j.total!r}, expected 1")
            pos, w = j.positions(), j.weights()
            if np.any(w[pos <= self.cutoff * (1 + 1e-12)] != 0):
                raise ValueError("jump law must put no mass on [0, cutoff]")
        elif j.lower < self.cutoff:
            object.__setattr__(self, "jump", Restricted(j, self.cutoff))

    # Levy measure nu restricted to (cutoff, inf)
    def tail(self, x):
        return self.delta * np.asarray(self.jump.tail(x))

    def local_mass(self, x, c):
        return self.delta * np.asarray(self.jump.local_mass(x, c))

    def density(self, x):
        return self.delta * np.asarray(self.jump.density(x))

    def integrated_tail(self, a: float, x):
        """``int_a^x nu((u, inf)) du`` for the truncated measure."""
        from .quad import graded_edges, panel_quad

        x = np.atleast_1d(np.asarray(x, float))
        lo = np.full_like(x, a)
        edges = graded_edges(np.log(lo), np.log(x))

        def f(v, rows):
            u = np.exp(v)
            return np.where(u < self.cutoff, self.delta, self.tail(u)) * u

        val, _ = panel_quad(f, edges, rtol=1e-12)
        return val

    def jump_mean(self) -> float:
        return self.jump.mean()

    def to_dict(self) -> dict:
        j = self.jump
        if isinstance(j, GriddedMeasure):
            jd: object = j.to_dict()
        else:
            spec = j.to_spec()
            # restriction to the cutoff is implied by the Levy data itself
            suffix = f"|cut={self.cutoff!r}"
            jd = spec[: -len(suffix)] if spec.endswith(suffix) else spec
        return {"cutoff": self.cutoff, "delta": self.delta, "jump": jd}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "LevySpec":
        j = d["jump"]
        jump = GriddedMeasure.from_dict(j) if isinstance(j, dict) else parse_law(j)
        return cls(float(d["cutoff"]), float(d["delta"]), jump)

    @classmethod
    def from_json(cls, text: str) -> "LevySpec":
        return cls.from_dict(json.loads(text))


class CompoundPoissonLaw:
    """``mu_1 = e^{-delta} sum_n delta^n/n! nu_(c)^{n*}``.

    Tail values come from :func:`conv.compound_tail`; fold tables of the jump
    law are shared with every :meth:`power` of this law.
    """

    lower = 0.0

    def __init__(self, spec: LevySpec, *, budget: float = 1e-14, folds: Folds | None = None,
                 grid_size: int | None = None):
        self.spec = spec
        self.budget = budget
        self.weights: CompoundWeights = poisson_weights(spec.delta, budget)
        self.grid_size = grid_size
        if isinstance(spec.jump, GriddedMeasure):
            self.folds = None
            self._jump = jump_grid(spec, spec.jump.step, 0)  # rebased to origin 0
        else:
            self.folds = folds if folds is not None else Folds(spec.jump)
            self._jump = spec.jump

    @property
    def atom(self) -> float:
        return math.exp(-self.spec.delta)

    def tail(self, x, *, return_error: bool = False):
        x0 = np.asarray(x, dtype=float)
        val, err = compound_tail(self.weights, self._jump, np.maximum(x0, 0.0),
                                 folds=self.folds, return_error=True, size=self.grid_size)
        val = np.where(x0 < 0, 1.0, val)
        if x0.ndim == 0:
            val, err = float(val), float(err)
        return (val, err) if return_error else val

    def log_tail(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.tail(x))

    def local_mass(self, x, c):
        x = np.asarray(x, dtype=float)
        t = self.tail(np.concatenate([np.atleast_1d(x).ravel(), np.atleast_1d(x + c).ravel()]))
        n = np.size(x)
        out = t[:n] - t[n:]
        return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)

    def drop(self, x, c):
        return np.asarray(self.local_mass(x, c)) / np.asarray(self.tail(x))

    def rise(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return np.asarray(self.tail(x - y)) / np.asarray(self.tail(x)) - 1.0

    def mean(self) -> float:
        return self.spec.delta * self.spec.jump_mean()

    def power(self, t: float) -> "CompoundPoissonLaw":
        return power(self, t)


def compound_poisson(spec: LevySpec, **kw) -> CompoundPoissonLaw:
    return CompoundPoissonLaw(spec, **kw)


def power(law: CompoundPoissonLaw, t: float) -> CompoundPoissonLaw:
    """``mu^{t*}``: same jump law, intensity ``t * delta``."""
    if not t > 0:
        raise ValueError("t must be positive")
    s = law.spec
    return CompoundPoissonLaw(LevySpec(s.cutoff, t * s.delta, s.jump), budget=law.budget,
                              folds=law.folds, grid_size=law.grid_size)


def jump_grid(spec: LevySpec, step: float = 0.01, size: int = 4000) -> GriddedMeasure:
    """The jump law on a lattice with origin 0 (analytic laws are discretized)."""
    j = spec.jump
    if isinstance(j, GriddedMeasure):
        k = round(j.origin / j.step)
        if abs(k * j.step - j.origin) > 1e-12 * max(1.0, j.origin):
            raise ValueError("grid origin must be a multiple of its step")
        w = np.concatenate([np.zeros(k), j.weights()])
        if j.overflow == 0 and len(w) < size + 1:
            # room for the convolution powers
            w = np.concatenate([w, np.zeros(size + 1 - len(w))])
        return GriddedMeasure(0.0, j.step, float(w[0]), w[1:], j.overflow, j.signed,
                              j.extrapolation, j.extrapolation_param)
    return discretize(j, 0.0, step, size)


def sigma_from_spec(spec: LevySpec, *, step: float = 0.01, size: int = 4000,
                    budget: float = 1e-14) -> GriddedMeasure:
    """``sigma = e^{-delta}/(1 - e^{-delta}) sum_{n>=1} delta^n/n! nu_(c)^{n*}`` on a lattice."""
    g = jump_grid(spec, step, size)
    size = g.size
    w = poisson_weights(spec.delta, budget)
    scale = 1.0 / -math.expm1(-spec.delta)
    acc_w = np.zeros(size + 1)
    acc_ov = 0.0
    pw = GriddedMeasure(0.0, g.step, 1.0, np.zeros(size))
    for n in range(1, w.M + 1):
        pw = convolve_grid(pw, g, size)
        acc_w += w.p[n] * scale * pw.weights()
        acc_ov += w.p[n] * scale * pw.overflow
    out = GriddedMeasure(0.0, g.step, float(acc_w[0]), acc_w[1:], acc_ov,
                         extrapolation=g.extrapolation, extrapolation_param=g.extrapolation_param)
    if abs(out.total - 1.0) > max(1e-12, w.dropped * scale * 10):
        raise ArithmeticError(f"sigma mass {out.total!r} misses 1 by more than the truncation budget")
    return out


@dataclass
class InversionReport:
    terms: int
    dropped: float
    negative_mass: float
    clamped_cells: int


def invert_levy(sigma: GriddedMeasure, delta: float, *, budget: float = 1e-14,
                clamp: float = 1e-10, return_report: bool = False):
    """Recover ``nu_(c) = -(1/delta) sum_{n>=1} (1 - e^delta)^n / n * sigma^{n*}``.

    Needs ``0 < e^delta - 1 < 1``.  Negative cells of magnitude below ``clamp``
    (truncation noise) are zeroed; anything more negative raises
    :class:`InversionError`.
    """
    if not 0 < delta < LN2:
        raise ValueError(f"delta={delta!r} violates 0 < e^delta - 1 < 1 (delta < ln 2)")
    q = -math.expm1(delta)
    a = abs(q)
    # first M with |q|^M / (M delta (1 - |q|)) below budget
    M = 1
    while a**M / (M * delta * (1 - a)) > budget:
        M += 1
    size = sigma.size
    acc = np.zeros(size + 1)
    acc_ov = 0.0
    pw = GriddedMeasure(0.0, sigma.step, 1.0, np.zeros(size), signed=True)
    for n in range(1, M + 1):
        pw = convolve_grid(pw, sigma, size)
        c = -(q**n) / (n * delta)
        acc += c * pw.weights()
        acc_ov += c * pw.overflow
    neg = acc < 0
    negative_mass = float(-acc[neg].sum())
    if np.any(acc < -clamp):
        raise InversionError(f"recovered measure has negative cells down to {acc.min():.3e}")
    if acc_ov < -clamp:
        raise InversionError(f"recovered measure has negative mass {acc_ov:.3e} past the grid")
    clamped = int(neg.sum())
    if clamped:
        log.info("clamped %d negative cells (mass %.3e)", clamped, negative_mass)
    acc[neg] = 0.0
    if -clamp <= acc_ov < 0:
        acc_ov = 0.0
    out = GriddedMeasure(0.0, sigma.step, float(acc[0]), acc[1:], float(acc_ov),
                         extrapolation=sigma.extrapolation,
                         extrapolation_param=sigma.extrapolation_param)
    if return_report:
        return out, InversionReport(M, a ** (M + 1) / ((M + 1) * delta * (1 - a)),
                                    negative_mass, clamped)
    return out


def laplace(measure, t: float, *, reading: str = "midpoint") -> tuple[float, float]:
    """``int e^{-t x} measure(dx)`` and an error bound.

    Grid cells are read at their midpoints (``reading="midpoint"``, right for
    discretized continuous laws; bound ``expm1(t*step/2) * |cells|``) or at
    their lattice points (``reading="lattice"``, exact for atoms; bound 0).
    The overflow is placed just past the edge and its full size
    ``|overflow| e^{-t*edge}`` is added to the bound.  Analytic laws use
    adaptive quadrature; compound Poisson laws use
    ``exp(-delta (1 - L_jump(t)))``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if isinstance(measure, GriddedMeasure):
        if reading not in ("midpoint", "lattice"):
            raise ValueError(f"unknown reading {reading!r}")
        w = measure.masses
        pos = measure.positions()[1:]
        if reading == "midpoint":
            pos = pos - 0.5 * measure.step
        cells = math.fsum(w * np.exp(-t * pos))
        atom = measure.atom * math.exp(-t * measure.origin)
        ov, edge = measure.overflow, measure.edge
        val = atom + cells + ov * math.exp(-t * (edge + measure.step))
        err = abs(ov) * math.exp(-t * edge)
        if reading == "midpoint":
            err += math.expm1(0.5 * t * measure.step) * math.fsum(np.abs(w) * np.exp(-t * pos))
        return val, err
    if isinstance(measure, CompoundPoissonLaw):
        lj, ej = laplace(measure.spec.jump, t, reading=reading)
        d = measure.spec.delta
        val = math.exp(-d * (1.0 - lj))
        return val, val * d * ej
    if t == 0:
        return 1.0, 0.0
    lo = measure.lower
    scale = 1.0 / t

    def f(x):
        return math.exp(-t * x) * float(measure.density(x))

    pieces = [lo, lo + scale * 1e-6, lo + scale * 1e-3, lo + scale, lo + 10 * scale,
              lo + 100 * scale]
    val = err = 0.0
    for a, b in zip(pieces[:-1], pieces[1:]):
        v, e = integrate.quad(f, a, b, epsabs=0, epsrel=1e-13, limit=400)
        val += v
        err += e
    v, e = integrate.quad(f, pieces[-1], np.inf, epsabs=0, epsrel=1e-13, limit=400)
    # mass in [lo, lo + scale*1e-6] is counted above; nothing sits at lo itself
    return val + v, err + e
