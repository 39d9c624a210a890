"""Probability laws on the half line, analytic and gridded.

Every law exposes the same small surface used by the convolution and
diagnostic code:

``tail(x)``, ``log_tail(x)``
    survival function ``P(X > x)`` and its logarithm.
``density(x)``, ``log_density(x)``
    Lebesgue density (analytic laws only).
``local_mass(x, c)``
    ``P(x < X <= x + c)``.
``drop(x, c)``
    ``local_mass(x, c) / tail(x)``, computed without forming either factor.
``rise(x, y)``
    ``tail(x - y) / tail(x) - 1`` for ``0 <= y``; the integrand of the
    cancellation-free two-fold identity.
``mean()``
    finite mean or ``math.inf``.

Tails are always evaluated from closed forms (never by integrating a
density) so that relative accuracy survives deep in the tail.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

UNDERFLOW = 1e-300

_GL_T, _GL_W = np.polynomial.legendre.leggauss(24)


def _arr(x):
    return np.asarray(x, dtype=float)


def _out(x, value):
    return float(value) if np.ndim(x) == 0 else value


class Law:
    """Base class for absolutely continuous laws on ``[lower, inf)``."""

    lower: float = 0.0

    # --- subclasses provide these ------------------------------------------------
    def _log_tail(self, x: np.ndarray) -> np.ndarray:  # x >= lower
        raise NotImplementedError

    def _log_density(self, x: np.ndarray) -> np.ndarray:  # x > lower
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    # optional closed form of log tail(x + c) - log tail(x), for x >= lower
    def _log_increment(self, x: np.ndarray, c: np.ndarray):
        return None

    # --- generic surface -----------------------------------------------------------
    def log_tail(self, x):
        x = _arr(x)
        lo = self.lower
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(x > lo, self._log_tail(np.maximum(x, lo)), 0.0)
        return _out(x, out)

    def tail(self, x):
        return _out(x, np.exp(self.log_tail(x)))

    def log_density(self, x):
        x = _arr(x)
        lo = self.lower
        safe = np.where(x > lo, x, lo + 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(x > lo, self._log_density(safe), -np.inf)
        return _out(x, out)

    def density(self, x):
        return _out(x, np.exp(self.log_density(x)))

    def log_ratio(self, x, c):
        """``log tail(x + c) - log tail(x)`` for ``c >= 0``, free of cancellation."""
        shape = np.broadcast(_arr(x), _arr(c)).shape
        x, c = (np.ravel(a).astype(float) for a in np.broadcast_arrays(_arr(x), _arr(c)))
        xs = np.maximum(x, self.lower)
        cs = np.maximum(c - (xs - x), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            inc = self._log_increment(xs, cs)
            if inc is None:
                inc = self._generic_increment(xs, cs)
            out = np.array(np.broadcast_to(inc, x.shape), dtype=float)
        # below the support the tail is 1
        low = x < self.lower
        if np.any(low):
            out = np.where(low, self.log_tail(x + c), out)
        return float(out[0]) if shape == () else out.reshape(shape)

    def drop(self, x, c):
        """``P(x < X <= x + c) / P(X > x)`` for ``c > 0``."""
        return -np.expm1(self.log_ratio(x, c))

    def local_mass(self, x, c):
        """``P(x < X <= x + c)``; values below ``UNDERFLOW`` are returned as-is."""
        x = _arr(x)
        return _out(x, np.asarray(self.drop(x, c)) * np.asarray(self.tail(x)))

    def rise(self, x, y):
        """``tail(x - y) / tail(x) - 1`` for ``0 <= y <= x``."""
        x, y = np.broadcast_arrays(_arr(x), _arr(y))
        with np.errstate(over="ignore"):
            return _out(x, np.expm1(-np.asarray(self.log_ratio(x - y, y))))

    def _generic_increment(self, x, c):
        """log tail(x+c) - log tail(x) with a quadrature fallback for short steps."""
        lt0 = self._log_tail(np.maximum(x, self.lower))
        lt1 = self._log_tail(x + c)
        inc = np.asarray(lt1 - lt0, dtype=float)
        # short intervals well inside the support: integrate the density
        short = (c <= 0.5 * (x - self.lower)) & (inc > -0.5)
        if np.any(short):
            xs, cs = x[short], c[short]
            nodes = xs[:, None] + 0.5 * cs[:, None] * (_GL_T + 1.0)
            lp = self._log_density(nodes) - lt0[short][:, None]
            frac = 0.5 * cs * np.sum(np.exp(lp) * _GL_W, axis=1)
            inc[short] = np.log1p(-frac)
        return inc

    def to_spec(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class AnalyticLaw(Law):
    """Closed-form heavy-tailed law on ``[0, inf)``.

    ``family`` is one of ``lognormal`` (standard), ``weibull`` (tail
    ``exp(-x**beta)``, ``0 < beta < 1`` for the heavy-tailed case),
    ``pareto`` (tail ``(1 + x)**-alpha``) or ``exponential`` (rate ``lam``;
    a light-tailed negative control).
    """

    family: str
    param: float = 1.0
    lower: float = field(default=0.0, init=False)

    def __post_init__(self):
        if self.family not in ("lognormal", "weibull", "pareto", "exponential"):
            raise ValueError(f"unknown family {self.family!r}")
        if not self.param > 0:
            raise ValueError("parameter must be positive")
        if self.family == "weibull" and self.param > 1:
            raise ValueError("weibull beta must lie in (0, 1]")

    def _log_tail(self, x):
        p = self.param
        if self.family == "lognormal":
            with np.errstate(divide="ignore"):
                return special.log_ndtr(-np.log(x))
        if self.family == "weibull":
            return -(x**p)
        if self.family == "pareto":
            return -p * np.log1p(x)
        return -p * x

    def _log_density(self, x):
        p = self.param
        if self.family == "lognormal":
            lx = np.log(x)
            return -0.5 * lx * lx - lx - 0.5 * math.log(2 * math.pi)
        if self.family == "weibull":
            return math.log(p) + (p - 1) * np.log(x) - x**p
        if self.family == "pareto":
            return math.log(p) - (p + 1) * np.log1p(x)
        return math.log(p) - p * x

    def density(self, x):
        x = _arr(x)
        if np.any(x < 0):
            raise ValueError("density is defined on x >= 0")
        if np.any(x == 0):
            if self.family == "weibull" and self.param < 1:
                raise ValueError("weibull density is unbounded at 0")
            at0 = {"lognormal": 0.0, "weibull": 1.0, "pareto": self.param,
                   "exponential": self.param}[self.family]
            with np.errstate(divide="ignore"):
                val = np.exp(self._log_density(np.where(x == 0, 1.0, x)))
            return _out(x, np.where(x == 0, at0, val))
        return _out(x, np.exp(self._log_density(x)))

    def _log_increment(self, x, c):
        p = self.param
        if self.family == "weibull":
            with np.errstate(divide="ignore", invalid="ignore"):
                inc = -(x**p) * np.expm1(p * np.log1p(c / x))
            return np.where(x > 0, inc, -(c**p))
        if self.family == "pareto":
            return -p * np.log1p(c / (1.0 + x))
        if self.family == "exponential":
            return -p * c
        return None

    def rise(self, x, y):
        x, y = np.broadcast_arrays(_arr(x), _arr(y))
        p = self.param
        if self.family == "pareto":
            return _out(x, np.expm1(-p * np.log1p(-y / (1.0 + x))))
        if self.family == "exponential":
            return _out(x, np.expm1(p * y))
        if self.family == "weibull":
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.expm1(-(x**p) * np.expm1(p * np.log1p(-y / x)))
            return _out(x, np.where(y >= x, np.expm1(x**p), r))
        return Law.rise(self, x, y)

    def mean(self) -> float:
        p = self.param
        if self.family == "lognormal":
            return math.exp(0.5)
        if self.family == "weibull":
            return math.gamma(1.0 + 1.0 / p)
        if self.family == "pareto":
            return 1.0 / (p - 1.0) if p > 1 else math.inf
        return 1.0 / p

    def to_spec(self) -> str:
        key = {"weibull": "weibull:beta", "pareto": "pareto:alpha",
               "exponential": "exp:rate"}.get(self.family)
        return self.family if key is None else f"{key}={self.param!r}"


def lognormal() -> AnalyticLaw:
    return AnalyticLaw("lognormal")


def weibull(beta: float) -> AnalyticLaw:
    return AnalyticLaw("weibull", beta)


def pareto(alpha: float) -> AnalyticLaw:
    return AnalyticLaw("pareto", alpha)


def exponential(rate: float = 1.0) -> AnalyticLaw:
    return AnalyticLaw("exponential", rate)


@dataclass(frozen=True)
class PowerTail(Law):
    """Classical Pareto law: tail ``(x / scale)**-alpha`` on ``[scale, inf)``.

    Used as a normalized Levy jump law, e.g. ``PowerTail(2.0)`` has
    ``nu_(1)((x, inf)) = x**-2``.
    """

    alpha: float
    scale: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.scale > 0):
            raise ValueError("alpha and scale must be positive")

    @property
    def lower(self) -> float:  # type: ignore[override]
        return self.scale

    def _log_tail(self, x):
        return -self.alpha * np.log(x / self.scale)

    def _log_density(self, x):
        a = self.alpha
        return math.log(a / self.scale) - (a + 1) * np.log(x / self.scale)

    def _log_increment(self, x, c):
        return -self.alpha * np.log1p(c / x)

    def rise(self, x, y):
        x, y = np.broadcast_arrays(_arr(x), _arr(y))
        r = np.expm1(-self.alpha * np.log1p(-np.minimum(y, x - self.scale) / x))
        return _out(x, r)

    def mean(self) -> float:
        a = self.alpha
        return a * self.scale / (a - 1) if a > 1 else math.inf

    def to_spec(self) -> str:
        return f"pareto1:alpha={self.alpha!r},scale={self.scale!r}"


@dataclass(frozen=True)
class LogTail(Law):
    """Slowly varying law: tail ``1 / log(x)`` on ``[e, inf)``.

    Its density ``1 / (x log(x)**2)`` is regularly varying of index -1 with
    slowly varying factor ``(log x)**-2``; the mean is infinite.
    """

    @property
    def lower(self) -> float:  # type: ignore[override]
        return math.e

    def _log_tail(self, x):
        return -np.log(np.log(x))

    def _log_density(self, x):
        lx = np.log(x)
        return -lx - 2.0 * np.log(lx)

    def _log_increment(self, x, c):
        return -np.log1p(np.log1p(c / x) / np.log(x))

    def rise(self, x, y):
        x, y = np.broadcast_arrays(_arr(x), _arr(y))
        z = np.maximum(x - y, math.e)
        return _out(x, np.log(x / z) / np.log(z))

    def mean(self) -> float:
        return math.inf

    def to_spec(self) -> str:
        return "logtail"


@dataclass(frozen=True)
class Restricted(Law):
    """``base`` conditioned on ``(cutoff, inf)``."""

    base: Law
    cutoff: float

    def __post_init__(self):
        if not self.base.tail(self.cutoff) > 0:
            raise ValueError("base law has no mass above the cutoff")

    @property
    def lower(self) -> float:  # type: ignore[override]
        return max(self.cutoff, self.base.lower)

    def _log_tail(self, x):
        return self.base._log_tail(x) - self.base.log_tail(self.lower)

    def _log_density(self, x):
        return self.base._log_density(x) - self.base.log_tail(self.lower)

    def _log_increment(self, x, c):
        return self.base._log_increment(x, c)

    def rise(self, x, y):
        x, y = np.broadcast_arrays(_arr(x), _arr(y))
        return self.base.rise(x, np.minimum(y, x - self.lower))

    def mean(self) -> float:
        from scipy import integrate

        m = self.base.mean()
        if not math.isfinite(m):
            return math.inf
        lo = self.lower
        val, _ = integrate.quad(lambda u: float(self.tail(u)), lo, np.inf,
                                epsabs=0, epsrel=1e-12, limit=400)
        return lo + val

    def to_spec(self) -> str:
        return f"{self.base.to_spec()}|cut={self.cutoff!r}"


# --------------------------------------------------------------------------------------
# gridded measures

EXTRAPOLATIONS = ("none", "power", "stretched")


@dataclass(frozen=True)
class GriddedMeasure:
    """Lattice measure on ``origin + k*step``.

    ``atom`` sits at ``origin``; ``masses[i]`` is the mass of the cell
    ``(origin + i*step, origin + (i+1)*step]`` and is located at its right
    endpoint, which makes lattice convolution exact.  ``overflow`` is the
    mass beyond ``origin + N*step``; its shape is described by
    ``extrapolation`` (``none``: an atom just past the edge, ``power``:
    ``(1 + x)**-p``, ``stretched``: ``exp(-x**p)``) with parameter
    ``extrapolation_param``.
    """

    origin: float
    step: float
    atom: float
    masses: np.ndarray
    overflow: float = 0.0
    signed: bool = False
    extrapolation: str = "none"
    extrapolation_param: float = 0.0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.origin < 0:
            raise ValueError("origin must be nonnegative")
        if self.extrapolation not in EXTRAPOLATIONS:
            raise ValueError(f"unknown extrapolation {self.extrapolation!r}")
        m = np.asarray(self.masses, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)
        if not self.signed and (self.atom < 0 or self.overflow < 0 or np.any(m < 0)):
            raise ValueError("negative mass in an unsigned measure")

    @property
    def size(self) -> int:
        return len(self.masses)

    @property
    def edge(self) -> float:
        return self.origin + self.size * self.step

    @property
    def total(self) -> float:
        return float(self.atom + math.fsum(self.masses) + self.overflow)

    def positions(self) -> np.ndarray:
        """Lattice locations of ``[atom, masses...]``."""
        return self.origin + self.step * np.arange(self.size + 1)

    def weights(self) -> np.ndarray:
        return np.concatenate([[self.atom], self.masses])

    def node_tails(self) -> np.ndarray:
        """Survival ``mass((origin + k*step, inf))`` for ``k = 0..N``."""
        s = np.concatenate([np.cumsum(self.masses[::-1])[::-1], [0.0]])
        return s + self.overflow

    def _beyond(self, x):
        ov, p, e = self.overflow, self.extrapolation_param, self.edge
        if self.extrapolation == "power":
            return ov * np.exp(-p * (np.log1p(x) - math.log1p(e)))
        if self.extrapolation == "stretched":
            return ov * np.exp(-(x**p - e**p))
        return np.where(x < e + self.step, ov, 0.0) * 1.0

    def tail(self, x):
        """Survival function; linear between nodes (cell-uniform reading)."""
        x = _arr(x)
        nodes = self.node_tails()
        k = (x - self.origin) / self.step
        inside = np.interp(k, np.arange(self.size + 1), nodes)
        out = np.where(x < self.origin, self.total, inside)
        out = np.where(x > self.edge, self._beyond(np.maximum(x, self.edge)), out)
        return _out(x, out)

    def local_mass(self, x, c):
        x = _arr(x)
        return _out(x, np.asarray(self.tail(x)) - np.asarray(self.tail(x + c)))

    def drop(self, x, c):
        x = _arr(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return _out(x, np.asarray(self.local_mass(x, c)) / np.asarray(self.tail(x)))

    def rise(self, x, y):
        x, y = np.broadcast_arrays(_arr(x), _arr(y))
        with np.errstate(divide="ignore", invalid="ignore"):
            return _out(x, np.asarray(self.tail(x - y)) / np.asarray(self.tail(x)) - 1.0)

    def log_tail(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.tail(x))

    def mean(self) -> float:
        if self.overflow > 0 and self.extrapolation == "power" and self.extrapolation_param <= 1:
            return math.inf
        body = float(np.dot(self.positions(), self.weights()))
        return body + self.overflow * (self.edge + self.step)

    @property
    def lower(self) -> float:
        return self.origin

    def to_dict(self) -> dict:
        return {"origin": self.origin, "step": self.step, "atom": self.atom,
                "masses": [float(v) for v in self.masses], "overflow": self.overflow,
                "signed": self.signed,
                "extrapolation": {"kind": self.extrapolation,
                                  "param": self.extrapolation_param}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "GriddedMeasure":
        ext = d.get("extrapolation", "none")
        if isinstance(ext, dict):
            kind, param = ext.get("kind", "none"), float(ext.get("param", 0.0))
        else:
            kind, param = ext, float(d.get("extrapolation_param", 0.0))
        return cls(origin=float(d["origin"]), step=float(d["step"]),
                   atom=float(d.get("atom", 0.0)), masses=np.asarray(d["masses"], float),
                   overflow=float(d.get("overflow", 0.0)), signed=bool(d.get("signed", False)),
                   extrapolation=kind, extrapolation_param=param)

    @classmethod
    def from_json(cls, text: str) -> "GriddedMeasure":
        return cls.from_dict(json.loads(text))


def point_mass(at: float, step: float = 1.0) -> GriddedMeasure:
    """Unit atom at ``at`` (which must be a multiple of ``step``)."""
    k = round(at / step)
    if not math.isclose(k * step, at, rel_tol=0, abs_tol=1e-12 * max(1.0, at)):
        raise ValueError("point mass must sit on the lattice")
    if k == 0:
        return GriddedMeasure(0.0, step, 1.0, np.zeros(1))
    m = np.zeros(k)
    m[-1] = 1.0
    return GriddedMeasure(0.0, step, 0.0, m)


@dataclass(frozen=True)
class AtomicLaw:
    """Finite mixture of point masses, read exactly (step-function tail)."""

    at: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        at = np.asarray(self.at, dtype=float)
        w = np.asarray(self.mass, dtype=float)
        if at.shape != w.shape or at.ndim != 1 or not at.size:
            raise ValueError("need matching 1-d arrays of locations and masses")
        if np.any(at < 0) or np.any(w < 0):
            raise ValueError("locations and masses must be nonnegative")
        order = np.argsort(at, kind="stable")
        at, w = at[order], w[order] / math.fsum(w)
        for a in (at, w):
            a.setflags(write=False)
        object.__setattr__(self, "at", at)
        object.__setattr__(self, "mass", w)

    lower = 0.0
    overflow = 0.0
    extrapolation = "none"

    def positions(self) -> np.ndarray:
        return self.at

    def weights(self) -> np.ndarray:
        return self.mass

    def tail(self, x):
        x = _arr(x)
        # suffix sums: mass strictly beyond x
        suffix = np.concatenate([np.cumsum(self.mass[::-1])[::-1], [0.0]])
        return _out(x, suffix[np.searchsorted(self.at, x, side="right")])

    def log_tail(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.tail(x))

    def local_mass(self, x, c):
        x = _arr(x)
        cum = np.concatenate([[0.0], np.cumsum(self.mass)])
        hi = np.searchsorted(self.at, x + c, side="right")
        lo = np.searchsorted(self.at, x, side="right")
        return _out(x, cum[hi] - cum[lo])

    def drop(self, x, c):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.asarray(self.local_mass(x, c)) / np.asarray(self.tail(x))

    def rise(self, x, y):
        x, y = np.broadcast_arrays(_arr(x), _arr(y))
        with np.errstate(divide="ignore", invalid="ignore"):
            return _out(x, np.asarray(self.tail(x - y)) / np.asarray(self.tail(x)) - 1.0)

    def mean(self) -> float:
        return float(math.fsum(self.at * self.mass))


def discretize(law: Law, origin: float, step: float, n: int) -> GriddedMeasure:
    """Cell-exact discretization: ``m_i = tail(x_i) - tail(x_{i+1})``."""
    if not step > 0 or n < 1:
        raise ValueError("need step > 0 and n >= 1")
    edges = origin + step * np.arange(n + 1)
    tails = np.asarray(law.tail(edges))
    masses = np.asarray(law.local_mass(edges[:-1], step))
    # local_mass is the accurate difference; the atom and overflow close the budget
    atom = float(-np.expm1(law.log_tail(origin)))
    overflow = float(tails[-1])
    kind, param = "none", 0.0
    if isinstance(law, AnalyticLaw):
        if law.family == "pareto":
            kind, param = "power", law.param
        elif law.family == "weibull":
            kind, param = "stretched", law.param
        elif law.family == "exponential":
            kind, param = "none", 0.0
    return GriddedMeasure(origin, step, atom, masses, overflow, extrapolation=kind,
                          extrapolation_param=param)


# --------------------------------------------------------------------------------------
# spec strings


def parse_law(text: str) -> Law:
    """Parse ``pareto:alpha=2``, ``weibull:beta=0.5``, ``lognormal``, ``exp:rate=1``.

    Also accepted: ``pareto1:alpha=2[,scale=1]`` (classical Pareto) and
    ``logtail`` (tail ``1/log x`` on ``[e, inf)``).  A ``|cut=<c>`` suffix
    restricts the law to ``(c, inf)``.
    """
    text = text.strip()
    cut = None
    if "|" in text:
        text, _, rest = text.partition("|")
        key, _, val = rest.partition("=")
        if key.strip() != "cut":
            raise ValueError(f"unknown law modifier {rest!r}")
        cut = float(val)
    name, _, args = text.partition(":")
    kw = {}
    for part in filter(None, (a.strip() for a in args.split(","))):
        k, sep, v = part.partition("=")
        if not sep:
            raise ValueError(f"malformed parameter {part!r}")
        kw[k.strip()] = float(v)

    def need(*keys):
        extra = set(kw) - set(keys)
        if extra:
            raise ValueError(f"unexpected parameters {sorted(extra)} for {name}")

    name = name.strip().lower()
    if name == "lognormal":
        need()
        law: Law = lognormal()
    elif name == "weibull":
        need("beta")
        law = weibull(kw["beta"])
    elif name == "pareto":
        need("alpha")
        law = pareto(kw["alpha"])
    elif name in ("exp", "exponential"):
        need("rate")
        law = exponential(kw.get("rate", 1.0))
    elif name == "pareto1":
        need("alpha", "scale")
        law = PowerTail(kw["alpha"], kw.get("scale", 1.0))
    elif name == "logtail":
        need()
        law = LogTail()
    else:
        raise ValueError(f"unknown distribution {name!r}")
    return Restricted(law, cut) if cut is not None else law
