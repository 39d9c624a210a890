"""Class-membership diagnostics.

Each check samples a defining ratio or residual on an increasing x-grid,
attaches a numerical error estimate per sample, and renders a verdict
against the limit the theory predicts.  All ratios are formed from
``log_tail``, ``drop`` and the excess ratio of :mod:`subexp2.conv`, so no
check underflows even where tails are far below 1e-300.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import asym
from .asym import PreconditionError, RegimeError
from .conv import Folds, excess_ratio
from .infdiv import CompoundPoissonLaw, LevySpec, compound_poisson, power
from .laws import AnalyticLaw, Law, LogTail, PowerTail, Restricted, parse_law
from .quad import graded_edges, panel_quad

DEFAULT_TOL = 0.05
# "failed" needs the residual to be bounded away from the target and to show
# no real movement toward it: last-third / first-third median ratio at least
# this large.  Pareto(1.05) on S2loc over [10, 1e3] has a trend near 0.9.
FAIL_TREND = 0.95
EPS = np.finfo(float).eps


class NormalizerUnderflow(ArithmeticError):
    """The normalizing quantity vanished; ``partial`` holds the samples before it."""

    def __init__(self, message: str, partial: "DiagnosticReport | None"):
        super().__init__(message)
        self.partial = partial


@dataclass
class DiagnosticReport:
    name: str
    xs: np.ndarray
    observed: np.ndarray
    target: float
    err: np.ndarray
    tol: float
    verdict: str = ""
    trend: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.observed = np.asarray(self.observed, dtype=float)
        self.err = np.asarray(self.err, dtype=float)
        if not self.verdict:
            self.verdict, self.trend = judge(self.observed, self.err, self.target, self.tol)

    @property
    def residual(self) -> np.ndarray:
        return self.observed - self.target

    @property
    def passed(self) -> bool:
        return self.verdict == "converged"

    def to_dict(self) -> dict:
        return {"name": self.name, "target": self.target, "tol": self.tol,
                "verdict": self.verdict, "trend": self.trend, "meta": self.meta,
                "x": self.xs.tolist(), "observed": self.observed.tolist(),
                "err_estimate": self.err.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "observed", "target", "err_estimate"])
        for x, o, e in zip(self.xs, self.observed, self.err):
            w.writerow([f"{x:.17g}", f"{o:.17g}", f"{self.target:.17g}", f"{e:.17g}"])
        return buf.getvalue()

    def summary(self) -> str:
        top = self.observed[-1] if self.observed.size else float("nan")
        return (f"{self.name}: {self.verdict} (target {self.target:.6g}, "
                f"last {top:.6g}, trend {self.trend:.3g})")


def judge(observed, err, target: float, tol: float = DEFAULT_TOL,
          fail_trend: float = FAIL_TREND) -> tuple[str, float]:
    """Verdict and trend statistic for a sampled series.

    ``trend`` is the median ``|residual|`` over the last third divided by
    that over the first third.  Converged: last-third median within
    ``tol * scale`` (scale ``|target|``, or 1 for a zero target), every
    last-third sample within ``tol * scale + err``, and ``trend < 1``.
    Failed: every last-third sample farther than ``tol * scale + err`` and
    ``trend >= fail_trend``.  Anything else is inconclusive.
    """
    obs = np.asarray(observed, dtype=float)
    err = np.broadcast_to(np.asarray(err, dtype=float), obs.shape)
    if obs.size < 3:
        return "inconclusive", float("nan")
    scale = abs(target) if target != 0 else 1.0
    bound = tol * scale
    res = np.abs(obs - target)
    k = max(1, obs.size // 3)
    first, last = np.median(res[:k]), np.median(res[-k:])
    if first == 0:
        trend = 0.0 if last == 0 else math.inf
    else:
        trend = float(last / first)
    tail_res, tail_err = res[-k:], err[-k:]
    if np.any(~np.isfinite(tail_res)):
        return "failed", trend
    if last <= bound and np.all(tail_res <= bound + tail_err) and (trend < 1 or last == 0):
        return "converged", trend
    if np.all(tail_res > bound + tail_err) and trend >= fail_trend:
        return "failed", trend
    return "inconclusive", trend


def _xs(xs) -> np.ndarray:
    x = np.asarray(xs, dtype=float).ravel()
    if x.size < 1 or np.any(np.diff(x) <= 0):
        raise ValueError("x samples must be strictly increasing")
    return x


def log_grid(start: float, stop: float, count: int) -> np.ndarray:
    return np.geomspace(start, stop, count)


def _guard(name, xs, observed, err, target, tol, bad, what):
    """Raise with the prefix before the first vanishing normalizer."""
    if np.any(bad):
        i = int(np.argmax(bad))
        part = None
        if i >= 1:
            part = DiagnosticReport(name, xs[:i], observed[:i], target, err[:i], tol,
                                    meta={"partial": True})
        raise NormalizerUnderflow(f"{what} vanishes at x={xs[i]:.6g}", part)


def _tail_err(law, x):
    """Tail values and absolute error estimates for any supported law."""
    if isinstance(law, CompoundPoissonLaw):
        v, e = law.tail(x, return_error=True)
        return np.asarray(v), np.asarray(e)
    v = np.asarray(law.tail(x))
    return v, 4 * EPS * np.abs(v)


def _mean(law) -> float:
    m = law.mean()
    if not math.isfinite(m):
        raise PreconditionError(f"{_label(law)} has infinite mean")
    return float(m)


def _label(law) -> str:
    f = getattr(law, "to_spec", None)
    if f is not None:
        try:
            return f()
        except Exception:  # pragma: no cover - labels are cosmetic
            pass
    return type(law).__name__


# --------------------------------------------------------------------------------------
# local classes


def check_Lloc(law, xs, c: float = 1.0, *, tol: float = DEFAULT_TOL) -> DiagnosticReport:
    """``rho((x+1, x+1+c]) / rho((x, x+c]) -> 1``."""
    if not c > 0:
        raise ValueError("c must be positive")
    xs = _xs(xs)
    name = f"Lloc[{_label(law)}, c={c:g}]"
    if isinstance(law, CompoundPoissonLaw):
        v0, e0 = _tail_err(law, xs)
        lm0 = np.asarray(law.local_mass(xs, c))
        lm1 = np.asarray(law.local_mass(xs + 1, c))
        with np.errstate(divide="ignore", invalid="ignore"):
            obs = lm1 / lm0
            err = np.abs(obs) * 4 * e0 / np.maximum(np.abs(lm0), 1e-300)
        bad = ~(lm0 > 0)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            lt0 = np.asarray(law.log_tail(xs))
            lt1 = np.asarray(law.log_tail(xs + 1))
            d0 = np.asarray(law.drop(xs, c))
            d1 = np.asarray(law.drop(xs + 1, c))
            obs = np.exp(lt1 - lt0) * d1 / d0
        err = 8 * EPS * np.abs(obs) * (1 + np.abs(lt1) + np.abs(lt0))
        bad = ~(d0 > 0) | ~np.isfinite(lt0)
    _guard(name, xs, obs, err, 1.0, tol, bad, "rho((x, x+c])")
    return DiagnosticReport(name, xs, obs, 1.0, err, tol)


def _excess(law, x, rtol=1e-11):
    return excess_ratio(law, law, x, rtol=rtol)


def check_Sloc(law, xs, c: float = 1.0, *, tol: float = DEFAULT_TOL) -> DiagnosticReport:
    """``rho^{2*}((x, x+c]) / rho((x, x+c]) -> 2``.

    With ``r`` the excess ratio and ``d = drop(x, c)`` the observed value is
    ``2 + r(x+c) + (r(x) - r(x+c)) / d``.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    xs = _xs(xs)
    name = f"Sloc[{_label(law)}, c={c:g}]"
    d = np.asarray(law.drop(xs, c))
    _guard(name, xs, np.zeros_like(xs), np.zeros_like(xs), 2.0, tol, ~(d > 0), "rho((x, x+c])")
    r0, e0 = _excess(law, xs)
    r1, e1 = _excess(law, xs + c)
    obs = 2.0 + r1 + (r0 - r1) / d
    err = (e0 + e1) / d + e1 + 4 * EPS * (np.abs(r0) + np.abs(r1)) / d
    return DiagnosticReport(name, xs, obs, 2.0, err, tol)


def check_S2loc(law, xs, *, tol: float = DEFAULT_TOL) -> DiagnosticReport:
    """``(rho^{2*}(x) - 2 rho(x) - 2 m rho((x, x+1])) / rho((x, x+1]) -> 0``.

    Evaluated as ``r(x) / drop(x, 1) - 2m`` where ``r = (rho^{2*} - 2 rho) / rho``
    comes from the cancellation-free identity.
    """
    m = _mean(law)
    xs = _xs(xs)
    name = f"S2loc[{_label(law)}]"
    d = np.asarray(law.drop(xs, 1.0))
    _guard(name, xs, np.zeros_like(xs), np.zeros_like(xs), 0.0, tol, ~(d > 0), "rho((x, x+1])")
    r, e = _excess(law, xs)
    obs = r / d - 2 * m
    err = e / d + 4 * EPS * (np.abs(r) / d + 2 * m)
    return DiagnosticReport(name, xs, obs, 0.0, err, tol, meta={"mean": m})


def check_S2loc_hypotheses(law, xs, *, tol: float = DEFAULT_TOL) -> DiagnosticReport:
    """``mu(x)^2 / mu((x, x+1]) = mu(x) / drop(x, 1) -> 0``."""
    xs = _xs(xs)
    name = f"S2loc-hyp[{_label(law)}]"
    d = np.asarray(law.drop(xs, 1.0))
    _guard(name, xs, np.zeros_like(xs), np.zeros_like(xs), 0.0, tol, ~(d > 0), "mu((x, x+1])")
    with np.errstate(over="ignore"):
        obs = np.asarray(law.tail(xs)) / d
    return DiagnosticReport(name, xs, obs, 0.0, 8 * EPS * np.abs(obs), tol)


# --------------------------------------------------------------------------------------
# density classes


def _need_density(law):
    if not isinstance(law, Law):
        raise PreconditionError(f"{_label(law)} has no density")


def density_self_convolution_ratio(law, xs, *, rtol: float = 1e-11):
    """``p^{2(x)}(x) / p(x)`` and an error estimate.

    Symmetry folds the integral onto ``[lower, x/2]`` (doubled); the
    substitution ``y = lower + s^2`` removes integrable singularities of
    ``p`` at the left end.
    """
    _need_density(law)
    x = np.atleast_1d(np.asarray(xs, dtype=float))
    lo = law.lower
    if np.any(x <= 2 * lo):
        raise ValueError("x must exceed twice the lower support bound")
    smax = np.sqrt(0.5 * x - lo)
    edges = graded_edges(np.zeros_like(x), smax)
    ldx = np.asarray(law.log_density(x))

    def f(s, rows):
        y = lo + s * s
        xr = x[rows][:, None, None]
        with np.errstate(over="ignore", invalid="ignore"):
            v = np.exp(np.asarray(law.log_density(xr - y)) - ldx[rows][:, None, None]
                       + np.asarray(law.log_density(y))) * 2 * s
        return np.where(s > 0, v, 0.0)

    val, err = panel_quad(f, edges, rtol=rtol)
    return 2 * val, 2 * err


def check_Sd(law, xs, *, tol: float = DEFAULT_TOL) -> DiagnosticReport:
    """``p^{2(x)}(x) / p(x) -> 2``."""
    xs = _xs(xs)
    obs, err = density_self_convolution_ratio(law, xs)
    return DiagnosticReport(f"Sd[{_label(law)}]", xs, obs, 2.0, err, tol)


def check_S2d(law, xs, *, tol: float = DEFAULT_TOL) -> DiagnosticReport:
    """``(rho^{2*}(x) - 2 rho(x) - 2 m p(x)) / p(x) -> 0``."""
    _need_density(law)
    m = _mean(law)
    xs = _xs(xs)
    r, e = _excess(law, xs)
    ratio = np.exp(np.asarray(law.log_tail(xs)) - np.asarray(law.log_density(xs)))
    obs = r * ratio - 2 * m
    err = e * ratio + 8 * EPS * (np.abs(r * ratio) + 2 * m)
    return DiagnosticReport(f"S2d[{_label(law)}]", xs, obs, 0.0, err, tol, meta={"mean": m})


def check_density_power(law, t: int, xs, *, tol: float = DEFAULT_TOL,
                        folds: Folds | None = None) -> DiagnosticReport:
    """``p^t(x) / p(x) -> t`` for integer ``t``.

    ``t = 2`` uses the density self-convolution; larger ``t`` differentiates
    the log of the ``t``-fold tail (Richardson-extrapolated central
    differences).
    """
    _need_density(law)
    if int(t) != t or t < 1:
        raise PreconditionError("density powers are computed for integer t >= 1")
    t = int(t)
    xs = _xs(xs)
    name = f"density-power[{_label(law)}, t={t}]"
    if t == 1:
        return DiagnosticReport(name, xs, np.ones_like(xs), 1.0, np.zeros_like(xs), tol)
    if t == 2:
        obs, err = density_self_convolution_ratio(law, xs)
        return DiagnosticReport(name, xs, obs, 2.0, err, tol)
    folds = folds or Folds(law)
    h = 1e-3 * (xs - t * law.lower)
    pts = np.concatenate([xs - 2 * h, xs - h, xs + h, xs + 2 * h, xs])
    lt, lte = folds.tail(t, pts, return_error=True)
    lt = np.log(lt)
    n = xs.size
    a, b, c, d, mid = (lt[i * n:(i + 1) * n] for i in range(5))
    d1 = (c - b) / (2 * h)
    d2 = (d - a) / (4 * h)
    slope = (4 * d1 - d2) / 3
    obs = np.exp(mid - np.asarray(law.log_density(xs))) * -slope
    rel = np.max(lte.reshape(5, n) / np.exp(lt.reshape(5, n)), axis=0)
    err = np.abs(obs) * (rel / (h * np.abs(slope)) + 1e-9)
    return DiagnosticReport(name, xs, obs, float(t), err, tol)


# --------------------------------------------------------------------------------------
# powers


def _power_tail(law, t, xs, folds):
    if isinstance(law, CompoundPoissonLaw):
        return power(law, t).tail(xs, return_error=True)
    if int(t) != t or t < 1:
        raise PreconditionError("non-integer powers need a compound Poisson law")
    folds = folds or Folds(law)
    return folds.tail(int(t), xs, return_error=True)


def _unit_mass(law, xs):
    """``mu((x, x+1])`` with an error estimate."""
    if isinstance(law, CompoundPoissonLaw):
        v0, e0 = law.tail(xs, return_error=True)
        v1, e1 = law.tail(xs + 1, return_error=True)
        return v0 - v1, e0 + e1
    lm = np.asarray(law.local_mass(xs, 1.0))
    return lm, 8 * EPS * lm


def power_residual(law, t: float, xs, *, folds: Folds | None = None):
    """``(mu^{t*}(x) - t mu(x)) / mu((x, x+1])`` with error estimate."""
    xs = _xs(xs)
    tt, te = _power_tail(law, t, xs, folds)
    t1, e1 = _tail_err(law, xs)
    lm, le = _unit_mass(law, xs)
    _guard(f"power[{_label(law)}]", xs, np.zeros_like(xs), np.zeros_like(xs), 0.0,
           DEFAULT_TOL, ~(lm > 0), "mu((x, x+1])")
    num = np.asarray(tt) - t * np.asarray(t1)
    obs = num / lm
    err = (np.asarray(te) + t * e1 + 4 * EPS * np.abs(tt)) / lm + np.abs(obs) * le / lm
    return obs, err, np.asarray(tt), np.asarray(t1), lm


def check_power(law, t: float, xs, *, tol: float = DEFAULT_TOL,
                folds: Folds | None = None) -> DiagnosticReport:
    """``(mu^{t*}(x) - t mu(x)) / mu((x, x+1]) -> (t^2 - t) m(mu)``."""
    m = _mean(law)
    obs, err, *_ = power_residual(law, t, xs, folds=folds)
    return DiagnosticReport(f"power[{_label(law)}, t={t:g}]", _xs(xs), obs,
                            (t * t - t) * m, err, tol, meta={"mean": m, "t": t})


def check_remark12(law, t0: float, xs, *, tol: float = DEFAULT_TOL,
                   folds: Folds | None = None) -> tuple[DiagnosticReport, DiagnosticReport]:
    """Residuals of the power relation for ``t = t0`` and ``t0 + 1``.

    Residual: ``(mu^{t*}(x) - t mu(x) - (t^2 - t) m mu((x, x+1])) / mu((x, x+1])``.
    """
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    m = _mean(law)
    if not isinstance(law, CompoundPoissonLaw):
        folds = folds or Folds(law)
    out = []
    for t in (t0, t0 + 1):
        obs, err, *_ = power_residual(law, t, xs, folds=folds)
        out.append(DiagnosticReport(f"power-residual[{_label(law)}, t={t:g}]", _xs(xs),
                                    obs - (t * t - t) * m, 0.0, err, tol,
                                    meta={"mean": m, "t": t}))
    return out[0], out[1]


# --------------------------------------------------------------------------------------
# regularly varying compound Poisson laws


def _jump_index(spec: LevySpec) -> float | None:
    j = spec.jump
    if isinstance(j, Restricted):
        j = j.base
    if isinstance(j, PowerTail):
        return j.alpha
    if isinstance(j, LogTail):
        return 0.0
    if isinstance(j, AnalyticLaw) and j.family == "pareto":
        return j.param
    return None


_OW_TARGET = {"ii": 1.0, "iii": 1.0, "iv": -0.5}


def check_omey_willekens(spec: LevySpec, regime: str, xs, *, alpha: float | None = None,
                         tol: float = DEFAULT_TOL, mu: CompoundPoissonLaw | None = None
                         ) -> DiagnosticReport:
    """Limit ratios for compound Poisson laws with regularly varying jump density.

    (i) ``(mu - nu) / (q int_1^x nu) -> C(alpha)``; (ii) same ratio -> 1;
    (iii) ``(mu - nu) / (q m(mu)) -> 1``; (iv) ``(mu - nu) / nu^2 -> -1/2``.
    """
    a = _jump_index(spec) if alpha is None else alpha
    if a is None:
        raise RegimeError("jump index alpha unknown; pass alpha")
    finite = math.isfinite(spec.jump_mean())
    ok = {"i": 0 < a < 1, "ii": a == 1 and not finite, "iii": a == 1 and finite,
          "iv": a == 0}
    if regime not in ok:
        raise ValueError(f"unknown regime {regime!r}")
    if not ok[regime]:
        raise RegimeError(f"regime ({regime}) does not match alpha={a!r}, "
                          f"{'finite' if finite else 'infinite'} jump mean")
    xs = _xs(xs)
    mu = mu or compound_poisson(spec)
    tm, te = mu.tail(xs, return_error=True)
    nu = np.asarray(spec.tail(xs))
    diff = tm - nu
    if regime in ("i", "ii"):
        norm = np.asarray(spec.density(xs)) * spec.integrated_tail(1.0, xs)
    elif regime == "iii":
        norm = np.asarray(spec.density(xs)) * mu.mean()
    else:
        norm = nu * nu
    target = asym.c_alpha(a) if regime == "i" else _OW_TARGET[regime]
    obs = diff / norm
    err = (te + 4 * EPS * (np.abs(tm) + nu)) / np.abs(norm) + 1e-10 * np.abs(obs)
    return DiagnosticReport(f"rv-limit({regime})[alpha={a:g}, delta={spec.delta:g}]", xs, obs,
                            float(target), err, tol, meta={"alpha": a, "regime": regime})


# --------------------------------------------------------------------------------------
# worked examples


def _example_law(name: str):
    m = re.fullmatch(r"\s*(lognormal|weibull|pareto|pareto_rv)\s*(?:\(\s*([0-9.eE+-]+)\s*\))?\s*",
                     name)
    if not m:
        raise ValueError(f"unknown example {name!r}")
    kind, p = m.group(1), m.group(2)
    if kind != "lognormal" and p is None:
        raise ValueError(f"example {kind} needs a parameter, e.g. {kind}(0.5)")
    p = None if p is None else float(p)
    if kind == "lognormal":
        return kind, None, parse_law("lognormal")
    if kind == "weibull":
        return kind, p, parse_law(f"weibull:beta={p!r}")
    if kind == "pareto" and not p > 1:
        raise PreconditionError("the pareto example needs alpha > 1; use pareto_rv")
    if kind == "pareto_rv" and not 0 < p <= 1:
        raise PreconditionError("pareto_rv needs 0 < alpha <= 1")
    return kind, p, parse_law(f"pareto:alpha={p!r}")


def closed_form_relative(kind: str, p: float | None):
    """``(scale(x), coefficient)``: the nu-from-mu relative correction is ``-coefficient * scale``.

    Finite-mean examples use their whole closed form as the scale
    (coefficient 1); the regularly varying Pareto uses ``x^{-alpha}`` with
    coefficient ``alpha K(alpha)`` (zero at ``alpha = 1/2``), or
    ``log x / x`` with coefficient 1 when ``alpha = 1``.
    """
    if kind == "lognormal":
        return (lambda x: math.sqrt(math.e) * np.log(x) / x), 1.0
    if kind == "weibull":
        return (lambda x: math.gamma(1 / p) * x ** (p - 1)), 1.0
    if kind == "pareto":
        return (lambda x: p / (p - 1) / x), 1.0
    if p == 1:
        return (lambda x: np.log(x) / x), 1.0
    return (lambda x: x ** -p), p * asym.k_alpha(p)


DEFAULT_RANGES = {"lognormal": (10.0, 1e4), "weibull": (10.0, 1e4), "pareto": (10.0, 1e3),
                  "pareto_rv": (10.0, 1e4)}


def validate_example(name: str, xs=None, *, tol: float = DEFAULT_TOL,
                     ts=(2, 3)) -> list[DiagnosticReport]:
    """Run the checks attached to one worked example; one report per claim."""
    kind, p, law = _example_law(name)
    if xs is None:
        lo, hi = DEFAULT_RANGES[kind]
        xs = log_grid(lo, hi, 16)
    xs = _xs(xs)
    folds = Folds(law)
    out = [check_Lloc(law, xs, tol=tol), check_Sloc(law, xs, tol=tol)]
    scale, coef = closed_form_relative(kind, p)
    if kind != "pareto_rv":
        out.append(check_S2loc_hypotheses(law, xs, tol=tol))
        out.append(check_S2loc(law, xs, tol=tol))
        for t in ts:
            out.append(check_power(law, t, xs, tol=tol, folds=folds))
    else:
        pred = asym.predict_rv(asym.pareto_rv(p), mean_mu=None, t=2.0)
        obs = -np.asarray(pred.nu_from_mu.relative_correction(xs)) / scale(xs)
        out.append(DiagnosticReport(f"rv-correction-closed-form[{name}]", xs, obs, coef,
                                    1e-9 * np.abs(obs), tol))
    for t in ts:
        tt, te = _power_tail(law, t, xs, folds)
        t1, e1 = _tail_err(law, xs)
        denom = (t - 1) * scale(xs)
        obs = (tt - t * t1) / (t * t1) / denom
        err = (te + t * e1 + 4 * EPS * tt) / (t * t1) / np.abs(denom)
        out.append(DiagnosticReport(f"closed-form power[{name}, t={t}]", xs, obs, coef,
                                    err, tol, meta={"t": t}))
    return out
