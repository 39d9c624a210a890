"""Second-order tail predictors and regular-variation constants.

A :class:`SecondOrderPrediction` is ``leading(x) + correction(x)`` together
with the scale ``normalizer(x)`` of the neglected ``o(.)`` term, so that
residuals can be divided by exactly that scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

Fn = Callable[[np.ndarray], np.ndarray]


class PreconditionError(ValueError):
    """An input violates a hypothesis of the relation being evaluated."""


class RegimeError(PreconditionError):
    pass


def _zero(x):
    return np.zeros(np.shape(x))


def _one(x):
    return np.ones(np.shape(x))


@dataclass(frozen=True)
class SecondOrderPrediction:
    leading: Fn
    correction: Fn
    normalizer: Fn
    tag: str

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.leading(x)) + np.asarray(self.correction(x))

    def relative_correction(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.correction(x)) / np.asarray(self.leading(x))

    def table(self, x) -> dict[str, np.ndarray]:
        x = np.asarray(x, dtype=float)
        lead = np.asarray(self.leading(x), dtype=float) * np.ones_like(x)
        corr = np.asarray(self.correction(x), dtype=float) * np.ones_like(x)
        norm = np.asarray(self.normalizer(x), dtype=float) * np.ones_like(x)
        return {"x": x, "leading": lead, "correction": corr, "normalizer": norm,
                "prediction": lead + corr}


def _unit_mass(law) -> Fn:
    return lambda x: np.asarray(law.local_mass(x, 1.0))


def _finite_mean(law, m=None) -> float:
    m = law.mean() if m is None else m
    if not math.isfinite(m):
        raise PreconditionError("relation needs a finite mean")
    return float(m)


def predict_nu_from_mu(mu, *, mean: float | None = None) -> SecondOrderPrediction:
    """``nu(x) = mu(x) - m(mu) mu((x, x+1]) + o(mu((x, x+1]))``."""
    m = _finite_mean(mu, mean)
    mass = _unit_mass(mu)
    return SecondOrderPrediction(lambda x: np.asarray(mu.tail(x)),
                                 lambda x: -m * mass(x), mass, "eq1.2")


def predict_mu_from_nu(nu, m_mu: float) -> SecondOrderPrediction:
    """``mu(x) = nu(x) + m(mu) nu((x, x+1]) + o(nu((x, x+1]))``.

    ``nu`` is anything with ``tail`` and ``local_mass`` (a law or a
    :class:`~subexp2.infdiv.LevySpec`).
    """
    if not math.isfinite(m_mu):
        raise PreconditionError("m(mu) must be finite")
    mass = _unit_mass(nu)
    return SecondOrderPrediction(lambda x: np.asarray(nu.tail(x)),
                                 lambda x: m_mu * mass(x), mass, "eq1.3")


def predict_power(mu, t: float, *, mean: float | None = None) -> SecondOrderPrediction:
    """``mu^{t*}(x) = t mu(x) + (t^2 - t) m(mu) mu((x, x+1]) + o(.)``."""
    if not t > 0:
        raise ValueError("t must be positive")
    m = _finite_mean(mu, mean)
    mass = _unit_mass(mu)
    coef = (t * t - t) * m
    return SecondOrderPrediction(lambda x: t * np.asarray(mu.tail(x)),
                                 lambda x: coef * mass(x), mass, "eq1.4")


def predict_compound(w, rho, *, mean: float | None = None) -> SecondOrderPrediction:
    """``sum p_n rho^{n*}``: first and second factorial moments of ``w`` as coefficients."""
    m = _finite_mean(rho, mean)
    a = w.factorial_moment(1)
    b = w.factorial_moment(2)
    mass = _unit_mass(rho)
    return SecondOrderPrediction(lambda x: a * np.asarray(rho.tail(x)),
                                 lambda x: b * m * mass(x), mass, "eq2.1")


def predict_density_versions(law, direction: str, *, m_mu: float | None = None
                             ) -> SecondOrderPrediction:
    """Density-normalized forms.

    ``direction="nu-from-mu"``: ``law`` is ``mu`` with density ``p``;
    correction ``-m(mu) p(x)``.  ``direction="mu-from-nu"``: ``law`` is the
    Levy measure with density ``k(x)/x``; correction ``+m(mu) k(x)/x`` and
    ``m_mu`` is required.
    """
    if not hasattr(law, "density"):
        raise PreconditionError("law has no density")
    dens = lambda x: np.asarray(law.density(x))  # noqa: E731
    if direction == "nu-from-mu":
        m = _finite_mean(law, m_mu)
        return SecondOrderPrediction(lambda x: np.asarray(law.tail(x)),
                                     lambda x: -m * dens(x), dens, "eq4.5")
    if direction == "mu-from-nu":
        if m_mu is None:
            raise PreconditionError("mu-from-nu needs m(mu)")
        m = _finite_mean(law, m_mu)
        return SecondOrderPrediction(lambda x: np.asarray(law.tail(x)),
                                     lambda x: m * dens(x), dens, "eq4.6")
    raise ValueError(f"unknown direction {direction!r}")


# --------------------------------------------------------------------------------------
# constants


def _check_open_unit(alpha):
    a = np.asarray(alpha, dtype=float)
    if np.any(~((a > 0) & (a < 1))):
        raise ValueError("alpha must lie in (0, 1)")
    return a


def k_alpha(alpha):
    """``K(a) = (2a - 1) Gamma(1-a)^2 / (2a Gamma(2-2a))``."""
    a = _check_open_unit(alpha)
    out = (2 * a - 1) * special.gamma(1 - a) ** 2 / (2 * a * special.gamma(2 - 2 * a))
    return float(out) if out.ndim == 0 else out


def c_alpha(alpha):
    """``C(a) = (1-a)(2a - 1) Gamma(1-a)^2 / (2a Gamma(2-2a))``."""
    a = _check_open_unit(alpha)
    out = ((1 - a) * (2 * a - 1) * special.gamma(1 - a) ** 2
           / (2 * a * special.gamma(2 - 2 * a)))
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------------------
# slowly varying functions and Karamata integrals


@dataclass(frozen=True)
class SlowlyVarying:
    """``l(u)`` given through ``g(v) = l(e^v)`` so that huge ``u`` stay representable."""

    of_log: Callable[[np.ndarray], np.ndarray]
    name: str = "l"

    def __call__(self, u):
        return self.of_log(np.log(np.asarray(u, dtype=float)))

    @classmethod
    def from_callable(cls, f, name: str = "l") -> "SlowlyVarying":
        def g(v):
            with np.errstate(over="ignore"):
                return f(np.exp(np.asarray(v, dtype=float)))
        return cls(g, name)


def l_one(scale: float = 1.0) -> SlowlyVarying:
    return SlowlyVarying(lambda v: scale * np.ones(np.shape(v)), "one" if scale == 1 else f"{scale!r}")


def l_log_power(p: float, scale: float = 1.0) -> SlowlyVarying:
    """``l(u) = scale * (log u)^p``."""
    return SlowlyVarying(lambda v: scale * np.asarray(v, dtype=float) ** p, f"log^{p!r}")


def _as_sv(l) -> SlowlyVarying:
    return l if isinstance(l, SlowlyVarying) else SlowlyVarying.from_callable(l)


def lsub_converges(l) -> bool:
    """Whether ``int^inf l(u)/u du = int^inf g(v) dv`` is finite.

    Probe: the log-log slope of ``v g(v)`` over ``v in [2^10, 2^20]``; a
    slope below -0.05 counts as integrable decay.  Slopes in
    ``[-0.05, 0]`` (e.g. ``1/(v log^2 v)``) are reported as divergent.
    """
    g = _as_sv(l).of_log
    v1, v2 = 2.0**10, 2.0**20
    with np.errstate(all="ignore"):
        a, b = float(g(np.array(v1))) * v1, float(g(np.array(v2))) * v2
    if not (np.isfinite(a) and np.isfinite(b)) or a <= 0:
        return b == 0 or (np.isfinite(a) and a == 0)
    if b <= 0:
        return True
    return math.log(b / a) / math.log(v2 / v1) < -0.05


def _quad_log(g, a, b, rtol):
    val, err = integrate.quad(g, a, b, epsabs=0, epsrel=rtol, limit=500)
    return val


def karamata_lstar(l, x, *, rtol: float = 1e-10):
    """``l*(x) = int_1^x l(u)/u du`` computed as ``int_0^{log x} g(v) dv``."""
    g = _as_sv(l).of_log
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs <= 1):
        raise ValueError("x must exceed 1")
    f = lambda v: float(g(np.array(v)))  # noqa: E731
    out = np.array([_quad_log(f, 0.0, math.log(xi), rtol) for xi in xs])
    return float(out[0]) if np.ndim(x) == 0 else out


def karamata_lsub(l, x, *, rtol: float = 1e-10):
    """``l_*(x) = int_x^inf l(u)/u du``; ``inf`` when the integral diverges."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs <= 1):
        raise ValueError("x must exceed 1")
    if not lsub_converges(l):
        out = np.full(xs.shape, np.inf)
    else:
        g = _as_sv(l).of_log
        f = lambda v: float(g(np.array(v)))  # noqa: E731
        out = np.array([_quad_log(f, math.log(xi), np.inf, rtol) for xi in xs])
    return float(out[0]) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class RegVaryingTail:
    """Density ``p(x) ~ x^{-alpha-1} l(x)`` with ``0 <= alpha <= 1``."""

    alpha: float
    l: SlowlyVarying = field(default_factory=l_one)

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        object.__setattr__(self, "l", _as_sv(self.l))

    @property
    def lstar_finite(self) -> bool:
        """``l*(inf) < inf``."""
        return lsub_converges(self.l)

    def slowly_varying_ratios(self, ks=range(2, 7)) -> np.ndarray:
        xs = 10.0 ** np.asarray(list(ks), dtype=float)
        return np.asarray(self.l(2 * xs)) / np.asarray(self.l(xs))

    def regime(self) -> str:
        if 0 < self.alpha < 1:
            return "i"
        if self.alpha == 1:
            return "iii" if self.lstar_finite else "ii"
        return "iv"


@dataclass(frozen=True)
class RVPrediction:
    regime: str
    nu_from_mu: SecondOrderPrediction
    power: SecondOrderPrediction
    t: float


def predict_rv(rv: RegVaryingTail, mean_mu: float | None = None, t: float = 1.0, *,
               mu_tail: Fn | None = None, regime: str | None = None) -> RVPrediction:
    """Second-order relations for regularly varying self-decomposable laws.

    Regimes: (i) ``0 < alpha < 1``; (ii) ``alpha = 1``, ``l*(inf) = inf``;
    (iii) ``alpha = 1``, ``l*(inf) < inf`` (needs ``mean_mu``); (iv)
    ``alpha = 0``.  Without ``mu_tail`` the predictions are relative:
    leading term 1 and corrections divided by ``mu(x)``.  A ``regime``
    argument that disagrees with the dispatch raises :class:`RegimeError`.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    found = rv.regime()
    if regime is not None and regime != found:
        raise RegimeError(f"requested regime ({regime}) but alpha={rv.alpha!r} "
                          f"and l give regime ({found})")
    a, l = rv.alpha, rv.l
    if found == "i":
        K = k_alpha(a)
        norm = lambda x: np.asarray(x, float) ** -a * l(x)  # noqa: E731
        rel_nu = lambda x: -K * norm(x)  # noqa: E731
        rel_pow = lambda x: (t - 1) * K * norm(x)  # noqa: E731
    elif found == "ii":
        if mean_mu is not None and math.isfinite(mean_mu):
            raise RegimeError("alpha = 1 with l*(inf) = inf has infinite mean; "
                              "a finite mean was supplied")
        norm = lambda x: np.asarray(karamata_lstar(l, x)) / np.asarray(x, float)  # noqa: E731
        rel_nu = lambda x: -norm(x)  # noqa: E731
        rel_pow = lambda x: (t - 1) * norm(x)  # noqa: E731
    elif found == "iii":
        if mean_mu is None or not math.isfinite(mean_mu):
            raise RegimeError("regime (iii) needs the finite mean of mu")
        norm = lambda x: 1.0 / np.asarray(x, float)  # noqa: E731
        rel_nu = lambda x: -mean_mu * norm(x)  # noqa: E731
        rel_pow = lambda x: (t - 1) * mean_mu * norm(x)  # noqa: E731
    else:
        if not lsub_converges(l):
            raise RegimeError("alpha = 0 needs a convergent l_*")
        norm = lambda x: np.asarray(karamata_lsub(l, x))  # noqa: E731
        rel_nu = lambda x: 0.5 * norm(x)  # noqa: E731
        # sign flips in the power relation
        rel_pow = lambda x: -(t - 1) * 0.5 * norm(x)  # noqa: E731

    if mu_tail is None:
        base = _one
    else:
        base = lambda x: np.asarray(mu_tail(x))  # noqa: E731
    nu = SecondOrderPrediction(base, lambda x: base(x) * rel_nu(x),
                               lambda x: base(x) * norm(x), f"prop6.1({found})")
    pw = SecondOrderPrediction(lambda x: t * base(x), lambda x: t * base(x) * rel_pow(x),
                               lambda x: t * base(x) * norm(x), f"prop6.1({found}),t={t!r}")
    return RVPrediction(found, nu, pw, t)


def pareto_rv(alpha: float) -> RegVaryingTail:
    """Tail ``(1+x)^{-alpha}``: ``p(x) = alpha (1+x)^{-alpha-1} = x^{-alpha-1} l(x)``."""
    def g(v):
        v = np.asarray(v, dtype=float)
        # l(e^v) = alpha (e^v / (1 + e^v))^{alpha+1} = alpha * exp(-(alpha+1) log1p(e^-v))
        return alpha * np.exp(-(alpha + 1) * np.log1p(np.exp(-v)))
    return RegVaryingTail(alpha, SlowlyVarying(g, f"pareto{alpha!r}"))
