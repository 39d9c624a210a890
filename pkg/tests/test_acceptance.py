"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Frozen numbers come from independent oracles: mpmath for the gamma
constants and exponential integrals, closed forms for Erlang tails, and the
high-accuracy runs of ``scripts/calibrate_s2loc.py`` for the second-order
residuals.
"""

import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from subexp2 import (LevySpec, PowerTail, c_alpha, check_Lloc, check_S2d, check_S2loc, check_Sd,
                     check_Sloc, compound_poisson, convolve_grid, discretize, exponential,
                     invert_levy, k_alpha, laplace, lognormal, nfold_tail, pareto, point_mass,
                     sigma_from_spec, tail_convolve, weibull)
from subexp2.asym import PreconditionError
from subexp2.diag import check_omey_willekens, check_power, log_grid
from subexp2.laws import LogTail

# |S2loc residual| at the top sample from rtol=1e-12 runs, with ~50% headroom,
# and the verdict tolerance each law needs on its last third.
S2LOC = {
    "pareto(3)": (pareto(3.0), (10.0, 1e3), 6.09e-3, 0.01, 0.05),
    "lognormal": (lognormal(), (10.0, 1e4), 9.3e-3, 0.015, 0.1),
    "weibull(0.5)": (weibull(0.5), (10.0, 1e4), 0.138, 0.2, 0.6),
}


@pytest.mark.parametrize("name", list(S2LOC))
def test_01_s2loc_membership(name, acceptance):
    law, (lo, hi), oracle, threshold, tol = S2LOC[name]
    r = check_S2loc(law, log_grid(lo, hi, 16), tol=tol)
    res = np.abs(r.residual)
    top = res[-1]
    gain = res[0] / top
    ok = r.verdict == "converged" and top < threshold and gain >= 4
    acceptance(1, f"S2loc {name}",
               ok, f"verdict {r.verdict}, |res(top)| {top:.3g} (oracle {oracle:.3g}, "
                   f"threshold {threshold:g}), decrease {gain:.1f}x")


def test_02_compound_poisson_local_term(acceptance):
    spec = LevySpec(1.0, 0.5, PowerTail(2.0))
    mu = compound_poisson(spec)
    xs = log_grid(10.0, 1e4, 10)
    ratio = (mu.tail(xs) - spec.tail(xs)) / spec.local_mass(xs, 1.0)
    at_1e3 = ratio[np.argmin(abs(xs - 1e3))]
    dev = np.abs(ratio - 1.0)
    ok = abs(at_1e3 - 1) < 0.1 and dev[-1] < dev[0] and dev[-1] <= dev[np.argmin(abs(xs - 1e3))]
    acceptance(2, "compound Poisson local correction -> m(mu1)=1", ok,
               f"ratio {at_1e3:.5f} at 1e3, {ratio[-1]:.5f} at 1e4")


@pytest.mark.parametrize("t", [2, 3])
def test_03_integer_powers(t, acceptance):
    xs = log_grid(10.0, 1e3, 12)
    r = check_power(pareto(3.0), t, xs)
    target = (t * t - t) * 0.5
    assert r.target == pytest.approx(target)
    rel = abs(r.observed[-1] / target - 1)
    acceptance(3, f"power relation Pareto(3), t={t}", rel < 0.1,
               f"observed {r.observed[-1]:.5f} vs {target:g} (rel {rel:.2%})")


def _pareto2_laplace(t):
    # jump law with tail x^-2 on (1, inf)
    return float(2 * mp.expint(3, t))


TS = (0.1, 0.3, 1.0, 3.0, 10.0)


def test_04_levy_round_trip(acceptance):
    worst = {}
    atom = LevySpec(1.0, 0.5, point_mass(2.0, 0.01))
    eta = invert_levy(sigma_from_spec(atom, step=0.01, size=4000), 0.5)
    worst["atom at 2"] = max(abs(laplace(eta, t, reading="lattice")[0] - math.exp(-2 * t))
                             for t in TS)
    spec = LevySpec(1.0, 0.5, PowerTail(2.0))
    eta = invert_levy(sigma_from_spec(spec, step=0.002, size=100_000), 0.5)
    worst["Pareto(2)"] = max(abs(laplace(eta, t)[0] - _pareto2_laplace(t)) for t in TS)
    with pytest.raises(ValueError):
        invert_levy(sigma_from_spec(LevySpec(1.0, 0.7, point_mass(2.0, 0.01))), 0.7)
    ok = all(v <= 1e-6 for v in worst.values())
    acceptance(4, "Levy inversion round trip, delta=0.7 rejected", ok,
               ", ".join(f"{k}: {v:.2e}" for k, v in worst.items()))


def test_05_slowly_varying_regime(acceptance):
    spec = LevySpec(math.e, 0.5, LogTail())
    xs = np.geomspace(10.0, 1e8, 8)
    r = check_omey_willekens(spec, "iv", xs, tol=0.25)
    dev = np.abs(r.observed + 0.5)
    monotone = bool(np.all(np.diff(dev) <= 0))
    rel = dev[-1] / 0.5
    acceptance(5, "slowly varying regime -> -1/2", rel < 0.25 and monotone,
               f"observed {r.observed[-1]:.4f} at 1e8 (rel {rel:.2%}), monotone {monotone}")


def test_06_alpha_quarter_regime(acceptance):
    oracle = float((1 - mp.mpf(1) / 4) * (2 * mp.mpf(1) / 4 - 1) / (2 * mp.mpf(1) / 4)
                   * mp.beta(mp.mpf(3) / 4, mp.mpf(3) / 4))
    assert c_alpha(0.25) == pytest.approx(oracle, rel=1e-13)
    spec = LevySpec(1.0, 0.5, PowerTail(0.25))
    xs = np.geomspace(10.0, 1e6, 6)
    r = check_omey_willekens(spec, "i", xs, tol=0.2)
    rel = abs(r.observed[-1] / oracle - 1)
    acceptance(6, "alpha=1/4 regime -> C(1/4)", rel < 0.2,
               f"observed {r.observed[-1]:.4f} vs {oracle:.6f} (rel {rel:.2%})")


def test_07_constants(acceptance):
    zero = max(abs(k_alpha(0.5)), abs(c_alpha(0.5)))
    a = np.random.default_rng(7).uniform(0.01, 0.99, 50)
    gap = float(np.max(np.abs(c_alpha(a) - (1 - a) * k_alpha(a))))
    acceptance(7, "K(1/2)=C(1/2)=0, C=(1-a)K", zero <= 1e-14 and gap <= 1e-12,
               f"|K|,|C| at 1/2 <= {zero:.1e}, max gap {gap:.1e}")


def test_08_negative_controls(acceptance):
    xs = log_grid(10.0, 100.0, 8)
    r = check_Lloc(exponential(1.0), xs)
    err = float(np.max(np.abs(r.observed - math.exp(-1))))
    with pytest.raises(PreconditionError):
        check_S2loc(pareto(0.5), xs)
    s = check_Sloc(pareto(0.5), log_grid(10.0, 1e4, 12))
    ok = r.verdict == "failed" and err <= 1e-10 and s.verdict == "converged"
    acceptance(8, "negative controls", ok,
               f"Exp(1) Lloc {r.verdict} at e^-1 +- {err:.1e}; Pareto(0.5) S2loc rejected, "
               f"Sloc {s.verdict}")


def test_09_convolution_engine(acceptance):
    a = discretize(pareto(2.0), 0.0, 0.05, 2000)
    b = discretize(weibull(0.5), 0.0, 0.05, 3000)
    mass = abs(convolve_grid(a, b).total - a.total * b.total)
    x = np.array([0.5, 2.0, 8.0, 20.0, 30.0])
    e = exponential(1.0)
    erl2 = np.max(np.abs(tail_convolve(e, e, x) / (np.exp(-x) * (1 + x)) - 1))
    erl3 = np.max(np.abs(nfold_tail(e, 3, x) / (np.exp(-x) * (1 + x + x * x / 2)) - 1))
    ident = 0.0
    for law in (pareto(2.0), weibull(0.5)):
        for xv in (10.0, 100.0, 1000.0):
            lhs = float(tail_convolve(law, law, xv)) - 2 * float(law.tail(xv)) \
                + float(law.tail(xv)) ** 2
            tx = float(law.tail(xv))

            def f(y):
                return (float(law.tail(xv - y)) - tx) * float(law.density(y))

            pts = [xv / 2, xv - 1, xv - 1e-3] if xv > 2 else None
            rhs = integrate.quad(f, 0, xv, points=pts, limit=500, epsabs=0, epsrel=1e-12)[0]
            ident = max(ident, abs(lhs / rhs - 1))
    ok = mass <= 1e-12 and erl2 <= 1e-10 and erl3 <= 1e-10 and ident <= 1e-6
    acceptance(9, "convolution engine", ok,
               f"mass {mass:.1e}, Erlang-2 {erl2:.1e}, Erlang-3 {erl3:.1e}, identity {ident:.1e}")


def test_10_density_classes(acceptance):
    s2d = check_S2d(lognormal(), log_grid(10.0, 1e4, 12))
    xs = log_grid(5.0, 200.0, 8)
    sd = check_Sd(exponential(1.0), xs)
    rel = float(np.max(np.abs(sd.observed / xs - 1)))
    ok = s2d.verdict == "converged" and sd.verdict == "failed" and rel <= 1e-8
    acceptance(10, "density classes", ok,
               f"Lognormal S2d {s2d.verdict} (last {s2d.observed[-1]:.3g}); "
               f"Exp(1) Sd {sd.verdict}, ratio/x - 1 <= {rel:.1e}")
