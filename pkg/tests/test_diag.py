import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from subexp2.asym import PreconditionError, RegimeError, c_alpha
from subexp2.conv import excess_ratio
from subexp2.diag import (DEFAULT_TOL, DiagnosticReport, NormalizerUnderflow, check_density_power,
                          check_Lloc, check_omey_willekens, check_power, check_remark12,
                          check_S2d, check_S2loc, check_S2loc_hypotheses, check_Sd, check_Sloc,
                          closed_form_relative, density_self_convolution_ratio, judge, log_grid,
                          validate_example)
from subexp2.infdiv import LevySpec
from subexp2.laws import (AtomicLaw, LogTail, PowerTail, exponential, lognormal, pareto,
                          point_mass, weibull)

XS = log_grid(10.0, 1e3, 12)


# verdict logic --------------------------------------------------------------------------------

def test_judge_cases():
    x = np.geomspace(10, 1e3, 12)
    assert judge(1 + 1 / x, 0 * x, 1.0)[0] == "converged"
    assert judge(0.5 + 0 * x, 0 * x, 1.0)[0] == "failed"  # flat but offset
    assert judge(x, 0 * x, 1.0)[0] == "failed"
    assert judge(1 + 3 / np.log(x), 0 * x, 1.0)[0] == "inconclusive"
    assert judge([1.0, 1.0], [0, 0], 1.0)[0] == "inconclusive"
    assert judge(np.r_[0 * x[:-1] + 1.01, np.nan], 0 * x, 1.0)[0] == "failed"


@settings(max_examples=100, deadline=None)
@given(obs=st.lists(st.floats(-10, 10), min_size=4, max_size=30),
       err=st.floats(0, 1), target=st.floats(-3, 3), tol=st.floats(1e-3, 0.5))
def test_converged_never_outside_error_bound(obs, err, target, tol):
    obs = np.asarray(obs)
    verdict, trend = judge(obs, err, target, tol)
    k = max(1, obs.size // 3)
    scale = abs(target) if target != 0 else 1.0
    if verdict == "converged":
        assert np.all(np.abs(obs[-k:] - target) <= tol * scale + err)
    if verdict == "failed":
        assert np.all(np.abs(obs[-k:] - target) > tol * scale + err) or \
            not np.all(np.isfinite(obs[-k:]))


def test_report_serialization():
    r = check_Lloc(pareto(2.0), XS)
    rows = list(csv.reader(io.StringIO(r.to_csv())))
    assert rows[0] == ["x", "observed", "target", "err_estimate"]
    assert len(rows) == XS.size + 1
    assert float(rows[3][1]) == r.observed[2]  # 17 digits round-trip exactly
    d = json.loads(r.to_json())
    assert d["verdict"] == r.verdict and len(d["observed"]) == XS.size
    assert np.all(r.err >= 0) and r.err.shape == r.observed.shape
    assert "converged" in r.summary()


# local classes ----------------------------------------------------------------------------------

def test_lloc():
    r = check_Lloc(pareto(2.0), XS)
    assert r.verdict == "converged" and r.target == 1.0
    e = check_Lloc(exponential(1.0), XS)
    assert e.verdict == "failed"
    np.testing.assert_allclose(e.observed, math.exp(-1), rtol=1e-12)
    with pytest.raises(NormalizerUnderflow):
        check_Lloc(point_mass(0.0), XS)


def test_sloc():
    assert check_Sloc(weibull(0.5), log_grid(10.0, 1e4, 12)).verdict == "converged"
    e = check_Sloc(exponential(1.0), XS)
    # the two-fold local ratio of Exp(1) grows linearly instead of settling above 2
    assert e.verdict == "failed"
    assert e.observed[-1] / XS[-1] == pytest.approx(1.0, rel=0.01)


def test_s2loc_pareto_residual_shrinks():
    r = check_S2loc(pareto(3.0), XS)
    assert r.verdict == "converged"
    assert abs(r.residual[0]) / abs(r.residual[-1]) >= 4


def test_s2loc_lattice_law_fails():
    n = np.arange(1, 400)
    law = AtomicLaw(2.0 * n, n ** -4.0)
    xs = 2.0 * np.arange(10, 40, 3) - 0.5
    r = check_S2loc(law, xs)
    assert r.verdict == "failed"


def test_s2loc_hypotheses():
    assert check_S2loc_hypotheses(pareto(3.0), XS).verdict == "converged"
    assert check_S2loc_hypotheses(pareto(0.5), XS).verdict == "failed"
    assert check_S2loc_hypotheses(weibull(0.5), log_grid(10.0, 1e4, 12)).verdict == "converged"


def test_s2loc_rejects_infinite_mean():
    with pytest.raises(PreconditionError):
        check_S2loc(pareto(1.0), XS)


def test_cancellation_safe_path_matches_direct_quadrature():
    # direct: rho2(x) - 2 rho(x) from scipy quad of the convolution integral
    law = weibull(0.5)
    for x in (5.0, 20.0, 80.0):
        conv, qerr = integrate.quad(lambda y: float(law.tail(x - y)) * float(law.density(y)),
                                    0, x, points=[x / 2], limit=400, epsabs=0, epsrel=1e-13)
        direct = float(law.tail(x)) + conv - 2 * float(law.tail(x))
        derr = qerr + 4e-16 * (conv + float(law.tail(x)))
        if derr > 0.01 * abs(direct):
            continue  # fewer than two significant digits left
        r, rerr = excess_ratio(law, law, np.array([x]))
        safe = float(r[0]) * float(law.tail(x))
        assert abs(safe - direct) <= 10 * (derr + float(rerr[0]) * float(law.tail(x)))


# density classes ---------------------------------------------------------------------------------

def test_density_classes():
    assert check_Sd(lognormal(), XS).verdict == "converged"
    assert check_S2d(lognormal(), log_grid(10.0, 1e4, 12)).verdict == "converged"
    sd = check_Sd(exponential(1.0), XS)
    assert sd.verdict == "failed"
    np.testing.assert_allclose(sd.observed, XS, rtol=1e-8)


def test_density_self_convolution_against_quadrature():
    law = pareto(2.0)
    x = np.array([10.0, 100.0])
    got = np.asarray(density_self_convolution_ratio(law, x)[0])
    for xi, g in zip(x, got):
        want = integrate.quad(lambda y: float(law.density(xi - y)) * float(law.density(y)),
                              0, xi, points=[xi / 2], epsrel=1e-12, limit=200)[0]
        assert g == pytest.approx(want / float(law.density(xi)), rel=1e-9)


def test_density_power_ratio():
    r = check_density_power(pareto(2.0), 2, XS)
    assert r.target == 2 and r.verdict == "converged"


# powers --------------------------------------------------------------------------------------------

def test_power_pareto2():
    r = check_power(pareto(2.0), 2, XS)
    assert r.target == pytest.approx(2.0) and r.verdict == "converged"
    with pytest.raises(PreconditionError):
        check_power(pareto(2.0), 2.5, XS)


def test_remark12_integer_folds():
    a, b = check_remark12(pareto(3.0), 2.0, XS)
    assert a.verdict == "converged"
    assert b.verdict != "failed" and abs(b.observed[-1]) < abs(b.observed[0]) / 4


def test_remark12_compound():
    spec = LevySpec(1.0, 0.5, pareto(2.0))
    a, b = check_remark12(_cp(spec), 1.0, log_grid(10.0, 300.0, 6))
    # t = 1 is the law itself
    assert np.all(a.observed == 0.0)
    assert b.verdict != "failed"
    # pre-asymptotic bump near x = 20, then decay
    assert abs(b.observed[-1]) < 0.3 * np.max(np.abs(b.observed))


def _cp(spec):
    from subexp2.infdiv import compound_poisson
    return compound_poisson(spec)


def test_remark12_rejects_bad_t0():
    with pytest.raises(ValueError):
        check_remark12(pareto(3.0), 0.0, XS)


# regularly varying limits ----------------------------------------------------------------------------

def test_regime_targets_and_mismatch():
    xs = log_grid(10.0, 100.0, 4)
    half = check_omey_willekens(LevySpec(1.0, 0.5, PowerTail(0.5)), "i", xs)
    assert half.target == 0.0 == c_alpha(0.5)
    iv = check_omey_willekens(LevySpec(math.e, 0.5, LogTail()), "iv", xs)
    assert iv.target == -0.5
    ii = check_omey_willekens(LevySpec(1.0, 0.5, PowerTail(1.0)), "ii", xs)
    assert ii.target == 1.0
    with pytest.raises(RegimeError):
        check_omey_willekens(LevySpec(1.0, 0.5, PowerTail(0.5)), "iv", xs)
    with pytest.raises(RegimeError):
        check_omey_willekens(LevySpec(1.0, 0.5, PowerTail(1.0)), "iii", xs)
    with pytest.raises(ValueError):
        check_omey_willekens(LevySpec(1.0, 0.5, PowerTail(0.5)), "v", xs)


# worked examples -------------------------------------------------------------------------------------

def test_closed_forms():
    scale, coef = closed_form_relative("weibull", 0.5)
    x = np.array([100.0])
    # relative t=3 correction (3-1) Gamma(2) x^-1/2
    assert 2 * coef * scale(x)[0] == pytest.approx(2 * 100 ** -0.5)
    scale, coef = closed_form_relative("lognormal", None)
    assert scale(x)[0] == pytest.approx(math.sqrt(math.e) * math.log(100) / 100)
    scale, coef = closed_form_relative("pareto_rv", 0.5)
    assert coef == 0.0


@pytest.mark.parametrize("name", ["pareto(2)", "weibull(0.5)", "lognormal", "pareto_rv(0.5)"])
def test_validate_example_has_no_failures(name):
    reports = validate_example(name, log_grid(10.0, 1e3, 8))
    assert reports and all(isinstance(r, DiagnosticReport) for r in reports)
    assert not [r.name for r in reports if r.verdict == "failed"]


def test_validate_example_rejects_bad_names():
    for bad in ("cauchy", "pareto(0.5)", "pareto_rv(2)", "weibull"):
        with pytest.raises(ValueError):
            validate_example(bad)


def test_default_tolerance():
    assert DEFAULT_TOL == 0.05
