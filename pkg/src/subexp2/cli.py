"""Command-line front end.

Exit codes: 0 success, 1 a diagnostic failed, 2 invalid configuration or a
violated precondition, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import asym, diag
from .conv import CompoundWeights, Folds, compound_tail, poisson_weights
from .infdiv import LevySpec, compound_poisson, invert_levy, jump_grid, laplace, sigma_from_spec
from .laws import GriddedMeasure, parse_law, point_mass

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

CLASSES = ("lloc", "sloc", "s2loc", "s2loc-hyp", "sd", "s2d", "remark12", "ow")
RELATIONS = ("eq1.2", "eq1.3", "eq1.4", "eq2.1", "eq4.5", "eq4.6", "prop6.1")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)

    def get(self, key, default=None):
        v = self.options.get(key)
        return default if v is None else v


def parse_grid(text) -> np.ndarray:
    """``log:start,stop,count`` or an explicit comma-separated list (at least 4 points)."""
    if isinstance(text, (list, tuple)):
        xs = np.asarray(text, dtype=float)
    else:
        text = str(text).strip()
        try:
            if text.startswith("log:"):
                a, b, n = text[4:].split(",")
                n = int(n)
                if n < 4:
                    raise ConfigError("x-grid needs at least 4 points")
                if not 0 < float(a) < float(b):
                    raise ConfigError("log grid needs 0 < start < stop")
                xs = np.geomspace(float(a), float(b), n)
            else:
                xs = np.asarray([float(v) for v in text.split(",")])
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad x-grid {text!r}: {e}") from None
    if xs.size < 4:
        raise ConfigError("x-grid needs at least 4 points")
    if np.any(np.diff(xs) <= 0):
        raise ConfigError("x-grid must be strictly increasing")
    return xs


def _levy(value) -> LevySpec:
    if isinstance(value, dict):
        return LevySpec.from_dict(value)
    text = str(value)
    p = Path(text)
    if not text.lstrip().startswith("{") and p.exists():
        text = p.read_text()
    return LevySpec.from_json(text)


def _slowly_varying(text: str):
    text = (text or "one").strip()
    if text == "one":
        return asym.l_one()
    if text.startswith("logpow:"):
        return asym.l_log_power(float(text.split(":", 1)[1]))
    raise ConfigError(f"unknown slowly varying factor {text!r} (one | logpow:<p>)")


def _weights(cfg: RunConfig):
    if cfg.get("poisson") is not None:
        return poisson_weights(float(cfg.get("poisson")))
    w = cfg.get("weights")
    if w is None:
        raise ConfigError("need --weights or --poisson")
    if isinstance(w, str):
        w = [float(v) for v in w.split(",")]
    return CompoundWeights(np.asarray(w, dtype=float), eps1=float(cfg.get("eps1", 0.1)))


# --------------------------------------------------------------------------------------
# output


def _table_csv(columns: dict[str, np.ndarray]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(columns)
    w.writerow(keys)
    n = len(next(iter(columns.values())))
    for i in range(n):
        w.writerow([f"{float(columns[k][i]):.17g}" for k in keys])
    return buf.getvalue()


class Sink:
    """Writes to ``<out>.csv`` / ``<out>.json`` or to stdout."""

    def __init__(self, out: str | None, fmt: str, stream=None):
        self.out = out
        self.fmt = fmt
        self.stream = stream or sys.stdout

    def emit(self, tag: str, csv_text: str, json_obj):
        if self.out is None:
            if self.fmt in ("csv", "both"):
                self.stream.write(csv_text)
            if self.fmt in ("json", "both"):
                self.stream.write(json.dumps(json_obj, indent=2, default=float) + "\n")
            return
        stem = Path(self.out)
        if tag:
            stem = stem.with_name(f"{stem.name}_{tag}")
        stem.parent.mkdir(parents=True, exist_ok=True)
        if self.fmt in ("csv", "both"):
            stem.with_suffix(".csv").write_text(csv_text)
        if self.fmt in ("json", "both"):
            stem.with_suffix(".json").write_text(json.dumps(json_obj, indent=2, default=float))

    def report(self, r: diag.DiagnosticReport, tag: str = ""):
        self.emit(tag, r.to_csv(), r.to_dict())


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-._" else "_" for ch in name).strip("_")


# --------------------------------------------------------------------------------------
# commands


def _verdict_code(reports, strict: bool) -> int:
    verdicts = [r.verdict for r in reports]
    if "failed" in verdicts or (strict and "inconclusive" in verdicts):
        return EXIT_FAILED
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig, sink: Sink) -> int:
    cls = cfg.get("cls")
    if cls not in CLASSES:
        raise ConfigError(f"--class must be one of {', '.join(CLASSES)}")
    xs = parse_grid(cfg.get("x", "log:10,1000,24"))
    tol = float(cfg.get("tol", diag.DEFAULT_TOL))
    if tol <= 0:
        raise ConfigError("tolerance must be positive")
    c = float(cfg.get("c", 1.0))
    if cls == "ow":
        spec = _levy(cfg.get("levy"))
        regime = cfg.get("regime")
        alpha = cfg.get("alpha")
        reports = [diag.check_omey_willekens(spec, regime, xs, tol=tol,
                                             alpha=None if alpha is None else float(alpha))]
    else:
        if cfg.get("levy") is not None:
            law = compound_poisson(_levy(cfg.get("levy")))
        else:
            law = parse_law(cfg.get("law") or "")
        if cls == "lloc":
            reports = [diag.check_Lloc(law, xs, c, tol=tol)]
        elif cls == "sloc":
            reports = [diag.check_Sloc(law, xs, c, tol=tol)]
        elif cls == "s2loc":
            reports = [diag.check_S2loc(law, xs, tol=tol)]
        elif cls == "s2loc-hyp":
            reports = [diag.check_S2loc_hypotheses(law, xs, tol=tol)]
        elif cls == "sd":
            reports = [diag.check_Sd(law, xs, tol=tol)]
        elif cls == "s2d":
            reports = [diag.check_S2d(law, xs, tol=tol)]
        else:
            reports = list(diag.check_remark12(law, float(cfg.get("t0", 1.0)), xs, tol=tol))
    for i, r in enumerate(reports):
        sink.report(r, tag="" if len(reports) == 1 else f"t{i}")
        print(r.summary(), file=sys.stderr)
    return _verdict_code(reports, bool(cfg.get("strict", False)))


def cmd_predict(cfg: RunConfig, sink: Sink) -> int:
    rel = cfg.get("relation")
    if rel not in RELATIONS:
        raise ConfigError(f"--relation must be one of {', '.join(RELATIONS)}")
    xs = parse_grid(cfg.get("x", "log:10,1000,24"))
    t = float(cfg.get("t", 1.0))
    mean = cfg.get("mean")
    mean = None if mean is None else float(mean)
    if rel == "prop6.1":
        rv = asym.RegVaryingTail(float(cfg.get("alpha", 1.0)), _slowly_varying(cfg.get("l")))
        law = cfg.get("law")
        mu_tail = parse_law(law).tail if law else None
        pred = asym.predict_rv(rv, mean, t, mu_tail=mu_tail, regime=cfg.get("regime"))
        a, b = pred.nu_from_mu.table(xs), pred.power.table(xs)
        cols = {"x": xs, "leading": a["leading"], "correction": a["correction"],
                "normalizer": a["normalizer"], "power_leading": b["leading"],
                "power_correction": b["correction"]}
        sink.emit("", _table_csv(cols), {"relation": rel, "regime": pred.regime, "t": t,
                                         **{k: np.asarray(v).tolist() for k, v in cols.items()}})
        print(f"regime ({pred.regime})", file=sys.stderr)
        return EXIT_OK
    if cfg.get("levy") is not None and rel in ("eq1.3", "eq4.6"):
        law = _levy(cfg.get("levy"))
        if mean is None:
            mean = compound_poisson(law).mean()
    else:
        law = parse_law(cfg.get("law") or "")
    if rel == "eq1.2":
        p = asym.predict_nu_from_mu(law, mean=mean)
    elif rel == "eq1.3":
        if mean is None:
            raise ConfigError("eq1.3 needs --mean (m(mu))")
        p = asym.predict_mu_from_nu(law, mean)
    elif rel == "eq1.4":
        p = asym.predict_power(law, t, mean=mean)
    elif rel == "eq2.1":
        p = asym.predict_compound(_weights(cfg), law, mean=mean)
    elif rel == "eq4.5":
        p = asym.predict_density_versions(law, "nu-from-mu", m_mu=mean)
    else:
        p = asym.predict_density_versions(law, "mu-from-nu", m_mu=mean)
    cols = p.table(xs)
    sink.emit("", _table_csv(cols), {"relation": rel, "tag": p.tag,
                                     **{k: np.asarray(v).tolist() for k, v in cols.items()}})
    return EXIT_OK


def cmd_invert(cfg: RunConfig, sink: Sink) -> int:
    if cfg.get("levy") is not None:
        spec = _levy(cfg.get("levy"))
    else:
        jump = cfg.get("jump")
        if jump is None:
            raise ConfigError("need --levy or --jump")
        delta = float(cfg.get("delta", 0.5))
        cutoff = float(cfg.get("cutoff", 1.0))
        step = float(cfg.get("step", 0.01))
        if jump.startswith("atom:"):
            j = point_mass(float(jump.split(":", 1)[1]), step)
        else:
            j = parse_law(jump)
        spec = LevySpec(cutoff, delta, j)
    if not spec.delta < math.log(2):
        raise ConfigError(f"delta={spec.delta!r} must be below ln 2 for the inversion")
    step = float(cfg.get("step", 0.01))
    size = int(cfg.get("size", 4000))
    sigma = sigma_from_spec(spec, step=step, size=size, budget=float(cfg.get("budget", 1e-14)))
    eta, rep = invert_levy(sigma, spec.delta, return_report=True)
    grid = jump_grid(spec, step, size)
    ts = np.asarray(cfg.get("ts", [0.1, 0.3, 1.0, 3.0, 10.0]), dtype=float)
    atomic = isinstance(spec.jump, GriddedMeasure)
    reading = "lattice" if atomic else "midpoint"
    rows = {"t": ts, "input": [], "recovered": [], "difference": [], "bound": []}
    for t in ts:
        a, ea = laplace(spec.jump, t, reading=reading)
        b, eb = laplace(eta, t, reading=reading)
        rows["input"].append(a)
        rows["recovered"].append(b)
        rows["difference"].append(b - a)
        rows["bound"].append(ea + eb)
    rows = {k: np.asarray(v, dtype=float) for k, v in rows.items()}
    sink.emit("laplace", _table_csv(rows), {k: v.tolist() for k, v in rows.items()})
    sink.emit("measure", "", {"measure": eta.to_dict(), "terms": rep.terms,
                              "dropped": rep.dropped, "negative_mass": rep.negative_mass,
                              "clamped_cells": rep.clamped_cells})
    worst = float(np.max(np.abs(rows["difference"])))
    print(f"max Laplace difference {worst:.3e} ({rep.terms} terms, "
          f"{rep.clamped_cells} cells clamped)", file=sys.stderr)
    return EXIT_OK


def cmd_validate(cfg: RunConfig, sink: Sink) -> int:
    ex = cfg.get("example")
    if ex is None:
        raise ConfigError("need --example")
    names = (["lognormal", "weibull(0.5)", "pareto(2)", "pareto_rv(1)"]
             if ex == "all" else [ex])
    xs = cfg.get("x")
    xs = None if xs is None else parse_grid(xs)
    tol = float(cfg.get("tol", diag.DEFAULT_TOL))
    reports = []
    for name in names:
        for r in diag.validate_example(name, xs, tol=tol):
            reports.append(r)
            sink.report(r, tag=_safe(r.name))
            print(r.summary(), file=sys.stderr)
    return _verdict_code(reports, bool(cfg.get("strict", False)))


def cmd_convolve(cfg: RunConfig, sink: Sink) -> int:
    xs = parse_grid(cfg.get("x", "log:10,1000,24"))
    law = parse_law(cfg.get("law") or "")
    folds = Folds(law)
    if cfg.get("n") is not None:
        n = int(cfg.get("n"))
        if n < 0:
            raise ConfigError("n must be nonnegative")
        w = np.zeros(n + 1)
        w[n] = 1.0
        weights = CompoundWeights(w, probability=True)
    else:
        weights = _weights(cfg)
    val, err = compound_tail(weights, law, xs, folds=folds, return_error=True)
    cols = {"x": xs, "tail": np.asarray(val), "err_estimate": np.asarray(err)}
    sink.emit("", _table_csv(cols), {k: v.tolist() for k, v in cols.items()})
    return EXIT_OK


COMMANDS = {"diagnose": cmd_diagnose, "predict": cmd_predict, "invert": cmd_invert,
            "validate": cmd_validate, "convolve": cmd_convolve}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subexp2", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with option values; flags win")
        sp.add_argument("--out", help="output path prefix (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json", "both"))
        sp.add_argument("--x", help="x-grid: log:start,stop,count or a comma list")
        sp.add_argument("--tol", type=float)
        sp.add_argument("--budget", type=float, help="series truncation budget")
        sp.add_argument("--law", help="pareto:alpha=<a> | weibull:beta=<b> | lognormal | "
                                      "exp:rate=<r> | pareto1:alpha=<a>,scale=<s> | logtail")
        sp.add_argument("--levy", help="LevySpec JSON text or file")
        return sp

    d = common(sub.add_parser("diagnose", help="class-membership diagnostics"))
    d.add_argument("--class", dest="cls", choices=CLASSES)
    d.add_argument("--c", type=float)
    d.add_argument("--t0", type=float)
    d.add_argument("--regime", choices=("i", "ii", "iii", "iv"))
    d.add_argument("--alpha", type=float)
    d.add_argument("--strict", action="store_true", default=None,
                   help="treat inconclusive as failure")

    pr = common(sub.add_parser("predict", help="second-order predictors"))
    pr.add_argument("--relation", choices=RELATIONS)
    pr.add_argument("--t", type=float)
    pr.add_argument("--mean", type=float)
    pr.add_argument("--alpha", type=float)
    pr.add_argument("--l", help="slowly varying factor: one | logpow:<p>")
    pr.add_argument("--regime", choices=("i", "ii", "iii", "iv"))
    pr.add_argument("--weights", help="comma-separated p_0,p_1,...")
    pr.add_argument("--poisson", type=float, help="Poisson(delta) weights")

    iv = common(sub.add_parser("invert", help="recover the jump law from sigma"))
    iv.add_argument("--jump", help="law spec or atom:<a>")
    iv.add_argument("--delta", type=float)
    iv.add_argument("--cutoff", type=float)
    iv.add_argument("--step", type=float)
    iv.add_argument("--size", type=int)

    va = common(sub.add_parser("validate", help="worked examples"))
    va.add_argument("--example", help="lognormal | weibull(b) | pareto(a) | pareto_rv(a) | all")
    va.add_argument("--strict", action="store_true", default=None)

    cv = common(sub.add_parser("convolve", help="n-fold or compound tails"))
    cv.add_argument("--n", type=int)
    cv.add_argument("--weights")
    cv.add_argument("--poisson", type=float)
    return p


def load_config(args) -> RunConfig:
    opts: dict = {}
    if args.config:
        try:
            opts.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        if "class" in opts and "cls" not in opts:
            opts["cls"] = opts.pop("class")
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        opts[k] = v
    return RunConfig(args.command, opts)


def main(argv=None, stream=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        cfg = load_config(args)
        sink = Sink(cfg.get("out"), cfg.get("format", "csv"), stream)
        return COMMANDS[cfg.command](cfg, sink)
    except (ValueError, KeyError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main_entry() -> None:  # console-script wrapper
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
