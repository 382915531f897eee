"""Analysis configuration, dispatch to the analyses and JSON reports."""

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .contraction import (MetricField, contraction_margin, demidovic_certify, sweep_rho)
from .convergent import check_convergence, find_reference, verify_convergent_lyapunov
from .dsl import parse_candidate, parse_system
from .errors import ConfigError, ConvergeError, ReferenceFailure
from .incremental import falsify_incremental, fit_exp_rate, verify_incremental_lyapunov
from .registry import PROPERTY_FLAGS, load_registry
from .sampling import as_box, default_grid, random_pair_grid, random_points
from .verdict import Status, Verdict, _num

SCHEMA_VERSION = 1
PROPERTIES = ("incremental", "exponential-incremental", "convergent", "contraction", "demidovic",
              "lyapunov-check")
CERTIFYING = ("contraction", "demidovic", "lyapunov-check")
MODE_FLAGS = {"incremental": "IS", "convergent": "CD", "contraction": "CA"}


@dataclass
class AnalysisConfig:
    system: str
    property: str
    box: Any = 1.0
    horizon: int = 20
    budget: int = 1000
    seed: int = 42
    k0_range: Any = (0, 0)
    k_range: Any = (-20, 20)
    per_axis: int = 41
    window: Any = (0, 100)
    washout: int = 100
    tol: float = 1e-7
    fit_window: Any = None
    probe_box: Any = 1.0
    samples: int = 10000
    candidate: Optional[str] = None
    metric: Optional[str] = None
    rho: Optional[float] = None
    base_dir: str = field(default=".", repr=False)

    def echo(self):
        d = asdict(self)
        d.pop("base_dir")
        return {k: _num(list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


_FIELDS = {f for f in AnalysisConfig.__dataclass_fields__ if f != "base_dir"}
_INTS = {"horizon", "budget", "seed", "per_axis", "washout", "samples"}
_FLOATS = {"tol", "rho"}


def _value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if ";" in text:
        return [_value(part) for part in text.split(";")]
    if "," in text:
        return [_value(part) for part in text.split(",")]
    return text


def _coerce(key, value, line):
    try:
        if key in _INTS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if key in _FLOATS:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"line {line}: {key} expects a number, got {value!r}") from None
    return value


def build_config(settings, base_dir=".", origin=None):
    """Validate a mapping of settings into an :class:`AnalysisConfig`."""
    origin = origin or {}
    values = {}
    for key, value in settings.items():
        if key not in _FIELDS:
            raise ConfigError(f"line {origin.get(key, '?')}: unknown key {key!r}")
        values[key] = _coerce(key, value, origin.get(key, "?"))
    for key in ("system", "property"):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    if values["property"] not in PROPERTIES:
        raise ConfigError(f"line {origin.get('property', '?')}: unknown property {values['property']!r} "
                          f"(choose from {', '.join(PROPERTIES)})")
    if values.get("budget", 1) < 1:
        raise ConfigError("budget must be at least 1")
    if values["property"] == "lyapunov-check" and "candidate" not in values:
        reg = load_registry()
        if values["system"] not in reg:
            raise ConfigError("lyapunov-check needs a candidate")
    return AnalysisConfig(base_dir=str(base_dir), **values)


def parse_config_text(text, base_dir="."):
    settings, origin = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in settings:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        settings[key] = _value(value)
        origin[key] = lineno
    return settings, origin


def resolve_settings(settings):
    """Registry defaults for builtin systems, overridden by ``settings``."""
    reg = load_registry()
    merged = {}
    name, prop = settings.get("system"), settings.get("property")
    if name in reg and prop in PROPERTIES:
        merged.update(reg[name].settings_for(prop))
    merged.update(settings)
    return merged


def load_config(path, overrides=None):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    settings, origin = parse_config_text(text, path.parent)
    settings.update(overrides or {})
    return build_config(resolve_settings(settings), path.parent, origin)


def _load_system(cfg):
    reg = load_registry()
    if cfg.system in reg:
        return reg[cfg.system].system(), reg[cfg.system]
    path = Path(cfg.base_dir) / cfg.system
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read system {path}: {exc}") from None
    return parse_system(text, name=path.stem), None


def _load_candidate(cfg, example, mode_hint=None):
    if cfg.candidate:
        path = Path(cfg.base_dir) / cfg.candidate
        try:
            return parse_candidate(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read candidate {path}: {exc}") from None
    if example is not None and example.candidates:
        mode = mode_hint if mode_hint in example.candidates else sorted(example.candidates)[0]
        return example.candidate(mode)
    raise ConfigError("lyapunov-check needs a candidate")


# -- analyses ---------------------------------------------------------------

def _failure(exc):
    kind = getattr(exc, "kind", type(exc).__name__)
    return Verdict(Status.FAILURE, notes=(f"{kind}: {exc}",))


def _incremental(defn, cfg, threads):
    rep = falsify_incremental(defn, cfg.box, tuple(cfg.k0_range), cfg.horizon, cfg.budget, cfg.seed,
                              threads=threads)
    return rep, {"analysis": "falsify_incremental", "verdict": rep.verdict.to_dict(),
                 "envelope_csv": rep.envelope.to_csv()}


def run_incremental(defn, cfg, threads):
    rep, section = _incremental(defn, cfg, threads)
    v = rep.verdict
    evidence = False if v.status == Status.FALSIFIED else (True if rep.envelope.decays() else None)
    return v, evidence, [section]


def run_exponential(defn, cfg, threads):
    rep, section = _incremental(defn, cfg, threads)
    if rep.verdict.status == Status.FALSIFIED:
        return rep.verdict, False, [section]
    window = None if cfg.fit_window is None else tuple(cfg.fit_window)
    try:
        fit = fit_exp_rate(rep.seps, window)
    except ValueError as exc:
        v = Verdict(Status.INCONCLUSIVE, samples_used=len(rep.s0), notes=(f"rate fit failed: {exc}",))
        return v, None, [section, {"analysis": "fit_exp_rate", "verdict": v.to_dict()}]
    constants = {"kappa": fit.kappa, "lambda": fit.lam, "residual": fit.residual}
    if fit.exponential:
        v = Verdict(Status.CERTIFIED, constants=constants, samples_used=len(rep.s0), scope="samples")
        evidence = True
    else:
        v = Verdict(Status.INCONCLUSIVE, constants=constants, samples_used=len(rep.s0),
                    notes=("decay is not exponential on the fit window",))
        evidence = False
    return v, evidence, [section, {"analysis": "fit_exp_rate", "verdict": v.to_dict(), "rate": fit.to_dict()}]


def _reference(defn, cfg):
    return find_reference(defn, tuple(cfg.window), cfg.washout, None, cfg.tol, cfg.probe_box)


def run_convergent(defn, cfg, threads):
    try:
        ref = _reference(defn, cfg)
    except ReferenceFailure as exc:
        v = _failure(exc)
        return v, False, [{"analysis": "find_reference", "verdict": v.to_dict(), "failure": exc.kind}]
    ref_section = {"analysis": "find_reference", "reference": {
        "k_start": ref.k_start, "k_end": ref.k_end, "bound": _num(ref.bound), "washout": ref.washout,
        "agreement": _num(ref.agreement)}, "reference_csv": ref.to_csv()}
    K = cfg.horizon
    if ref.k_end - ref.k_start < K:
        raise ConfigError("reference window shorter than the horizon")
    rng = np.random.default_rng(cfg.seed)
    box = as_box(cfg.box, defn.n)
    k0 = rng.integers(ref.k_start, ref.k_end - K + 1, size=cfg.budget)
    xi = rng.uniform(box[:, 0], box[:, 1], size=(cfg.budget, defn.n))
    rep = check_convergence(defn, ref, (k0, xi), K, threads)
    section = {"analysis": "check_convergence", "verdict": rep.verdict.to_dict(),
               "envelope_csv": rep.envelope.to_csv(),
               "rate": None if rep.rate is None else rep.rate.to_dict()}
    status = rep.verdict.status
    evidence = True if status == Status.CERTIFIED else (False if status == Status.FALSIFIED else None)
    return rep.verdict, evidence, [ref_section, section]


def _metric(defn, cfg):
    kind = cfg.metric or ("expression" if defn.theta is not None else "identity")
    if kind == "identity":
        return MetricField.identity(defn.n)
    if kind == "expression":
        return MetricField.from_system(defn)
    if kind == "q-builder":
        return MetricField.q_builder(defn)
    raise ConfigError(f"unknown metric {kind!r} (identity, expression, q-builder)")


def _grid(defn, cfg):
    return default_grid(defn, cfg.box, cfg.per_axis, tuple(cfg.k_range), cfg.samples, cfg.seed)


def run_contraction(defn, cfg, threads):
    metric = _metric(defn, cfg)
    try:
        res = contraction_margin(defn, metric, _grid(defn, cfg))
    except ConvergeError as exc:
        v = _failure(exc)
        return v, False, [{"analysis": "contraction_margin", "metric": metric.kind, "verdict": v.to_dict()}]
    section = {"analysis": "contraction_margin", "metric": metric.kind, "verdict": res.verdict.to_dict(),
               "certificate": res.certificate.to_dict()}
    return res.verdict, res.verdict.status == Status.CERTIFIED, [section]


def run_demidovic(defn, cfg, threads):
    grid = _grid(defn, cfg)
    rhos = (cfg.rho,) if cfg.rho is not None else (0.9, 0.7, 0.5, 0.3, 0.1)
    sweep = sweep_rho(defn, grid, rhos, seed=cfg.seed)
    tried = [{"rho": r, "found": not isinstance(p, Exception),
              "best_g": None if not isinstance(p, Exception) else _num(p.best_g)} for r, p in sweep.results]
    if sweep.best_rho is None:
        v = Verdict(Status.FAILURE, notes=("no P found for any rho",))
        return v, None, [{"analysis": "search_P", "sweep": tried, "verdict": v.to_dict()}]
    res = demidovic_certify(defn, sweep.best_P, sweep.best_rho, grid)
    section = {"analysis": "demidovic_certify", "sweep": tried, "verdict": res.verdict.to_dict(),
               "certificate": res.certificate.to_dict()}
    return res.verdict, (True if res.verdict.status == Status.CERTIFIED else None), [section]


def run_lyapunov(defn, cfg, threads, example=None):
    cand = _load_candidate(cfg, example)
    box = as_box(cfg.box, defn.n)
    k_range = (0, 0) if defn.time_invariant else tuple(cfg.k_range)
    if cand.mode == "convergent":
        try:
            ref = _reference(defn, cfg)
        except ReferenceFailure as exc:
            v = _failure(exc)
            return v, None, [{"analysis": "verify_convergent_lyapunov", "verdict": v.to_dict()}], cand.mode
        lo, hi = max(ref.k_start, k_range[0]), min(ref.k_end, k_range[1])
        grid = random_points(box, cfg.samples, (lo, max(lo, hi)), cfg.seed)
        v = verify_convergent_lyapunov(defn, cand, ref, grid)
    else:
        v = verify_incremental_lyapunov(defn, cand, random_pair_grid(box, cfg.samples, k_range, cfg.seed))
    section = {"analysis": f"verify_{cand.mode}_lyapunov", "mode": cand.mode, "verdict": v.to_dict()}
    return v, (True if v.status == Status.CERTIFIED else None), [section], cand.mode


RUNNERS = {
    "incremental": run_incremental,
    "exponential-incremental": run_exponential,
    "convergent": run_convergent,
    "contraction": run_contraction,
    "demidovic": run_demidovic,
}


def expectation(expected, observed):
    if expected is None or observed is None:
        return "INCONCLUSIVE"
    return "MATCH" if expected == observed else "MISMATCH"


def determinism_hash(report):
    body = {k: v for k, v in report.items() if k not in ("timing", "runtime", "determinism_hash")}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def run(cfg, threads=1):
    """Run one configured analysis and return the report as a dict."""
    start = time.perf_counter()
    defn, example = _load_system(cfg)
    flag = PROPERTY_FLAGS.get(cfg.property)
    if cfg.property == "lyapunov-check":
        verdict, evidence, sections, mode = run_lyapunov(defn, cfg, threads, example)
        flag = MODE_FLAGS.get(mode)
    else:
        verdict, evidence, sections = RUNNERS[cfg.property](defn, cfg, threads)
    exp = None
    if example is not None:
        expected = example.expected.get(flag)
        exp = {"property": flag, "expected": expected, "observed": evidence,
               "result": expectation(expected, evidence)}
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "converge", "version": __version__},
        "config": cfg.echo(),
        "system": {"name": defn.name, "n": defn.n, "source": defn.source()},
        "verdict": verdict.to_dict(),
        "sections": sections,
        "expectation": exp,
        "runtime": {"threads": int(threads)},
        "timing": {"seconds": time.perf_counter() - start},
    }
    report["determinism_hash"] = determinism_hash(report)
    return report


def exit_code(report):
    exp = report.get("expectation")
    if exp is not None and exp["result"] == "MISMATCH":
        return 1
    if exp is None and report["config"]["property"] in CERTIFYING:
        if report["verdict"]["status"] in ("Falsified", "Violation", "Failure"):
            return 1
    return 0


def to_json(report):
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def envelope_csvs(report):
    """``(analysis, csv_text)`` for every section carrying an envelope."""
    return [(s["analysis"], s["envelope_csv"]) for s in report["sections"] if s.get("envelope_csv")]


def gnuplot_script(csv_path):
    return (
        "set datafile separator ','\n"
        "set key off\n"
        "set logscale y\n"
        "set xlabel 'lag'\n"
        "set ylabel 'max separation'\n"
        f"plot '{csv_path}' every ::1 using 2:3:1 with linespoints palette\n"
    )
