"""Acceptance criteria, one test each, printing a pass/fail line per criterion."""

import numpy as np
import pytest

from converge.cli import main
from converge.contraction import (MetricField, build_Q, contraction_margin, curve_length, demidovic_certify,
                                  metric_bounds, search_P)
from converge.convergent import ReferenceTrajectory, check_convergence, find_reference, verify_convergent_lyapunov
from converge.dsl import parse_system
from converge.dsl.system import eval_jacobian_batch
from converge.dynamics import fd_jacobian_batch, simulate, transfer_matrix
from converge.errors import PSearchFailure, Unbounded
from converge.incremental import build_envelope, falsify_incremental, fit_exp_rate
from converge.matrix_kit import cholesky, sym_eig
from converge.registry import check_rules
from converge.report import build_config, run
from converge.sampling import as_box, default_grid, random_points
from converge.verdict import Status

from conftest import AFFINE, LINEAR, affine_reference, ex2_closed_form, ex3_closed_form

CASES = 1000


class Criterion:
    """Collects named checks and prints one summary line."""

    def __init__(self, number, title):
        self.number, self.title, self.failed = number, title, []

    def check(self, name, ok):
        if not ok:
            self.failed.append(name)

    def finish(self, capsys):
        status = "PASS" if not self.failed else "FAIL (" + "; ".join(self.failed) + ")"
        with capsys.disabled():
            print(f"\ncriterion {self.number} [{self.title}]: {status}")
        assert not self.failed, self.failed


def test_criterion_1_example_one(capsys, ex1, registry):
    c = Criterion(1, "rotating half-gain map")
    for M in (10.0, 100.0, 1000.0):
        a = simulate(ex1, 0, [M, 0.0], 1).at(1)
        b = simulate(ex1, 0, [M + np.pi, 0.0], 1).at(1)
        c.check(f"distance for M={M:g}", abs(np.linalg.norm(a - b) - (M + np.pi / 2)) <= 1e-9)
    rep = falsify_incremental(ex1, 1000.0, K=20, budget=2000)
    c.check("falsify_incremental Falsified", rep.verdict.status == Status.FALSIFIED)
    origin = ReferenceTrajectory.from_point(ex1, [0.0, 0.0], (0, 1))
    grid = random_points(as_box(1000.0, 2), 10_000)
    v = verify_convergent_lyapunov(ex1, registry["ex1"].candidate("convergent"), origin, grid)
    c.check("Lyapunov candidate Certified-on-grid", v.label == "Certified-on-grid" and v.samples_used == 10_000)
    c.finish(capsys)


def test_criterion_2_example_two(capsys, ex2):
    c = Criterion(2, "affine drift")
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        k0 = int(rng.integers(-40, 40))
        xi = float(rng.uniform(-10, 10))
        traj = simulate(ex2, k0, [xi], 40 - k0)
        worst = max(worst, float(np.max(np.abs(traj.states[:, 0] - ex2_closed_form(traj.times, k0, xi)))))
    c.check(f"closed form (max err {worst:.2e})", worst <= 1e-9)
    rep = falsify_incremental(ex2, 10.0, (-20, 20), K=20, budget=1000)
    fit = fit_exp_rate(rep.series(), (0, 20))
    c.check(f"lambda={fit.lam!r}", abs(fit.lam - 2) <= 1e-6)
    c.check(f"kappa={fit.kappa!r}", abs(fit.kappa - 1) <= 1e-6)
    try:
        find_reference(ex2)
        c.check("find_reference Unbounded", False)
    except Unbounded:
        pass
    res = contraction_margin(ex2, MetricField.identity(1), default_grid(ex2, 10.0))
    c.check(f"mu={res.certificate.mu!r}", abs(res.certificate.mu - 0.75) <= 1e-12)
    c.finish(capsys)


def test_criterion_3_example_three(capsys, ex3):
    c = Criterion(3, "sub-exponential convergence")
    ks = np.arange(101)
    worst = 0.0
    for xi in np.linspace(-5, 5, 21):
        traj = simulate(ex3, 0, [xi], 100)
        worst = max(worst, float(np.max(np.abs(traj.states[:, 0] - ex3_closed_form(ks, 0, xi)))))
    c.check(f"closed form (max err {worst:.2e})", worst <= 1e-9)
    origin = ReferenceTrajectory.from_point(ex3, [0.0], (0, 200))
    rng = np.random.default_rng(3)
    conv = check_convergence(ex3, origin, (rng.integers(0, 100, 1000), rng.uniform(-1, 1, (1000, 1))), 100)
    c.check("check_convergence certified", conv.verdict.label == "Certified-on-samples")
    rep = falsify_incremental(ex3, 10.0, K=100, budget=1000)
    fit = fit_exp_rate(rep.series(), (50, 100))
    c.check(f"lambda={fit.lam:.4f} <= 1.02", fit.lam <= 1.02)
    grid = default_grid(ex3, 1.0)
    for rho in (0.1, 0.3, 0.5, 0.7, 0.9):
        d = demidovic_certify(ex3, [[1.0]], rho, grid)
        c.check(f"demidovic rho={rho}", d.verdict.status != Status.CERTIFIED
                and abs(d.verdict.witness.xi1[0]) <= 0.1)
        try:
            search_P(ex3, grid, rho)
            c.check(f"search_P rho={rho}", False)
        except PSearchFailure as exc:
            c.check(f"search_P witness rho={rho}", abs(exc.worst_point["x"][0]) <= 0.1)
    c.finish(capsys)


def test_criterion_4_degenerate_metric(capsys, ex4):
    c = Criterion(4, "shrinking metric")
    mb = metric_bounds(MetricField.from_system(ex4), default_grid(ex4, 10.0, k_range=(0, 100)))
    c.check(f"eta={mb.eta:.4g} <= 1e-8", mb.eta <= 1e-8)
    c.check("Violation", mb.verdict.status == Status.VIOLATION)
    x = simulate(ex4, 0, [1.0], 20).states[:, 0]
    c.check("monotone growth", bool(np.all(np.diff(x) >= 0) and x[-1] > 1e10))
    c.finish(capsys)


def test_criterion_5_demidovic_pipeline(capsys):
    c = Criterion(5, "Demidovic pipeline")
    affine = parse_system(AFFINE, name="affine")
    res = demidovic_certify(affine, [[1.0]], 0.25, default_grid(affine, 10.0))
    c.check("Certified", res.verdict.status == Status.CERTIFIED)
    c.check(f"worst_margin={res.certificate.worst_margin:.3g}", res.certificate.worst_margin <= 1e-12)
    c.check(f"c={res.certificate.c!r}", abs(res.certificate.c - 1) <= 1e-6)
    rep = falsify_incremental(affine, 10.0, (-20, 20), K=20, budget=1000)
    fit = fit_exp_rate(rep.series())
    c.check(f"lambda={fit.lam!r}", fit.lam >= 2 - 1e-3)
    ref = find_reference(affine, (0, 50), 60, [[-10.0], [0.0], [10.0]], tol=1e-9)
    err = float(np.max(np.abs(ref.trajectory.states[:, 0] - affine_reference(np.arange(51)))))
    c.check(f"reference vs series (err {err:.2e})", err <= 1e-9)
    c.finish(capsys)


def test_criterion_6_q_machinery(capsys, ex2):
    c = Criterion(6, "Q machinery")
    half = parse_system("dim 1\nf1 = 0.5*x1\n")
    Q, _ = build_Q(half, [1.0], 0)
    c.check(f"scalar Q={Q[0, 0]!r}", abs(Q[0, 0] - 4 / 3) <= 1e-10)
    A = np.array([[0.5, 0.4], [0.0, 0.5]])
    Q, _ = build_Q(parse_system(LINEAR), [0.0, 0.0], 0, M=200)
    resid = np.linalg.norm(A.T @ Q @ A - Q + np.eye(2))
    c.check(f"Lyapunov residual {resid:.2e}", resid <= 1e-8)
    q_metric = MetricField.q_builder(ex2)
    lengths = np.array([curve_length(ex2, q_metric, [3.0], [-1.0], 0, k) for k in range(10)])
    ratios = lengths[1:] / lengths[:-1]
    c.check("curve length ratios 1/2", bool(np.all(np.abs(ratios - 0.5) <= 1e-9)))
    c.finish(capsys)


def test_criterion_7_property_suites(capsys, registry):
    c = Criterion(7, f"property suites, {CASES} cases each")
    rng = np.random.default_rng(7)
    systems = [registry[n].system() for n in ("ex1", "ex2", "ex3")]

    bad = 0
    for _ in range(CASES):
        defn = systems[rng.integers(3)]
        k0, a, b = int(rng.integers(-20, 20)), int(rng.integers(0, 25)), int(rng.integers(0, 25))
        xi = rng.uniform(-5, 5, defn.n)
        direct = simulate(defn, k0, xi, a + b).at(k0 + a + b)
        mid = simulate(defn, k0, xi, a).at(k0 + a)
        bad += not np.array_equal(simulate(defn, k0 + a, mid, b).at(k0 + a + b), direct)
    c.check(f"semigroup ({bad} failures)", bad == 0)

    bad = 0
    for _ in range(CASES):
        defn = systems[rng.integers(3)]
        k0, a, b = int(rng.integers(-10, 10)), int(rng.integers(0, 12)), int(rng.integers(0, 12))
        xi = rng.uniform(-3, 3, defn.n)
        mid = simulate(defn, k0, xi, a).at(k0 + a)
        full = transfer_matrix(defn, k0, k0 + a + b, xi).matrix
        split = transfer_matrix(defn, k0 + a, k0 + a + b, mid).matrix @ transfer_matrix(defn, k0, k0 + a, xi).matrix
        bad += np.linalg.norm(full - split) > 1e-9 * (1 + np.linalg.norm(full))
    c.check(f"cocycle ({bad} failures)", bad == 0)

    bad = 0
    for name in ("ex1", "ex2", "ex3", "ex4"):
        defn = registry[name].system()
        X = rng.uniform(-3, 3, (CASES, defn.n))
        K = rng.integers(-10, 10, CASES).astype(float)
        J, nonsmooth, _ = eval_jacobian_batch(defn, K, X)
        for i in range(CASES):
            Jfd = fd_jacobian_batch(defn, K[i], X[i:i + 1])[0]
            bad += np.max(np.abs(J[i] - Jfd)) > 1e-5 * (1 + np.linalg.norm(J[i]))
        bad += int(nonsmooth.sum())
    c.check(f"AD vs FD ({bad} failures)", bad == 0)

    bad = 0
    for _ in range(CASES):
        n = int(rng.integers(1, 9))
        S = rng.uniform(-10, 10, (n, n))
        S = 0.5 * (S + S.T)
        dec = sym_eig(S)
        w, V = dec.values, dec.vectors
        norm = np.linalg.norm(S, 2)
        res = np.linalg.norm(S @ V - V * w, axis=0).max()
        bad += res > 1e-10 * norm or abs(w.sum() - np.trace(S)) > 1e-10 * norm or np.any(np.diff(w) < 0)
    c.check(f"eigensolver ({bad} failures)", bad == 0)

    bad = 0
    for _ in range(CASES):
        n = int(rng.integers(1, 9))
        R = np.triu(rng.uniform(-1, 1, (n, n)), 1) + np.diag(rng.uniform(0.5, 2, n))
        bad += np.max(np.abs(cholesky(R.T @ R) - R)) > 1e-9
    c.check(f"Cholesky round trip ({bad} failures)", bad == 0)

    bad = 0
    for _ in range(CASES):
        N, K = int(rng.integers(1, 80)), int(rng.integers(1, 10))
        s0 = rng.exponential(size=N)
        env = build_envelope(s0, np.column_stack([s0, rng.exponential(size=(N, K))]), int(rng.integers(1, 20)))
        bad += np.any(np.diff(env.values, axis=0) < 0) or np.any(np.diff(env.s_edges) <= 0)
    c.check(f"envelope monotonicity ({bad} failures)", bad == 0)

    bad = 0
    props = ("incremental", "exponential-incremental", "contraction")
    for _ in range(CASES):
        name = ("ex1", "ex2", "ex3", "ex4")[rng.integers(4)]
        prop = props[rng.integers(3)]
        settings = {"system": name, "property": prop, "seed": int(rng.integers(2**31)),
                    "box": float(rng.uniform(0.5, 50))}
        if prop == "contraction":
            settings.update(per_axis=int(rng.integers(2, 6)), k_range=[0, int(rng.integers(0, 3))],
                            metric="identity")
        else:
            settings.update(budget=int(rng.integers(257, 700)), horizon=int(rng.integers(2, 6)))
        cfg = build_config(settings)
        bad += run(cfg, 1)["determinism_hash"] != run(cfg, 4)["determinism_hash"]
    c.check(f"report determinism ({bad} failures)", bad == 0)
    c.finish(capsys)


def test_criterion_8_registry_rules(capsys, registry):
    c = Criterion(8, "registry consistency")
    with capsys.disabled():
        code = main(["examples"])
    c.check("converge examples exit 0", code == 0)
    c.check("rule check", check_rules(registry) == [])
    for ex in registry.examples.values():
        if ex.expected.get("CA"):
            c.check(f"{ex.name}: CA implies EIS", ex.expected.get("EIS") is True)
    c.finish(capsys)
