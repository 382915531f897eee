"""Convergent dynamics: bounded reference solutions, attraction tests,
uniqueness probes and Lyapunov candidate checks against a reference."""

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dsl.system import eval_candidate_batch, eval_map_batch
from .dynamics import Trajectory, simulate_batch
from .errors import DimensionMismatch, DivergedProbes, InvalidDomain, NoAgreement, Unbounded
from .incremental import Envelope, RateFit, build_envelope, find_violation, fit_exp_rate, _worst
from .sampling import as_box, box_corners_and_faces, chunked_map
from .verdict import Status, Verdict, Witness, tup

BOUND_LIMIT = 1e6


@dataclass(frozen=True)
class ReferenceTrajectory:
    trajectory: Trajectory
    bound: float
    washout: int
    agreement: float

    @property
    def k_start(self):
        return self.trajectory.k0

    @property
    def k_end(self):
        return self.trajectory.k_end

    def at(self, k):
        """x_ref(k) for one time or an array of times (rows)."""
        k = np.asarray(k)
        if np.any(k < self.k_start) or np.any(k > self.k_end):
            raise InvalidDomain(f"time outside reference window [{self.k_start}, {self.k_end}]")
        return self.trajectory.states[(k - self.k_start).astype(int)]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.trajectory.states.shape[1]
        w.writerow(["k"] + [f"x{i + 1}" for i in range(n)])
        for k, x in zip(self.trajectory.times, self.trajectory.states):
            w.writerow([int(k)] + [repr(float(v)) for v in x])
        return buf.getvalue()

    @classmethod
    def from_point(cls, defn, xi, window):
        """Reference given by the solution through ``xi`` at ``window[0]``
        (for instance an equilibrium known in closed form)."""
        k_start, k_end = window
        states, overflow, _ = simulate_batch(defn, k_start, np.asarray(xi, dtype=float)[None], k_end - k_start)
        if overflow[0] >= 0:
            raise Unbounded(f"solution through {list(np.ravel(xi))} overflows")
        states = states[:, 0, :]
        return cls(Trajectory(int(k_start), states, defn), float(np.max(np.linalg.norm(states, axis=1))), 0, 0.0)


def _unbounded(norms):
    """Overflow-free but escaping: too large, or quarter-window maxima rising
    strictly and more than doubling."""
    if np.max(norms) > BOUND_LIMIT:
        return True
    if len(norms) < 8:
        return False
    sups = np.array([q.max() for q in np.array_split(norms, 4)])
    return bool(np.all(np.diff(sups) > 0) and sups[-1] > 2 * sups[0])


def find_reference(defn, window=(0, 100), washout=100, probes=None, tol=1e-7, box=1.0):
    """Collapse probe trajectories started ``washout`` steps before the window
    onto a single bounded solution.

    Boundedness is judged on the window extended by ``washout`` further steps.

    The returned reference is the probe whose state at the window start is
    closest to the probe mean, so it is an exact solution of the system.
    """
    if washout < 1:
        raise ValueError("washout must be at least 1")
    k_start, k_end = int(window[0]), int(window[1])
    if k_end < k_start:
        raise ValueError("empty window")
    if probes is None:
        pts = box_corners_and_faces(as_box(box, defn.n), 8)
        probes = np.vstack([pts, np.zeros((1, defn.n))])
    probes = np.asarray(probes, dtype=float).reshape(-1, defn.n)
    if len(probes) == 0:
        raise ValueError("no probes")
    # the run continues ``washout`` steps past the window so that growth which
    # a short window straddling a turning point would hide still shows up
    span = k_end - k_start
    states, overflow, _ = simulate_batch(defn, k_start - washout, probes, 2 * washout + span)
    if np.any((overflow >= 0) & (overflow <= washout)):
        raise DivergedProbes(f"{int(np.sum((overflow >= 0) & (overflow <= washout)))} probe(s) overflowed during washout")
    at_start = states[washout]
    diff = at_start[:, None, :] - at_start[None, :, :]
    agreement = float(np.max(np.linalg.norm(diff, axis=2)))
    if agreement > tol:
        raise NoAgreement(agreement)
    pick = int(np.argmin(np.linalg.norm(at_start - at_start.mean(axis=0), axis=1)))
    if overflow[pick] >= 0:
        raise Unbounded("reference overflows")
    ahead = np.linalg.norm(states[washout:, pick, :], axis=1)
    if _unbounded(ahead):
        raise Unbounded(f"reference grows to {float(ahead.max()):.6g} within {washout} steps past the window")
    ref = states[washout:washout + span + 1, pick, :].copy()
    norms = ahead[:span + 1]
    return ReferenceTrajectory(Trajectory(k_start, ref, defn), float(norms.max()), int(washout), agreement)


@dataclass
class ConvergenceReport:
    verdict: Verdict
    envelope: Envelope
    deviations: np.ndarray
    rate: Optional[RateFit]


def deviation_series(defn, ref, K0, XI, K, threads=1):
    """|phi(k0+d; k0, xi) - x_ref(k0+d)| for d = 0..K, +inf after overflow."""
    K0 = np.asarray(K0, dtype=int).ravel()
    XI = np.asarray(XI, dtype=float).reshape(-1, defn.n)
    if np.any(K0 < ref.k_start) or np.any(K0 + K > ref.k_end):
        raise InvalidDomain("sample start times need K steps of room inside the reference window")

    def work(a, b):
        states, overflow, _ = simulate_batch(defn, K0[a:b], XI[a:b], K)
        idx = K0[a:b][None, :] - ref.k_start + np.arange(K + 1)[:, None]
        dev = np.linalg.norm(states - ref.trajectory.states[idx], axis=2).T
        for i in np.nonzero(overflow >= 0)[0]:
            dev[i, overflow[i]:] = np.inf
        return dev

    parts = chunked_map(work, len(K0), threads)
    return np.vstack(parts) if parts else np.zeros((0, K + 1))


def check_convergence(defn, ref, samples, K, threads=1, buckets=16):
    """Attraction of sampled solutions to ``ref``.

    ``samples`` is ``(K0, XI)``. Certified-on-samples when nothing is
    falsified and every envelope bucket stays below its initial deviation over
    the second half of the horizon.
    """
    K0, XI = samples
    dev = deviation_series(defn, ref, K0, XI, K, threads)
    K0 = np.asarray(K0, dtype=int).ravel()
    XI = np.asarray(XI, dtype=float).reshape(-1, defn.n)
    s0 = dev[:, 0].copy()
    envelope = build_envelope(s0, dev, buckets)
    rate = None
    if K >= 2 and np.all(np.isfinite(dev)) and np.any(s0 > 0):
        rate = fit_exp_rate(dev)
    hit = find_violation(s0, dev)
    if hit is not None:
        i, d, observed, allowed, rule = hit
        xr = ref.at(K0[i] + d)
        w = Witness(tup(XI[i]), tup(xr), int(K0[i]), int(K0[i]) + d, observed, allowed, rule)
        return ConvergenceReport(Verdict(Status.FALSIFIED, witness=w, samples_used=len(s0)), envelope, dev, rate)
    if envelope.decays():
        constants = {"decays": True}
        if rate is not None:
            constants.update({"kappa": rate.kappa, "lambda": rate.lam, "exponential": rate.exponential})
        verdict = Verdict(Status.CERTIFIED, constants=constants, samples_used=len(s0), scope="samples")
    else:
        verdict = Verdict(Status.INCONCLUSIVE, samples_used=len(s0))
    return ConvergenceReport(verdict, envelope, dev, rate)


def uniqueness_probe(defn, ref, alt_probes, lookback, tol):
    """Start alternative probes ``lookback`` steps before the window and
    measure how far they land from the reference at the window start."""
    if lookback < 1:
        raise ValueError("lookback must be at least 1")
    probes = np.asarray(alt_probes, dtype=float).reshape(-1, defn.n)
    states, overflow, _ = simulate_batch(defn, ref.k_start - lookback, probes, lookback)
    target = ref.at(ref.k_start)
    bounded = overflow < 0
    residual = np.where(bounded, np.linalg.norm(states[-1] - target, axis=1), -np.inf)
    notes = tuple(f"probe {i} unbounded" for i in np.nonzero(~bounded)[0])
    if not np.any(bounded):
        return Verdict(Status.INCONCLUSIVE, samples_used=0, notes=notes)
    i = int(np.argmax(residual))
    worst = float(residual[i])
    if worst > tol:
        w = Witness(tup(probes[i]), tup(target), ref.k_start - lookback, ref.k_start, worst, float(tol),
                    "uniqueness residual")
        return Verdict(Status.FALSIFIED, witness=w, samples_used=int(bounded.sum()), notes=notes)
    return Verdict(Status.CERTIFIED, constants={"max_residual": worst, "lookback": int(lookback)},
                   samples_used=int(bounded.sum()), scope="samples", notes=notes)


def verify_convergent_lyapunov(defn, cand, ref, grid, c=None, tol=1e-9):
    """Sandwich, decrease and V(k, 0) <= c checks at every grid point ``(k, x)``.

    ``c`` defaults to the candidate's declared value, then to alpha2(ref.bound).
    """
    if cand.mode != "convergent":
        raise ValueError(f"candidate mode {cand.mode!r} is not convergent")
    if cand.n > defn.n:
        raise DimensionMismatch(f"candidate uses dimension {cand.n}, system has {defn.n}")
    K, X = grid
    K = np.asarray(K, dtype=float).ravel()
    X = np.asarray(X, dtype=float).reshape(-1, defn.n)
    xr = ref.at(K.astype(int))
    d = np.linalg.norm(X - xr, axis=1)
    V0, bad0 = eval_candidate_batch(cand, K, X)
    F, bad1 = eval_map_batch(defn, K, X)
    V1, bad2 = eval_candidate_batch(cand, K + 1, F)
    ok = ~(bad0 | bad1 | bad2) & np.isfinite(V0) & np.isfinite(V1)
    a1, a2, a3 = cand.alpha1(d), cand.alpha2(d), cand.alpha3(d)
    dec = V1 - V0
    if c is None:
        c = cand.c if cand.c is not None else float(cand.alpha2(ref.bound))
    ks = np.unique(K)
    Vz, badz = eval_candidate_batch(cand, ks, np.zeros((len(ks), defn.n)))
    okz = ~badz
    checks = [("lower bound", a1, V0, ok), ("upper bound", V0, a2, ok), ("decrease", dec, -a3, ok),
              ("V(k,0) bound", Vz, np.full_like(Vz, c), okz)]
    worst = _worst(checks, tol)
    notes = ()
    if not np.all(ok):
        notes = (f"{int(np.sum(~ok))} grid point(s) skipped after evaluation errors",)
    if worst is not None:
        _, name, i, observed, allowed = worst
        if name == "V(k,0) bound":
            w = Witness((0.0,) * defn.n, None, int(ks[i]), int(ks[i]), observed, allowed, name)
        else:
            k = int(K[i]) + (1 if name == "decrease" else 0)
            w = Witness(tup(X[i]), tup(xr[i]), int(K[i]), k, observed, allowed, name)
        return Verdict(Status.FALSIFIED, witness=w, samples_used=int(ok.sum()), scope="grid", notes=notes)
    constants = {"alpha1": str(cand.alpha1), "alpha2": str(cand.alpha2), "alpha3": str(cand.alpha3),
                 "c": float(c), "max_V_at_zero": float(np.max(Vz)) if len(Vz) else 0.0,
                 "grid_points": int(ok.sum())}
    return Verdict(Status.CERTIFIED, constants=constants, samples_used=int(ok.sum()), scope="grid", notes=notes)
