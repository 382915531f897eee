"""Incremental stability: sampled falsification, rate fitting and
incremental Lyapunov candidate checks."""

import csv
import io
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .dsl.system import eval_candidate_batch, eval_map_batch
from .dynamics import simulate_batch
from .errors import DimensionMismatch, InvalidDomain
from .sampling import as_box, chunked_map
from .verdict import Status, Verdict, Witness, _num, tup

GROWTH_THRESHOLD = 10.0


@dataclass(frozen=True)
class SeparationSeries:
    xi1: np.ndarray
    xi2: np.ndarray
    k0: int
    seps: np.ndarray  # |phi(k0+d; k0, xi1) - phi(k0+d; k0, xi2)|, d = 0..K


@dataclass(frozen=True)
class RateFit:
    kappa: float
    lam: float
    residual: float
    window: Tuple[int, int]
    kappa_fit: float = 1.0
    degenerate: bool = False

    @property
    def exponential(self):
        return self.degenerate or (self.lam >= 1.05 and self.residual <= 0.1)

    def to_dict(self):
        return {"kappa": _num(self.kappa), "lambda": _num(self.lam), "residual": _num(self.residual),
                "kappa_fit": _num(self.kappa_fit), "window": list(self.window),
                "exponential": bool(self.exponential), "degenerate": bool(self.degenerate)}


@dataclass(frozen=True)
class Envelope:
    """Empirical envelope e(s, d): largest separation at lag d over pairs
    whose initial separation is at most s."""
    s_edges: np.ndarray
    values: np.ndarray   # (len(s_edges), K + 1)

    @property
    def lags(self):
        return np.arange(self.values.shape[1])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s_bucket", "lag", "max_sep"])
        for s, row in zip(self.s_edges, self.values):
            for d, v in enumerate(row):
                w.writerow([repr(float(s)), d, repr(float(v))])
        return buf.getvalue()

    def decays(self):
        """True when every bucket with s > 0 ends strictly below where it started
        and stays below its start over the second half of the horizon."""
        K = self.values.shape[1] - 1
        if K < 1:
            return False
        rows = self.s_edges > 0
        if not np.any(rows):
            return False
        v = self.values[rows]
        tail = v[:, max(1, K // 2):]
        return bool(np.all(np.isfinite(v)) and np.all(tail.max(axis=1) < v[:, 0]))


def build_envelope(s0, seps, buckets=16):
    """Envelope from initial separations ``s0`` (N,) and series ``seps`` (N, K+1)."""
    order = np.argsort(s0, kind="stable")
    s_sorted = s0[order]
    cummax = np.maximum.accumulate(seps[order], axis=0)
    N = len(s0)
    picks = np.unique(np.ceil(np.linspace(1.0 / buckets, 1.0, buckets) * N).astype(int) - 1)
    edges = np.unique(s_sorted[picks])
    last = np.searchsorted(s_sorted, edges, side="right") - 1
    return Envelope(edges, cummax[last])


@dataclass
class IncrementalReport:
    verdict: Verdict
    envelope: Envelope
    s0: np.ndarray
    seps: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    k0: np.ndarray

    def series(self):
        return [SeparationSeries(self.xi1[i], self.xi2[i], int(self.k0[i]), self.seps[i])
                for i in range(len(self.s0))]


def sample_pairs(box, budget, k0_range, seed):
    """Stratified pairs: half close pairs at random base points, half independent."""
    n = box.shape[0]
    rng = np.random.default_rng(seed)
    n_close = budget // 2
    n_far = budget - n_close
    base = rng.uniform(box[:, 0], box[:, 1], size=(n_close, n))
    u = rng.standard_normal((n_close, n))
    u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
    r = 1.0 - rng.random(n_close)   # (0, 1]
    close2 = base + r[:, None] * u
    far1 = rng.uniform(box[:, 0], box[:, 1], size=(n_far, n))
    far2 = rng.uniform(box[:, 0], box[:, 1], size=(n_far, n))
    k0 = rng.integers(k0_range[0], k0_range[1] + 1, size=budget)
    return np.vstack([base, far1]), np.vstack([close2, far2]), k0


def pair_separations(defn, X1, X2, k0, K, threads=1):
    """Separation series (N, K+1); +inf from the step either copy overflows."""
    N = len(X1)

    def work(a, b):
        both = np.vstack([X1[a:b], X2[a:b]])
        kk = np.concatenate([k0[a:b], k0[a:b]])
        states, overflow, _ = simulate_batch(defn, kk, both, K)
        m = b - a
        diff = states[:, :m, :] - states[:, m:, :]
        seps = np.linalg.norm(diff, axis=2).T
        ov = np.where((overflow[:m] >= 0) & (overflow[m:] >= 0), np.minimum(overflow[:m], overflow[m:]),
                      np.maximum(overflow[:m], overflow[m:]))
        for i in np.nonzero(ov >= 0)[0]:
            seps[i, ov[i]:] = np.inf
        return seps

    parts = chunked_map(work, N, threads)
    return np.vstack(parts) if parts else np.zeros((0, K + 1))


def find_violation(s0, seps, growth_threshold=GROWTH_THRESHOLD):
    """Apply the falsification rules; return ``(index, lag, observed, allowed, rule)`` or None.

    Rules, in order: (1) cross-pair: at some lag a pair has grown more than
    ``growth_threshold`` times its initial separation while a pair with at
    least the same initial separation is ``growth_threshold`` times smaller;
    (2) the separation grows strictly over the last half of the horizon;
    (3) a trajectory of the pair overflowed.
    """
    N, width = seps.shape
    K = width - 1
    g = growth_threshold
    if N == 0:
        return None
    order = np.argsort(s0, kind="stable")
    s_sorted = s0[order]
    best = None
    for d in range(1, K + 1):
        col = seps[order, d]
        finite = np.where(np.isfinite(col), col, np.inf)
        suffix_min = np.minimum.accumulate(finite[::-1])[::-1]
        grown = np.isfinite(col) & (col > g * s_sorted) & (s_sorted > 0)
        if not np.any(grown):
            continue
        start = np.searchsorted(s_sorted, s_sorted * (1 - 1e-12), side="left")
        other = suffix_min[start]
        hit = grown & (other * g < col)
        if np.any(hit):
            allowed = g * np.maximum(s_sorted, other)
            ratio = np.where(hit, col / allowed, -np.inf)
            i = int(np.argmax(ratio))
            if best is None or ratio[i] > best[0]:
                best = (ratio[i], int(order[i]), d, float(col[i]), float(allowed[i]), "cross-pair growth")
    if best is not None:
        return best[1:]
    if K >= 2:
        half = K - K // 2
        tail = seps[:, half:]
        finite = np.all(np.isfinite(tail), axis=1)
        tail = np.where(finite[:, None], tail, 0.0)
        rising = finite & np.all(np.diff(tail, axis=1) > 0, axis=1)
        rising &= (tail[:, -1] > tail[:, 0] * (1 + 1e-6)) & (tail[:, -1] > s0)
        if np.any(rising):
            i = int(np.argmax(np.where(rising, tail[:, -1] / np.maximum(s0, 1e-300), -np.inf)))
            return i, K, float(seps[i, K]), float(s0[i]), "monotone growth"
    diverged = ~np.all(np.isfinite(seps), axis=1)
    if np.any(diverged):
        i = int(np.argmax(diverged))
        d = int(np.argmax(~np.isfinite(seps[i])))
        return i, d, float("inf"), float(s0[i]), "overflow"
    return None


def falsify_incremental(defn, box, k0_range=(0, 0), K=20, budget=1000, seed=42,
                        growth_threshold=GROWTH_THRESHOLD, extra_pairs=None, threads=1, buckets=16):
    """Sample trajectory pairs looking for a violation of a KL separation bound.

    Sampling can only refute the property, so the result is Falsified or
    Inconclusive; the envelope summarises what was observed.
    """
    if budget < 1 and not extra_pairs:
        raise InvalidDomain("budget must be at least 1")
    box = as_box(box, defn.n)
    X1, X2, k0 = sample_pairs(box, max(budget, 0), k0_range, seed)
    if extra_pairs:
        e1, e2, ek = [], [], []
        for pair in extra_pairs:
            e1.append(np.asarray(pair[0], dtype=float).reshape(defn.n))
            e2.append(np.asarray(pair[1], dtype=float).reshape(defn.n))
            ek.append(int(pair[2]) if len(pair) > 2 else int(k0_range[0]))
        X1 = np.vstack([X1, e1])
        X2 = np.vstack([X2, e2])
        k0 = np.concatenate([k0, ek])
    seps = pair_separations(defn, X1, X2, k0, K, threads)
    s0 = seps[:, 0].copy()
    envelope = build_envelope(s0, seps, buckets)
    hit = find_violation(s0, seps, growth_threshold)
    if hit is None:
        verdict = Verdict(Status.INCONCLUSIVE, samples_used=len(s0),
                          constants={"envelope_decays": envelope.decays()})
    else:
        i, d, observed, allowed, rule = hit
        w = Witness(tup(X1[i]), tup(X2[i]), int(k0[i]), int(k0[i]) + d, observed, allowed, rule)
        verdict = Verdict(Status.FALSIFIED, witness=w, samples_used=len(s0))
    return IncrementalReport(verdict, envelope, s0, seps, X1, X2, k0)


def fit_exp_rate(series, window=None):
    """Pooled least-squares fit of log(sep(d)/s0) = log(kappa) - d log(lambda).

    ``series`` is a list of :class:`SeparationSeries` or an array (N, K+1)
    whose first column holds the initial separations.
    """
    if isinstance(series, np.ndarray):
        seps = np.atleast_2d(series).astype(float)
    else:
        seps = np.array([np.asarray(s.seps, dtype=float) for s in series])
    K = seps.shape[1] - 1
    if window is None:
        window = (K // 2, K)
    d0, d1 = int(window[0]), int(window[1])
    if not 0 <= d0 < d1 <= K:
        raise ValueError(f"window {window} must satisfy 0 <= start < stop <= {K}")
    seps = seps[seps[:, 0] > 0]
    if len(seps) == 0:
        raise ValueError("no series with positive initial separation")
    block = seps[:, d0:d1 + 1]
    if not np.all(np.isfinite(block)):
        raise ValueError("non-finite separation inside the fit window")
    if np.any(block <= 0):
        return RateFit(kappa=1.0, lam=float("inf"), residual=0.0, window=(d0, d1), degenerate=True)
    d = np.tile(np.arange(d0, d1 + 1, dtype=float), len(seps))
    y = np.log(block / seps[:, :1]).ravel()
    A = np.column_stack([np.ones_like(d), -d])
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((y - A @ np.array([a, b])) ** 2)))
    kappa_fit = float(np.exp(a))
    return RateFit(kappa=max(1.0, kappa_fit), lam=float(np.exp(b)), residual=resid,
                   window=(d0, d1), kappa_fit=kappa_fit)


def _worst(checks, tol):
    """Pick the most violated condition among ``(name, observed, allowed, extra)`` arrays."""
    best = None
    for name, observed, allowed, mask in checks:
        scale = 1.0 + np.maximum(np.abs(observed), np.abs(allowed))
        excess = np.where(mask, (observed - allowed) / scale, -np.inf)
        i = int(np.argmax(excess))
        if excess[i] > tol and (best is None or excess[i] > best[0]):
            best = (excess[i], name, i, float(observed[i]), float(allowed[i]))
    return best


def _candidate_dim(defn, cand):
    if cand.n > defn.n:
        raise DimensionMismatch(f"candidate uses dimension {cand.n}, system has {defn.n}")


def verify_incremental_lyapunov(defn, cand, grid, tol=1e-9):
    """Check the sandwich and decrease conditions of an incremental candidate
    at every grid point ``(k, x1, x2)``."""
    if cand.mode not in ("incremental", "contraction"):
        raise ValueError(f"candidate mode {cand.mode!r} is not incremental")
    _candidate_dim(defn, cand)
    K, X1, X2 = (np.asarray(a, dtype=float) for a in grid)
    X1 = X1.reshape(-1, defn.n)
    X2 = X2.reshape(-1, defn.n)
    d = np.linalg.norm(X1 - X2, axis=1)
    V0, bad0 = eval_candidate_batch(cand, K, X1, X2)
    F1, bad1 = eval_map_batch(defn, K, X1)
    F2, bad2 = eval_map_batch(defn, K, X2)
    V1, bad3 = eval_candidate_batch(cand, K + 1, F1, F2)
    ok = ~(bad0 | bad1 | bad2 | bad3) & np.isfinite(V0) & np.isfinite(V1)
    a1, a2, a3 = cand.alpha1(d), cand.alpha2(d), cand.alpha3(d)
    dec = V1 - V0
    checks = [("lower bound", a1, V0, ok), ("upper bound", V0, a2, ok), ("decrease", dec, -a3, ok)]
    worst = _worst(checks, tol)
    notes = ()
    if not np.all(ok):
        notes = (f"{int(np.sum(~ok))} grid point(s) skipped after evaluation errors",)
    if worst is not None:
        _, name, i, observed, allowed = worst
        k = int(K[i]) + (1 if name == "decrease" else 0)
        w = Witness(tup(X1[i]), tup(X2[i]), int(K[i]), k, observed, allowed, name)
        return Verdict(Status.FALSIFIED, witness=w, samples_used=int(ok.sum()), scope="grid", notes=notes)
    slack = float(np.min(np.where(ok, -a3 - dec, np.inf))) if np.any(ok) else float("nan")
    constants = {"alpha1": str(cand.alpha1), "alpha2": str(cand.alpha2), "alpha3": str(cand.alpha3),
                 "min_decrease_slack": slack, "grid_points": int(ok.sum())}
    return Verdict(Status.CERTIFIED, constants=constants, samples_used=int(ok.sum()), scope="grid",
                   notes=notes)
