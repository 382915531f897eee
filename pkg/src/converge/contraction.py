"""Contraction metrics, Demidovich certificates, the transfer-matrix Q
construction and Q-weighted curve lengths."""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .dsl.system import SystemDef, eval_map_batch, eval_theta_batch
from .dynamics import jacobian_batch, simulate_batch, transfer_batch
from .errors import (InvalidP, MetricSingular, NonSmoothPoint, PSearchFailure, TransferUnavailable,
                     TruncationFailure)
from .matrix_kit import cholesky, cholesky_batch, inv_upper_batch, sym_eig_batch
from .verdict import Status, Verdict, Witness, _num, tup

ETA_FLOOR = 1e-8
Q_TOL = 1e-9
Q_DEFAULT_M = 200
RHO_SWEEP = (0.9, 0.7, 0.5, 0.3, 0.1)


def _grid_arrays(grid, n):
    K, X = grid
    X = np.asarray(X, dtype=float).reshape(-1, n)
    K = np.broadcast_to(np.asarray(K, dtype=float).ravel(), (len(X),)).copy()
    return K, X


def _point(K, X, i):
    return {"k": int(K[i]), "x": list(tup(X[i]))}


# -- Q construction ---------------------------------------------------------

def truncation_horizon(kappa, lam, n, tol=Q_TOL):
    """Smallest M whose declared tail bound is at most ``tol``."""
    if not lam > 1:
        raise ValueError("lambda must exceed 1")
    m = np.log(tol * (lam ** 2 - 1) / (n * kappa ** 2 * lam ** 2)) / (-2 * np.log(lam))
    return max(0, int(np.ceil(m)))


def tail_bound(kappa, lam, n, M):
    return float(n * kappa ** 2 * lam ** (-2.0 * M) * lam ** 2 / (lam ** 2 - 1))


def build_Q_batch(defn, K, X, M=None, kappa=None, lam=None, tol=Q_TOL):
    """Q(k, x) = sum_{j=0..M} Phi(k+j, k; x)^T Phi(k+j, k; x) at many points.

    ``M`` defaults to the horizon implied by a declared rate ``(kappa, lam)``;
    without a rate it is 200 and the last term must be negligible (at most
    1e-12 of ||Q||), otherwise :class:`TruncationFailure` is raised.
    Returns ``(Q, tail)`` where ``tail`` is the declared tail bound or None.
    """
    X = np.asarray(X, dtype=float).reshape(-1, defn.n)
    K = np.broadcast_to(np.asarray(K, dtype=float).ravel(), (len(X),))
    n = defn.n
    ratio_test = False
    if M is None:
        if kappa is not None and lam is not None:
            M = truncation_horizon(kappa, lam, n, tol)
        else:
            M, ratio_test = Q_DEFAULT_M, True
    if M < 0:
        raise ValueError("M must be non-negative")
    states, overflow, _ = simulate_batch(defn, K, X, M)
    if np.any(overflow >= 0):
        i = int(np.argmax(overflow >= 0))
        raise TransferUnavailable(f"trajectory from k={int(K[i])}, x={X[i].tolist()} overflows")
    Phi = np.broadcast_to(np.eye(n), (len(X), n, n)).copy()
    Q = Phi.copy()
    term = Phi
    for j in range(M):
        J, _, _ = jacobian_batch(defn, K + j, states[j])
        Phi = J @ Phi
        term = np.swapaxes(Phi, 1, 2) @ Phi
        Q += term
    Q = 0.5 * (Q + np.swapaxes(Q, 1, 2))
    if ratio_test:
        last = np.trace(term, axis1=1, axis2=2)
        size = np.trace(Q, axis1=1, axis2=2)
        if np.any(last > 1e-12 * size):
            i = int(np.argmax(last / size))
            raise TruncationFailure(
                f"Q-series not converged after {M} terms at k={int(K[i])}, x={X[i].tolist()} "
                f"(last/total = {last[i] / size[i]:.3g})")
    tail = tail_bound(kappa, lam, n, M) if kappa is not None and lam is not None else None
    return Q, tail


def build_Q(defn, xi, k, M=None, kappa=None, lam=None, tol=Q_TOL):
    """Q(k, xi) and its tail bound (None without a declared rate)."""
    Q, tail = build_Q_batch(defn, [k], np.asarray(xi, dtype=float)[None], M, kappa, lam, tol)
    return Q[0], tail


def theta_from_Q(Q):
    """Upper-triangular Theta with Theta^T Theta = Q."""
    return cholesky(Q)


# -- metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class MetricField:
    """Source of Theta(k, x): identity, a constant matrix, the system's
    ``th`` expressions, or the Q-builder followed by a Cholesky factor."""
    kind: str
    n: int
    theta: Optional[np.ndarray] = None
    system: Optional[SystemDef] = None
    M: Optional[int] = None
    kappa: Optional[float] = None
    lam: Optional[float] = None

    @classmethod
    def identity(cls, n):
        return cls("identity", n)

    @classmethod
    def constant(cls, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return cls("constant", theta.shape[0], theta=theta)

    @classmethod
    def from_system(cls, defn):
        if defn.theta is None:
            raise ValueError(f"system {defn.name!r} declares no metric")
        return cls("expression", defn.n, system=defn)

    @classmethod
    def q_builder(cls, defn, M=None, kappa=None, lam=None):
        return cls("q_builder", defn.n, system=defn, M=M, kappa=kappa, lam=lam)

    @property
    def triangular(self):
        return self.kind == "q_builder"

    def factors(self, K, X):
        """Theta at each point: ``(Theta, bad)``; ``bad`` marks evaluation errors."""
        X = np.asarray(X, dtype=float).reshape(-1, self.n)
        N = len(X)
        if self.kind == "identity":
            return np.broadcast_to(np.eye(self.n), (N, self.n, self.n)).copy(), np.zeros(N, dtype=bool)
        if self.kind == "constant":
            return np.broadcast_to(self.theta, (N, self.n, self.n)).copy(), np.zeros(N, dtype=bool)
        if self.kind == "expression":
            T, bad = eval_theta_batch(self.system, K, X)
            return T, bad | ~np.all(np.isfinite(T), axis=(1, 2))
        Q, _ = build_Q_batch(self.system, K, X, self.M, self.kappa, self.lam)
        return cholesky_batch(Q), np.zeros(N, dtype=bool)

    def inverse(self, T):
        """Inverses of a stack of factors and a mask of singular members."""
        if self.triangular:
            return inv_upper_batch(T), np.zeros(len(T), dtype=bool)
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(T)
        singular = ~np.isfinite(cond) | (cond > 1e14)
        inv = np.full_like(T, np.nan)
        if np.any(~singular):
            inv[~singular] = np.linalg.inv(T[~singular])
        return inv, singular

    def q_matrix(self, K, X):
        T, bad = self.factors(K, X)
        return np.swapaxes(T, 1, 2) @ T, bad


def _as_metric(metric_or_system):
    if isinstance(metric_or_system, MetricField):
        return metric_or_system
    return MetricField.from_system(metric_or_system)


# -- metric bounds and contraction margin -----------------------------------

@dataclass(frozen=True)
class MetricBounds:
    eta: float
    rho: float
    verdict: Verdict


def metric_bounds(metric, grid, eta_floor=ETA_FLOOR):
    """eta = min lambda_min(Theta^T Theta), rho = max lambda_max over the grid.

    ``metric`` is a :class:`MetricField` or a system carrying ``th`` entries.
    A singular factor or eta at or below ``eta_floor`` is a Violation.
    """
    metric = _as_metric(metric)
    K, X = _grid_arrays(grid, metric.n)
    T, bad = metric.factors(K, X)
    ok = ~bad
    _, singular = metric.inverse(np.where(ok[:, None, None], T, np.eye(metric.n)))
    singular &= ok
    w = sym_eig_batch(np.swapaxes(T[ok], 1, 2) @ T[ok])[0] if np.any(ok) else np.zeros((0, metric.n))
    lo = np.full(len(X), np.inf)
    hi = np.full(len(X), -np.inf)
    lo[ok], hi[ok] = w[:, 0], w[:, -1]
    eta = float(lo.min()) if np.any(ok) else float("nan")
    rho = float(hi.max()) if np.any(ok) else float("nan")
    notes = (f"{int(bad.sum())} point(s) where the metric could not be evaluated",) if np.any(bad) else ()
    if np.any(singular):
        i = int(np.argmax(singular))
        w_ = Witness(tup(X[i]), None, int(K[i]), int(K[i]), float(lo[i]), eta_floor, "metric singular")
        return MetricBounds(eta, rho, Verdict(Status.VIOLATION, witness=w_, samples_used=int(ok.sum()),
                                              scope="grid", notes=notes))
    if not np.any(ok):
        return MetricBounds(eta, rho, Verdict(Status.INCONCLUSIVE, scope="grid", notes=notes))
    i = int(np.argmin(lo))
    if eta <= eta_floor:
        w_ = Witness(tup(X[i]), None, int(K[i]), int(K[i]), eta, eta_floor, "metric lower bound")
        return MetricBounds(eta, rho, Verdict(Status.VIOLATION, witness=w_, samples_used=int(ok.sum()),
                                              scope="grid", notes=notes))
    return MetricBounds(eta, rho, Verdict(Status.CERTIFIED, constants={"eta": eta, "rho": rho},
                                          samples_used=int(ok.sum()), scope="grid", notes=notes))


@dataclass(frozen=True)
class ContractionCertificate:
    eta: float
    rho: float
    mu: float
    grid_size: int
    worst_point: dict

    def to_dict(self):
        return {"eta": _num(self.eta), "rho": _num(self.rho), "mu": _num(self.mu),
                "grid": int(self.grid_size), "worst_point": self.worst_point}


@dataclass
class ContractionResult:
    verdict: Verdict
    certificate: ContractionCertificate
    bounds: MetricBounds


def contraction_margin(defn, metric, grid, strict=True, eta_floor=ETA_FLOOR, next_theta_at="x"):
    """mu = min over the grid of 1 - lambda_max(F^T F), F = Theta(k+1, .) J(k, x) Theta(k, x)^-1.

    Theta(k+1, .) is taken at the same x as the Jacobian; pass
    ``next_theta_at="fx"`` to evaluate it at f(k, x) instead. With ``strict`` a
    kink in f raises :class:`NonSmoothPoint`; otherwise such points are
    skipped. The joint verdict is Violation when the metric bounds fail,
    Falsified when mu <= 0 and Certified-on-grid otherwise.
    """
    metric = _as_metric(metric) if metric is not None else MetricField.identity(defn.n)
    K, X = _grid_arrays(grid, defn.n)
    J, nonsmooth, dom = jacobian_batch(defn, K, X)
    if strict and np.any(nonsmooth):
        i = int(np.argmax(nonsmooth))
        raise NonSmoothPoint(int(K[i]), X[i])
    keep = ~nonsmooth & ~dom
    T0, bad0 = metric.factors(K, X)
    if next_theta_at == "fx":
        Xn, badn = eval_map_batch(defn, K, X)
        Xn = np.where(badn[:, None], X, Xn)
    else:
        Xn, badn = X, np.zeros(len(X), dtype=bool)
    T1, bad1 = metric.factors(K + 1, Xn)
    keep &= ~(bad0 | bad1 | badn)
    T0 = np.where(keep[:, None, None], T0, np.eye(defn.n))
    inv, singular = metric.inverse(T0)
    if np.any(singular & keep):
        i = int(np.argmax(singular & keep))
        raise MetricSingular(int(K[i]), X[i])
    F = T1 @ J @ inv
    lam_max = np.full(len(X), -np.inf)
    if np.any(keep):
        lam_max[keep] = sym_eig_batch(np.swapaxes(F[keep], 1, 2) @ F[keep])[0][:, -1]
    i = int(np.argmax(lam_max))
    mu = float(1.0 - lam_max[i]) if np.any(keep) else float("nan")
    bounds = metric_bounds(metric, (K[keep], X[keep]), eta_floor)
    cert = ContractionCertificate(bounds.eta, bounds.rho, mu, int(keep.sum()), _point(K, X, i))
    notes = bounds.verdict.notes
    if np.any(~keep):
        notes += (f"{int(np.sum(~keep))} grid point(s) skipped (non-smooth or evaluation error)",)
    if bounds.verdict.status != Status.CERTIFIED:
        v = Verdict(bounds.verdict.status, witness=bounds.verdict.witness, samples_used=int(keep.sum()),
                    scope="grid", notes=notes)
    elif not mu > 0:
        # strict inequality: the largest admissible float value is just below 1
        w = Witness(tup(X[i]), None, int(K[i]), int(K[i]) + 1, float(lam_max[i]), float(np.nextafter(1.0, 0.0)),
                    "lambda_max(F^T F) < 1")
        v = Verdict(Status.FALSIFIED, witness=w, samples_used=int(keep.sum()), scope="grid", notes=notes)
    else:
        v = Verdict(Status.CERTIFIED, constants={"eta": cert.eta, "rho": cert.rho, "mu": mu},
                    samples_used=int(keep.sum()), scope="grid", notes=notes)
    return ContractionResult(v, cert, bounds)


# -- Demidovich condition ---------------------------------------------------

@dataclass(frozen=True)
class DemidovicCertificate:
    P: np.ndarray
    rho: float
    worst_margin: float
    worst_point: dict
    grid_size: int
    c: Optional[float] = None
    c_bounded: Optional[bool] = None

    def to_dict(self):
        return {"P": _num(self.P), "rho_d": _num(self.rho), "worst_margin": _num(self.worst_margin),
                "c": _num(self.c) if self.c_bounded in (None, True) else "unbounded",
                "grid": int(self.grid_size), "worst_point": self.worst_point}


@dataclass
class DemidovicResult:
    verdict: Verdict
    certificate: DemidovicCertificate


def _check_P(P, n):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape != (n, n):
        raise InvalidP(f"P must be {n}x{n}, got {P.shape}")
    if not np.all(np.isfinite(P)) or np.max(np.abs(P - P.T)) > 1e-12 * max(1.0, np.max(np.abs(P))):
        raise InvalidP("P must be a finite symmetric matrix")
    w = sym_eig_batch(P[None])[0][0]
    if not w[0] > 0:
        raise InvalidP(f"P is not positive definite (lambda_min={w[0]:.3g})")
    return 0.5 * (P + P.T)


def _check_rho(rho):
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")


def origin_offset(defn, k_extent=100_000):
    """sup over |k| <= k_extent of |f(k, 0)| and whether it looks bounded.

    It counts as unbounded when the sup over the full range exceeds twice the
    sup over the inner tenth of the range.
    """
    ks = np.arange(-k_extent, k_extent + 1, dtype=float)
    F, bad = eval_map_batch(defn, ks, np.zeros((len(ks), defn.n)))
    norms = np.where(bad, np.inf, np.linalg.norm(F, axis=1))
    inner = np.abs(ks) <= k_extent // 10
    c, c_inner = float(norms.max()), float(norms[inner].max())
    return c, bool(np.isfinite(c) and c <= 2 * c_inner + 1e-300)


def _demidovic_margins(Jk, P, rho):
    M = np.swapaxes(Jk, 1, 2) @ P @ Jk - rho * P
    w, V = sym_eig_batch(M)
    return w[:, -1], V[:, :, -1]


def demidovic_certify(defn, P, rho, grid, check_origin=True, tol=1e-9, strict=False, k_extent=100_000):
    """worst_margin = max over the grid of lambda_max(J^T P J - rho P).

    Certified-on-grid when worst_margin <= tol * max(1, ||P||). With
    ``check_origin`` the offset c = sup_k |f(k, 0)| is also reported; a
    certified matrix together with a bounded c is evidence of exponential
    convergence.
    """
    _check_rho(rho)
    P = _check_P(P, defn.n)
    K, X = _grid_arrays(grid, defn.n)
    J, nonsmooth, dom = jacobian_batch(defn, K, X)
    if strict and np.any(nonsmooth):
        i = int(np.argmax(nonsmooth))
        raise NonSmoothPoint(int(K[i]), X[i])
    keep = ~dom & ~nonsmooth
    margins = np.full(len(X), -np.inf)
    if np.any(keep):
        margins[keep] = _demidovic_margins(J[keep], P, rho)[0]
    i = int(np.argmax(margins))
    worst = float(margins[i])
    c = bounded = None
    if check_origin:
        c, bounded = origin_offset(defn, k_extent)
    cert = DemidovicCertificate(P, float(rho), worst, _point(K, X, i), int(keep.sum()), c, bounded)
    limit = tol * max(1.0, float(np.max(np.abs(P))))
    if worst > limit:
        w = Witness(tup(X[i]), None, int(K[i]), int(K[i]), worst, limit, "lambda_max(J^T P J - rho P) <= 0")
        return DemidovicResult(Verdict(Status.VIOLATION, witness=w, samples_used=int(keep.sum()), scope="grid"),
                               cert)
    constants = {"P": P.tolist(), "rho_d": float(rho), "worst_margin": worst}
    notes = ()
    if check_origin:
        constants["c"] = c if bounded else "unbounded"
        constants["exponential_convergence"] = bool(bounded)
        if not bounded:
            notes = ("|f(k,0)| grows with k: no convergence upgrade",)
    return DemidovicResult(Verdict(Status.CERTIFIED, constants=constants, samples_used=int(keep.sum()),
                                   scope="grid", notes=notes), cert)


def _project(P, n):
    w, V = sym_eig_batch(P[None])
    w = np.maximum(w[0], 1e-6)
    P = (V[0] * w) @ V[0].T
    P = 0.5 * (P + P.T)
    return P * (n / np.trace(P))


def search_P(defn, grid, rho, iters=500, seed=42, tol=1e-9, restarts=3):
    """Subgradient search for P with trace n and lambda_max(J^T P J - rho P) <= tol on the grid.

    Starts from the identity, then from ``restarts`` random PD matrices drawn
    with ``seed``. Raises :class:`PSearchFailure` carrying the best P found
    and the grid point that limits it (``worst_point``).
    """
    _check_rho(rho)
    n = defn.n
    K, X = _grid_arrays(grid, n)
    J, _, dom = jacobian_batch(defn, K, X)
    J, K, X = J[~dom], K[~dom], X[~dom]
    rng = np.random.default_rng(seed)
    starts = [np.eye(n)]
    for _ in range(restarts):
        A = rng.standard_normal((n, n))
        starts.append(_project(A @ A.T + np.eye(n), n))
    best = (np.inf, None, 0)
    total = 0
    for P in starts:
        for t in range(iters):
            g_all, v_all = _demidovic_margins(J, P, rho)
            i = int(np.argmax(g_all))
            g = float(g_all[i])
            total += 1
            if g < best[0]:
                best = (g, P.copy(), i)
            if g <= tol:
                return P
            v = v_all[i]
            Jv = J[i] @ v
            G = np.outer(Jv, Jv) - rho * np.outer(v, v)
            norm = np.linalg.norm(G)
            if norm == 0:
                break
            P = _project(P - G / norm / (10.0 + t), n)
    err = PSearchFailure(best[0], best[1], total)
    err.worst_point = _point(K, X, best[2])
    raise err


@dataclass
class RhoSweep:
    results: Tuple   # ((rho, P or PSearchFailure), ...)
    best_rho: Optional[float] = None
    best_P: Optional[np.ndarray] = field(default=None, repr=False)


def sweep_rho(defn, grid, rhos=RHO_SWEEP, **kwargs):
    """Run :func:`search_P` for each rho and keep the smallest certified one."""
    results = []
    best_rho = best_P = None
    for rho in rhos:
        try:
            P = search_P(defn, grid, rho, **kwargs)
        except PSearchFailure as exc:
            results.append((rho, exc))
            continue
        results.append((rho, P))
        if best_rho is None or rho < best_rho:
            best_rho, best_P = rho, P
    return RhoSweep(tuple(results), best_rho, best_P)


# -- curve length -----------------------------------------------------------

def curve_length(defn, metric, xi1, xi2, k0, k, quad_n=64):
    """Q-weighted length at time k of the image of the segment from xi2 to xi1.

    Midpoint rule in s with ``quad_n`` nodes; the tangent at each node is
    Phi(k, k0; gamma(s)) (xi1 - xi2) and Q is evaluated at (k, phi(k; k0, gamma(s))).
    """
    if quad_n < 2:
        raise ValueError("quad_n must be at least 2")
    if k < k0:
        raise ValueError("k must be >= k0")
    metric = MetricField.identity(defn.n) if metric is None else _as_metric(metric)
    xi1 = np.asarray(xi1, dtype=float).reshape(defn.n)
    xi2 = np.asarray(xi2, dtype=float).reshape(defn.n)
    s = (np.arange(quad_n) + 0.5) / quad_n
    nodes = s[:, None] * xi1 + (1 - s[:, None]) * xi2
    Phi, states, overflow, _ = transfer_batch(defn, k0, nodes, k - k0)
    if np.any(overflow >= 0):
        raise TransferUnavailable(f"trajectories overflow from nodes {np.nonzero(overflow >= 0)[0].tolist()}")
    tangent = Phi @ (xi1 - xi2)
    Q, bad = metric.q_matrix(np.full(quad_n, float(k)), states[-1])
    if np.any(bad):
        raise MetricSingular(k, states[-1][int(np.argmax(bad))])
    integrand = np.sqrt(np.maximum(np.einsum("ni,nij,nj->n", tangent, Q, tangent), 0.0))
    return float(integrand.mean())
