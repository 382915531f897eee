"""Solution operator, Jacobians, the two-copy system and transfer matrices."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dsl import Const, SystemDef, Var, eval_map
from .dsl.nodes import substitute
from .dsl.system import eval_analytic_jacobian_batch, eval_jacobian_batch, eval_map_batch
from .errors import InvalidShape, NonSmoothPoint, TransferUnavailable

OVERFLOW = 1e150
MAX_HORIZON = 10**6


@dataclass(frozen=True)
class Trajectory:
    """States x(k0), ..., x(k0 + len - 1).

    ``overflow_at`` is the first time whose state would have been non-finite
    or larger than 1e150 in some component; the stored states stop just
    before it.
    """
    k0: int
    states: np.ndarray
    system: SystemDef
    overflow_at: Optional[int] = None

    @property
    def k_end(self):
        return self.k0 + len(self.states) - 1

    @property
    def times(self):
        return np.arange(self.k0, self.k_end + 1)

    @property
    def overflowed(self):
        return self.overflow_at is not None

    def at(self, k):
        return self.states[k - self.k0]


@dataclass(frozen=True)
class TransferMatrix:
    k0: int
    k: int
    xi: np.ndarray
    matrix: np.ndarray


def _check_horizon(K):
    if K < 0:
        raise ValueError("horizon must be non-negative")
    if K > MAX_HORIZON:
        raise ValueError(f"horizon {K} exceeds cap {MAX_HORIZON}")


def simulate_batch(defn, k0, XI, K):
    """Advance many initial states ``K`` steps.

    Returns ``(states, overflow_step, domain)``: ``states`` has shape
    ``(K + 1, N, n)`` with NaN after a row overflows, ``overflow_step[i]`` is
    the first step index whose state was rejected (-1 if none) and
    ``domain[i]`` says the rejection came from a domain error.
    """
    _check_horizon(K)
    XI = np.asarray(XI, dtype=float).reshape(-1, defn.n)
    N = XI.shape[0]
    k0 = np.broadcast_to(np.asarray(k0, dtype=float), (N,))
    states = np.full((K + 1, N, defn.n), np.nan)
    overflow = np.full(N, -1, dtype=int)
    domain = np.zeros(N, dtype=bool)
    bad0 = ~np.all(np.isfinite(XI) & (np.abs(XI) <= OVERFLOW), axis=1)
    overflow[bad0] = 0
    x = np.where(bad0[:, None], np.nan, XI)
    states[0] = x
    alive = ~bad0
    for step in range(K):
        if not np.any(alive):
            break
        idx = np.nonzero(alive)[0]
        with np.errstate(all="ignore"):
            nxt, dom = eval_map_batch(defn, k0[idx] + step, x[idx])
        bad = dom | ~np.all(np.isfinite(nxt) & (np.abs(nxt) <= OVERFLOW), axis=1)
        if np.any(bad):
            died = idx[bad]
            overflow[died] = step + 1
            domain[died] = dom[bad]
            alive[died] = False
            nxt[bad] = np.nan
        x = x.copy()
        x[idx] = nxt
        states[step + 1] = x
    return states, overflow, domain


def simulate(defn, k0, xi, K):
    """phi(k; k0, xi) for k = k0..k0+K as a :class:`Trajectory`."""
    xi = np.asarray(xi, dtype=float).reshape(defn.n)
    states, overflow, domain = simulate_batch(defn, k0, xi[None], K)
    stop = overflow[0]
    if stop < 0:
        return Trajectory(int(k0), states[:, 0, :].copy(), defn)
    if domain[0]:
        # re-run the failing step through the raising evaluator for a precise error
        eval_map(defn, int(k0) + stop - 1, states[stop - 1, 0])
    return Trajectory(int(k0), states[:stop, 0, :].copy(), defn, overflow_at=int(k0) + stop)


def fd_jacobian_batch(defn, k, X):
    """Central differences, step 1e-6 * max(1, |x_i|) per component."""
    X = np.asarray(X, dtype=float).reshape(-1, defn.n)
    N, n = X.shape
    J = np.empty((N, n, n))
    for j in range(n):
        h = 1e-6 * np.maximum(1.0, np.abs(X[:, j]))
        Xp, Xm = X.copy(), X.copy()
        Xp[:, j] += h
        Xm[:, j] -= h
        Fp, _ = eval_map_batch(defn, k, Xp)
        Fm, _ = eval_map_batch(defn, k, Xm)
        J[:, :, j] = (Fp - Fm) / (2.0 * h[:, None])
    return J


def jacobian_batch(defn, k, X, method="ad"):
    """Jacobians at many points: ``(J, nonsmooth, domain)``."""
    X = np.asarray(X, dtype=float).reshape(-1, defn.n)
    if method == "ad":
        return eval_jacobian_batch(defn, k, X)
    if method == "analytic":
        J, dom = eval_analytic_jacobian_batch(defn, k, X)
        return J, np.zeros(len(X), dtype=bool), dom
    if method == "fd":
        J = fd_jacobian_batch(defn, k, X)
        return J, np.zeros(len(X), dtype=bool), ~np.all(np.isfinite(J), axis=(1, 2))
    raise ValueError(f"unknown Jacobian method {method!r}")


def jacobian(defn, k, x, method="ad", strict=False):
    """df/dx at one point. With ``strict`` a kink raises :class:`NonSmoothPoint`."""
    x = np.asarray(x, dtype=float).reshape(defn.n)
    J, nonsmooth, _ = jacobian_batch(defn, float(k), x[None], method)
    if strict and nonsmooth[0]:
        raise NonSmoothPoint(k, x)
    return J[0]


def augment(defn):
    """Two copies of ``f`` in the state (x1, x2), driven by the same k."""
    n = defn.n
    shift = lambda node: Var("x", node.index + n) if isinstance(node, Var) and node.kind == "x" else None
    f = tuple(defn.f) + tuple(substitute(e, shift) for e in defn.f)
    jac = None
    if defn.jacobian is not None:
        zero = Const(0.0)
        rows = [tuple(defn.jacobian[i]) + (zero,) * n for i in range(n)]
        rows += [(zero,) * n + tuple(substitute(e, shift) for e in defn.jacobian[i]) for i in range(n)]
        jac = tuple(rows)
    return SystemDef(n=2 * n, f=f, jacobian=jac, name=f"{defn.name}[augmented]")


def diagonal_distance(z):
    """Distance from (x1, x2) to the diagonal {(x, x)}: |x1 - x2| / sqrt(2)."""
    z = np.asarray(z, dtype=float).ravel()
    if z.size % 2:
        raise InvalidShape(f"augmented state must have even length, got {z.size}")
    h = z.size // 2
    return float(np.linalg.norm(z[:h] - z[h:]) / np.sqrt(2.0))


def transfer_batch(defn, k0, XI, steps, method="ad"):
    """Products J(k0+steps-1) ... J(k0) along each trajectory.

    Returns ``(Phi, states, overflow_step, nonsmooth)`` with ``Phi`` shaped
    ``(N, n, n)``; rows whose trajectory overflowed hold NaN.
    """
    states, overflow, _ = simulate_batch(defn, k0, XI, steps)
    N = states.shape[1]
    k0 = np.broadcast_to(np.asarray(k0, dtype=float), (N,))
    Phi = np.broadcast_to(np.eye(defn.n), (N, defn.n, defn.n)).copy()
    nonsmooth = np.zeros(N, dtype=bool)
    for step in range(steps):
        J, ns, _ = jacobian_batch(defn, k0 + step, states[step], method)
        nonsmooth |= ns
        Phi = J @ Phi
    Phi[overflow >= 0] = np.nan
    return Phi, states, overflow, nonsmooth


def transfer_matrix(defn, k0, k, xi, method="ad"):
    """Phi(k, k0; xi), the transfer matrix of the displacement dynamics."""
    if k < k0:
        raise ValueError("transfer_matrix needs k >= k0")
    xi = np.asarray(xi, dtype=float).reshape(defn.n)
    Phi, _, overflow, _ = transfer_batch(defn, k0, xi[None], k - k0, method)
    if overflow[0] >= 0:
        raise TransferUnavailable(f"trajectory from xi={xi.tolist()} overflows at k={k0 + overflow[0]}")
    return TransferMatrix(int(k0), int(k), xi, Phi[0])
