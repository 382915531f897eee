"""Boxes, evaluation grids and the chunked worker pool.

Work is always split into fixed-size chunks whose boundaries do not depend
on the number of workers, so results are bitwise identical for any thread
count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.stats import qmc

from .errors import InvalidDomain

CHUNK = 256


def default_threads():
    env = os.environ.get("CONVERGE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def chunked_map(fn, n_items, threads=1, chunk=CHUNK):
    """Apply ``fn(start, stop)`` over fixed chunks; results in index order."""
    bounds = [(i, min(i + chunk, n_items)) for i in range(0, n_items, chunk)]
    if threads <= 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


def as_box(box, n):
    """Normalise a box description to an ``(n, 2)`` array of [low, high] rows.

    Accepts a half-width, a single ``(low, high)`` pair applied to every
    axis, or one pair per axis.
    """
    arr = np.asarray(box, dtype=float)
    if arr.ndim == 0:
        arr = np.array([-abs(arr), abs(arr)])
    if arr.ndim == 1:
        if arr.shape[0] != 2:
            raise InvalidDomain(f"box must be (low, high) pairs, got {box!r}")
        arr = np.tile(arr, (n, 1))
    if arr.shape != (n, 2):
        raise InvalidDomain(f"box shape {arr.shape} does not match dimension {n}")
    if not np.all(np.isfinite(arr)):
        raise InvalidDomain("box must be bounded")
    if np.any(arr[:, 1] < arr[:, 0]):
        raise InvalidDomain("empty box (high < low)")
    return arr


def box_corners_and_faces(box, limit=8):
    """Up to ``limit`` deterministic points on the boundary of ``box``."""
    n = box.shape[0]
    lo, hi = box[:, 0], box[:, 1]
    mid = 0.5 * (lo + hi)
    pts = []
    for i in range(n):
        for side in (lo, hi):
            p = mid.copy()
            p[i] = side[i]
            pts.append(p)
    for mask in range(2 ** min(n, 10)):
        p = np.where([(mask >> i) & 1 for i in range(n)], hi, lo)
        pts.append(p)
    unique = []
    for p in pts:
        if not any(np.array_equal(p, q) for q in unique):
            unique.append(p)
        if len(unique) == limit:
            break
    return np.array(unique)


def tensor_grid(box, per_axis=41, k_values=(0,)):
    """All combinations of ``per_axis`` points per state axis and the given times.

    Returns ``(K, X)`` with ``K`` shape ``(N,)`` and ``X`` shape ``(N, n)``.
    """
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    ks = np.asarray(list(k_values), dtype=float)
    K = np.repeat(ks, mesh.shape[0])
    X = np.tile(mesh, (len(ks), 1))
    return K, X


def latin_hypercube(box, count=4096, k_range=(0, 0), seed=42):
    n = box.shape[0]
    sampler = qmc.LatinHypercube(d=n, seed=np.random.default_rng(seed))
    X = qmc.scale(sampler.random(count), box[:, 0], box[:, 1]) if n else np.zeros((count, 0))
    rng = np.random.default_rng([seed, 1])
    K = rng.integers(k_range[0], k_range[1] + 1, size=count).astype(float)
    return K, X


def default_grid(defn, box, per_axis=41, k_range=(-20, 20), samples=4096, seed=42):
    """Tensor grid for n <= 2, Latin hypercube otherwise; time collapsed if f ignores k."""
    box = as_box(box, defn.n)
    k_values = [0] if defn.time_invariant else list(range(k_range[0], k_range[1] + 1))
    if defn.n <= 2:
        return tensor_grid(box, per_axis, k_values)
    return latin_hypercube(box, samples, (k_values[0], k_values[-1]), seed)


def random_points(box, count, k_range=(0, 0), seed=42):
    rng = np.random.default_rng(seed)
    X = rng.uniform(box[:, 0], box[:, 1], size=(count, box.shape[0]))
    K = rng.integers(k_range[0], k_range[1] + 1, size=count).astype(float)
    return K, X


def random_pair_grid(box, count, k_range=(0, 0), seed=42):
    """Independent uniform pairs ``(K, X1, X2)`` for incremental candidates."""
    rng = np.random.default_rng(seed)
    X1 = rng.uniform(box[:, 0], box[:, 1], size=(count, box.shape[0]))
    X2 = rng.uniform(box[:, 0], box[:, 1], size=(count, box.shape[0]))
    K = rng.integers(k_range[0], k_range[1] + 1, size=count).astype(float)
    return K, X1, X2
