"""System definitions and Lyapunov candidates built from DSL source."""

import re
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..errors import (DimensionMismatch, DSLSyntaxError, EvalDomainError, InvalidBound,
                      JacobianMismatch, NonPositiveCoefficient, UnknownIdentifier)
from .dual import Evaluator
from .nodes import Node, max_index, to_source, uses_time
from .parser import Scope, statements

MODES = ("incremental", "convergent", "contraction")


@dataclass(frozen=True)
class SystemDef:
    n: int
    f: Tuple[Node, ...]
    jacobian: Optional[Tuple[Tuple[Node, ...], ...]] = None
    theta: Optional[Tuple[Tuple[Node, ...], ...]] = None
    name: str = "system"

    @property
    def time_invariant(self):
        exprs = list(self.f)
        for grid in (self.jacobian, self.theta):
            if grid is not None:
                exprs.extend(e for row in grid for e in row)
        return not any(uses_time(e) for e in exprs)

    def source(self):
        """DSL text that parses back to this definition."""
        lines = [f"dim {self.n}"]
        lines += [f"f{i + 1} = {to_source(e)}" for i, e in enumerate(self.f)]
        for prefix, grid in (("j", self.jacobian), ("th", self.theta)):
            if grid is not None:
                for i, row in enumerate(grid):
                    for j, e in enumerate(row):
                        lines.append(f"{prefix}{i + 1}_{j + 1} = {to_source(e)}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Monomial:
    """Class-K-infinity bound s -> c * s**p with c > 0, p >= 1."""
    c: float
    p: float

    def __call__(self, s):
        return self.c * np.asarray(s, dtype=float) ** self.p

    def __str__(self):
        return f"{self.c:g}*s^{self.p:g}"


@dataclass(frozen=True)
class CandidateV:
    mode: str
    V: Node
    alpha1: Monomial
    alpha2: Monomial
    alpha3: Monomial
    n: int
    c: Optional[float] = None  # bound on V(k, 0) for convergent candidates
    quadratic: bool = field(default=False)


def _index_pair(name, prefix, n):
    m = re.fullmatch(prefix + r"(\d+)_(\d+)", name)
    if m:
        return int(m.group(1)) - 1, int(m.group(2)) - 1
    m = re.fullmatch(prefix + r"(\d)(\d)", name)
    if m:
        return int(m.group(1)) - 1, int(m.group(2)) - 1
    return None


def _grid(entries, n, label):
    if not entries:
        return None
    missing = [(i, j) for i in range(n) for j in range(n) if (i, j) not in entries]
    if missing:
        i, j = missing[0]
        raise DimensionMismatch(f"{label} grid incomplete: entry ({i + 1},{j + 1}) missing")
    return tuple(tuple(entries[(i, j)] for j in range(n)) for i in range(n))


def parse_system(text, name="system", check_jacobian=True):
    """Parse ``.dsys`` source into a :class:`SystemDef`."""
    n = None
    f, jac, theta = {}, {}, {}
    for head, p in statements(text):
        if head.text == "dim":
            t = p.tok
            if n is not None:
                raise DSLSyntaxError("duplicate dim header", head.line, head.column)
            if t.kind != "number" or not re.fullmatch(r"\d+", t.text) or int(t.text) < 1:
                raise DSLSyntaxError("dim must be a positive integer", t.line, t.column, ["INT"])
            n = int(p.advance().text)
            continue
        if n is None:
            raise DSLSyntaxError("file must start with `dim N`", head.line, head.column, ["'dim'"])
        p.expect("=")
        expr = p.expression(Scope(n=n))
        name_ = head.text
        m = re.fullmatch(r"f(\d+)", name_)
        if m:
            i = int(m.group(1)) - 1
            if not 0 <= i < n:
                raise DimensionMismatch(f"line {head.line}: {name_} exceeds dimension {n}")
            if i in f:
                raise DimensionMismatch(f"line {head.line}: {name_} defined twice")
            f[i] = expr
            continue
        for prefix, store in (("th", theta), ("j", jac)):
            ij = _index_pair(name_, prefix, n)
            if ij is not None:
                if not (0 <= ij[0] < n and 0 <= ij[1] < n):
                    raise DimensionMismatch(f"line {head.line}: {name_} exceeds dimension {n}")
                store[ij] = expr
                break
        else:
            raise UnknownIdentifier(f"line {head.line}, column {head.column}: unknown statement `{name_}`")
    if n is None:
        raise DSLSyntaxError("missing `dim N` header", 1, 1, ["'dim'"])
    if sorted(f) != list(range(n)):
        missing = [i + 1 for i in range(n) if i not in f]
        raise DimensionMismatch(f"missing map components: {', '.join(f'f{i}' for i in missing)}")
    defn = SystemDef(n=n, f=tuple(f[i] for i in range(n)), jacobian=_grid(jac, n, "jacobian"),
                     theta=_grid(theta, n, "theta"), name=name)
    if defn.jacobian is not None and check_jacobian:
        _cross_check_jacobian(defn)
    return defn


def _cross_check_jacobian(defn, points=100, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2.0, 2.0, size=(points, defn.n))
    K = rng.integers(-5, 6, size=points).astype(float)
    J_ad, nonsmooth, bad = eval_jacobian_batch(defn, K, X)
    J_an, bad2 = eval_analytic_jacobian_batch(defn, K, X)
    ok = ~(bad | bad2 | nonsmooth)
    scale = 1.0 + np.abs(J_ad).max(axis=(1, 2))
    err = np.abs(J_ad - J_an).max(axis=(1, 2))
    worst = np.where(ok, err - 1e-8 * scale, -np.inf)
    if np.any(worst > 0):
        i = int(np.argmax(worst))
        raise JacobianMismatch(f"analytic Jacobian disagrees with AD at k={K[i]:g}, x={X[i].tolist()}")


_BOUND_NAMES = {"a1", "a2", "a3", "c1", "c2", "c3"}


def _monomial(expr, name, line):
    """Identify ``expr`` (in s) as c*s^p numerically and validate it."""
    ev = Evaluator(s=np.array([1.0, 2.0, 0.5, 3.0]))
    try:
        vals = ev.value(expr)
    except EvalDomainError as exc:
        raise InvalidBound(f"line {line}: {name} cannot be evaluated: {exc}") from None
    c = float(vals[0])
    if not c > 0:
        raise NonPositiveCoefficient(f"line {line}: {name} has non-positive coefficient {c:g}")
    if vals[1] <= 0:
        raise InvalidBound(f"line {line}: {name} is not a monomial c*s^p")
    p = float(np.log2(vals[1] / c))
    mono = Monomial(c, p)
    if not np.allclose(vals, mono(np.array([1.0, 2.0, 0.5, 3.0])), rtol=1e-12, atol=0):
        raise InvalidBound(f"line {line}: {name} is not a monomial c*s^p")
    if p < 1 - 1e-12:
        raise InvalidBound(f"line {line}: {name} has exponent {p:g} < 1")
    return mono


def parse_candidate(text, n=None):
    """Parse ``.lyap`` source into a :class:`CandidateV`.

    ``n`` may come from a ``dim`` header, the caller, or (failing both) the
    largest variable index used in ``V``.
    """
    mode, V, c = None, None, None
    bounds, lines = {}, {}
    for head, p in statements(text):
        word = head.text
        if word == "mode":
            t = p.advance()
            if t.text not in MODES:
                raise DSLSyntaxError(f"unknown mode {t.text!r}", t.line, t.column, MODES)
            mode = t.text
            continue
        if word == "dim":
            t = p.advance()
            if t.kind != "number" or not re.fullmatch(r"\d+", t.text):
                raise DSLSyntaxError("dim must be a positive integer", t.line, t.column, ["INT"])
            if n is not None and int(t.text) != n:
                raise DimensionMismatch(f"candidate dim {t.text} differs from system dimension {n}")
            n = int(t.text)
            continue
        if mode is None:
            raise DSLSyntaxError("`mode` must precede other statements", head.line, head.column, ["'mode'"])
        p.expect("=")
        if word == "V":
            V = p.expression(Scope(n=n, allow_y=mode != "convergent"))
        elif word in _BOUND_NAMES:
            bounds[word] = p.expression(Scope(n=0, allow_x=False, allow_k=False, allow_s=True))
            lines[word] = head.line
        elif word == "c" and mode == "convergent":
            expr = p.expression(Scope(n=0, allow_x=False, allow_k=False))
            c = float(Evaluator().value(expr))
        else:
            raise UnknownIdentifier(f"line {head.line}, column {head.column}: unknown statement `{word}`")
    if mode is None:
        raise DSLSyntaxError("missing `mode` statement", 1, 1, ["'mode'"])
    if V is None:
        raise DSLSyntaxError("missing `V = ...` statement", 1, 1, ["'V'"])
    quadratic = any(b.startswith("c") for b in bounds)
    if quadratic and any(b.startswith("a") for b in bounds):
        raise DSLSyntaxError("mix of a1..a3 and c1..c3 bounds", 1, 1)
    prefix = "c" if quadratic else "a"
    alphas = []
    for i in (1, 2, 3):
        key = f"{prefix}{i}"
        if key not in bounds:
            raise DSLSyntaxError(f"missing bound `{key}`", 1, 1, [key])
        if quadratic:
            coeff = float(Evaluator(s=np.array(1.0)).value(bounds[key]))
            if not coeff > 0:
                raise NonPositiveCoefficient(f"line {lines[key]}: {key} must be positive, got {coeff:g}")
            alphas.append(Monomial(coeff, 2.0))
        else:
            alphas.append(_monomial(bounds[key], key, lines[key]))
    inferred = max(max_index(V, "x"), max_index(V, "y")) + 1
    if n is None:
        n = max(inferred, 1)
    elif inferred > n:
        raise DimensionMismatch(f"V uses index {inferred} beyond dimension {n}")
    return CandidateV(mode=mode, V=V, alpha1=alphas[0], alpha2=alphas[1], alpha3=alphas[2],
                      n=n, c=c, quadratic=quadratic)


# -- evaluation ---------------------------------------------------------------

def eval_map(defn, k, x):
    """f(k, x) for a single point; domain violations raise."""
    x = np.asarray(x, dtype=float).reshape(defn.n)
    ev = Evaluator(k=float(k), x=x)
    return np.array([ev.value(e) for e in defn.f], dtype=float).reshape(defn.n)


def eval_map_batch(defn, k, X):
    """f at many points. Returns ``(F, bad)``; rows with domain errors are flagged."""
    X = np.asarray(X, dtype=float)
    ev = Evaluator(k=np.asarray(k, dtype=float), x=X, raise_errors=False)
    F = np.stack([ev.value(e) for e in defn.f], axis=-1)
    return F, ev.domain


def eval_jacobian_ad(defn, k, x):
    """Dual-number Jacobian at one point. Returns ``(J, nonsmooth)``."""
    x = np.asarray(x, dtype=float).reshape(defn.n)
    ev = Evaluator(k=float(k), x=x, seed_x=np.eye(defn.n))
    rows = [ev.dual(e)[1] for e in defn.f]
    return np.array(rows, dtype=float).reshape(defn.n, defn.n), bool(ev.nonsmooth)


def eval_jacobian_batch(defn, k, X):
    """Dual-number Jacobians ``(N, n, n)`` plus nonsmooth and domain masks."""
    X = np.asarray(X, dtype=float)
    ev = Evaluator(k=np.asarray(k, dtype=float), x=X, seed_x=np.eye(defn.n), raise_errors=False)
    rows = [ev.dual(e)[1] for e in defn.f]
    return np.stack(rows, axis=-2), ev.nonsmooth, ev.domain


def _matrix_batch(grid, n, k, X):
    ev = Evaluator(k=np.asarray(k, dtype=float), x=np.asarray(X, dtype=float), raise_errors=False)
    M = np.stack([np.stack([ev.value(e) for e in row], axis=-1) for row in grid], axis=-2)
    return M, ev.domain


def eval_analytic_jacobian_batch(defn, k, X):
    if defn.jacobian is None:
        raise ValueError(f"{defn.name} has no analytic Jacobian")
    return _matrix_batch(defn.jacobian, defn.n, k, X)


def eval_theta_batch(defn, k, X):
    if defn.theta is None:
        raise ValueError(f"{defn.name} has no metric Theta")
    return _matrix_batch(defn.theta, defn.n, k, X)


def eval_candidate_batch(cand, k, X, Y=None):
    """V at many points; ``Y`` is required for incremental/contraction modes."""
    ev = Evaluator(k=np.asarray(k, dtype=float), x=np.asarray(X, dtype=float),
                   y=None if Y is None else np.asarray(Y, dtype=float), raise_errors=False)
    return ev.value(cand.V), ev.domain
