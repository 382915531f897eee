"""Forward-mode (dual number) evaluation of expression trees.

Values are numpy arrays of a common batch shape; derivatives carry one
extra trailing axis of seeded directions, or ``None`` for a zero
derivative. At kinks (abs/min/max/floor/sqrt at their non-smooth points)
the one-sided derivative in the seeded direction is returned and the
point is recorded in ``nonsmooth``.
"""

import numpy as np

from ..errors import EvalDomainError
from .nodes import PARAMS, BinOp, BoundArg, Call, Const, Neg, Param, Time, Var


class Dual:
    __slots__ = ("val", "der")

    def __init__(self, val, der=None):
        self.val = val
        self.der = der

    def __repr__(self):
        return f"Dual({self.val!r}, {self.der!r})"


def _scale(der, factor):
    if der is None:
        return None
    return der * np.asarray(factor)[..., None]


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _neg(a):
    return None if a is None else -a


class Evaluator:
    """Evaluate trees at a batch of points.

    ``x`` / ``y`` have shape ``shape + (n,)``; ``k`` and ``s`` broadcast
    against ``shape``. ``seed_x`` (an ``(n, m)`` matrix) turns on derivatives:
    variable ``x_i`` gets derivative row ``seed_x[i]``.
    With ``raise_errors`` a domain violation raises immediately, otherwise
    it is recorded in ``domain`` and the value becomes non-finite.
    """

    def __init__(self, k=0.0, x=None, y=None, s=None, seed_x=None, shape=None, raise_errors=True):
        self.k = np.asarray(k, dtype=float)
        self.x = None if x is None else np.asarray(x, dtype=float)
        self.y = None if y is None else np.asarray(y, dtype=float)
        self.s = None if s is None else np.asarray(s, dtype=float)
        if shape is None:
            parts = [self.k.shape]
            for arr in (self.x, self.y):
                if arr is not None:
                    parts.append(arr.shape[:-1])
            if self.s is not None:
                parts.append(self.s.shape)
            shape = np.broadcast_shapes(*parts)
        self.shape = tuple(shape)
        self.seed_x = None if seed_x is None else np.asarray(seed_x, dtype=float)
        self.raise_errors = raise_errors
        self.nonsmooth = np.zeros(self.shape, dtype=bool)
        self.domain = np.zeros(self.shape, dtype=bool)

    # -- bookkeeping -----------------------------------------------------
    def _flag(self, mask):
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), self.shape)
        self.nonsmooth = self.nonsmooth | mask

    def _check(self, node, bad, message):
        bad = np.broadcast_to(np.asarray(bad, dtype=bool), self.shape)
        if np.any(bad):
            if self.raise_errors:
                raise EvalDomainError(node, message)
            self.domain = self.domain | bad

    # -- entry points ----------------------------------------------------
    def value(self, node):
        with np.errstate(all="ignore"):
            d = self.eval(node)
        return np.broadcast_to(d.val, self.shape).astype(float)

    def dual(self, node):
        with np.errstate(all="ignore"):
            d = self.eval(node)
        m = self.seed_x.shape[1]
        val = np.broadcast_to(d.val, self.shape).astype(float)
        if d.der is None:
            der = np.zeros(self.shape + (m,))
        else:
            der = np.broadcast_to(d.der, self.shape + (m,)).astype(float)
        return val, der

    # -- recursion -------------------------------------------------------
    def eval(self, node):
        if isinstance(node, Const):
            return Dual(node.value)
        if isinstance(node, Param):
            return Dual(PARAMS[node.name])
        if isinstance(node, Time):
            return Dual(self.k)
        if isinstance(node, BoundArg):
            if self.s is None:
                raise EvalDomainError(node, "bound argument s unavailable")
            return Dual(self.s)
        if isinstance(node, Var):
            src = self.x if node.kind == "x" else self.y
            if src is None:
                raise EvalDomainError(node, f"no values bound for {node.kind}")
            val = src[..., node.index]
            der = None
            if node.kind == "x" and self.seed_x is not None:
                der = self.seed_x[node.index]
            return Dual(val, der)
        if isinstance(node, Neg):
            a = self.eval(node.arg)
            return Dual(-a.val, _neg(a.der))
        if isinstance(node, BinOp):
            return self._binop(node, self.eval(node.left), self.eval(node.right))
        if isinstance(node, Call):
            args = [self.eval(a) for a in node.args]
            return getattr(self, "_f_" + node.name)(node, *args)
        raise TypeError(f"cannot evaluate {node!r}")

    def _binop(self, node, a, b):
        op = node.op
        if op == "+":
            return Dual(a.val + b.val, _add(a.der, b.der))
        if op == "-":
            return Dual(a.val - b.val, _add(a.der, _neg(b.der)))
        if op == "*":
            return Dual(a.val * b.val, _add(_scale(a.der, b.val), _scale(b.der, a.val)))
        if op == "/":
            self._check(node, b.val == 0, "division by zero")
            val = a.val / b.val
            der = _add(_scale(a.der, 1.0 / b.val), _scale(b.der, -val / b.val))
            return Dual(val, der)
        return self._pow(node, a, b)

    def _pow(self, node, a, b):
        base, p = np.asarray(a.val), np.asarray(b.val)
        if b.der is None:
            integral = p == np.floor(p)
            self._check(node, (base < 0) & ~integral, "negative base with fractional exponent")
            self._check(node, (base == 0) & (p < 0), "zero to a negative power")
            val = base ** p
            if a.der is None:
                return Dual(val)
            kink = (base == 0) & (p > 0) & (p < 1)
            self._flag(kink)
            with np.errstate(all="ignore"):
                slope = np.where(p == 0, 0.0, p * base ** (p - 1))
            der = _scale(a.der, np.where(kink, 0.0, slope))
            if np.any(kink):
                der = np.where(kink[..., None] & (a.der != 0), np.inf, der)
            return Dual(val, der)
        self._check(node, base <= 0, "non-positive base with variable exponent")
        val = base ** p
        logb = np.log(base)
        der = _add(_scale(b.der, val * logb), _scale(a.der, val * p / base))
        return Dual(val, der)

    # -- functions -------------------------------------------------------
    def _f_sin(self, node, a):
        return Dual(np.sin(a.val), _scale(a.der, np.cos(a.val)))

    def _f_cos(self, node, a):
        return Dual(np.cos(a.val), _scale(a.der, -np.sin(a.val)))

    def _f_exp(self, node, a):
        e = np.exp(a.val)
        return Dual(e, _scale(a.der, e))

    def _f_log(self, node, a):
        self._check(node, np.asarray(a.val) <= 0, "log of non-positive value")
        return Dual(np.log(a.val), _scale(a.der, 1.0 / np.asarray(a.val)))

    def _f_sqrt(self, node, a):
        v = np.asarray(a.val)
        self._check(node, v < 0, "sqrt of negative value")
        r = np.sqrt(v)
        if a.der is None:
            return Dual(r)
        kink = v == 0
        self._flag(kink)
        der = _scale(a.der, np.where(kink, 0.0, 0.5 / np.where(kink, 1.0, r)))
        if np.any(kink):
            der = np.where(kink[..., None] & (a.der != 0), np.inf, der)
        return Dual(r, der)

    def _f_abs(self, node, a):
        v = np.asarray(a.val)
        if a.der is None:
            return Dual(np.abs(v))
        kink = v == 0
        self._flag(kink)
        der = np.where(kink[..., None], np.abs(a.der), a.der * np.sign(v)[..., None])
        return Dual(np.abs(v), der)

    def _minmax(self, a, b, pick_first, combine):
        va, vb = np.asarray(a.val), np.asarray(b.val)
        val = np.where(pick_first, va, vb)
        if a.der is None and b.der is None:
            return Dual(val)
        m = self.seed_x.shape[1]
        da = np.zeros(m) if a.der is None else a.der
        db = np.zeros(m) if b.der is None else b.der
        tie = va == vb
        self._flag(tie)
        der = np.where(np.asarray(pick_first)[..., None], da, db)
        der = np.where(tie[..., None], combine(da, db), der)
        return Dual(val, der)

    def _f_max(self, node, a, b):
        return self._minmax(a, b, np.asarray(a.val) >= np.asarray(b.val), np.maximum)

    def _f_min(self, node, a, b):
        return self._minmax(a, b, np.asarray(a.val) <= np.asarray(b.val), np.minimum)

    def _f_floor(self, node, a):
        v = np.asarray(a.val)
        fl = np.floor(v)
        if a.der is not None:
            self._flag(fl == v)
            return Dual(fl, np.zeros_like(a.der * 1.0))
        return Dual(fl)
