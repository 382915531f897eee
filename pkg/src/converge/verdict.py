"""Outcome types shared by the analyses."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np


class Status(str, Enum):
    CERTIFIED = "Certified"
    FALSIFIED = "Falsified"
    INCONCLUSIVE = "Inconclusive"
    VIOLATION = "Violation"   # a metric bound (eta I <= Theta^T Theta <= rho I) fails
    FAILURE = "Failure"       # the construction itself did not go through

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Witness:
    xi1: Tuple[float, ...]
    xi2: Optional[Tuple[float, ...]]
    k0: int
    k: int
    observed: float
    allowed: float
    condition: str = ""

    def to_dict(self):
        return {"xi1": list(self.xi1), "xi2": None if self.xi2 is None else list(self.xi2),
                "k0": self.k0, "k": self.k, "observed": _num(self.observed),
                "allowed": _num(self.allowed), "condition": self.condition}


@dataclass
class Verdict:
    status: Status
    witness: Optional[Witness] = None
    constants: Dict[str, Any] = field(default_factory=dict)
    samples_used: int = 0
    scope: str = "samples"   # samples | grid | global
    notes: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.status == Status.FALSIFIED:
            if self.witness is None or not self.witness.observed > self.witness.allowed:
                raise ValueError("a falsified verdict needs a witness with observed > allowed")
        if self.status == Status.CERTIFIED and not self.constants:
            raise ValueError("a certified verdict needs constants")

    @property
    def label(self):
        if self.status == Status.CERTIFIED and self.scope != "global":
            return f"Certified-on-{self.scope}"
        return str(self.status)

    def to_dict(self):
        return {"status": str(self.status), "label": self.label, "scope": self.scope,
                "witness": None if self.witness is None else self.witness.to_dict(),
                "constants": {k: _num(v) for k, v in self.constants.items()},
                "samples_used": int(self.samples_used), "notes": list(self.notes)}


def _num(v):
    """JSON-friendly conversion (inf and nan become strings)."""
    if isinstance(v, (list, tuple)):
        return [_num(u) for u in v]
    if isinstance(v, np.ndarray):
        return _num(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isfinite(v):
            return v
        return "nan" if np.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def tup(x):
    return tuple(float(v) for v in np.ravel(x))
