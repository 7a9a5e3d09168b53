"""Metric objects, distance functions and metric-axiom validation.

All distance evaluations in the index go through a :class:`DistanceCounter`
so that pruning effectiveness can be measured per query and per node.
"""

from __future__ import annotations

import math
import operator
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence, Union

Payload = Union[str, tuple]


class MetricError(ValueError):
    pass


class KindMismatch(MetricError):
    pass


class DimensionMismatch(MetricError):
    pass


class MetricKind(str, Enum):
    EDIT = "edit"
    L1 = "l1"
    L2 = "l2"


@dataclass(frozen=True, slots=True)
class MetricObject:
    id: int
    payload: Payload

    @property
    def is_vector(self) -> bool:
        return not isinstance(self.payload, str)


def levenshtein(a: str, b: str) -> int:
    """Classic Levenshtein distance with unit insert/delete/replace costs."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _edit(a, b) -> float:
    return float(levenshtein(a, b))


def _l1(a, b) -> float:
    return sum(map(abs, map(operator.sub, a, b)))


def _l2(a, b) -> float:
    return math.dist(a, b)


_FUNCS = {MetricKind.EDIT: _edit, MetricKind.L1: _l1, MetricKind.L2: _l2}


@dataclass(frozen=True)
class Metric:
    kind: MetricKind
    dim: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MetricKind(self.kind))
        if self.kind is not MetricKind.EDIT:
            if self.dim is None or self.dim < 1:
                raise MetricError(f"{self.kind.value} metric needs a positive dimensionality")

    @property
    def fn(self) -> Callable[[Payload, Payload], float]:
        return _FUNCS[self.kind]

    @property
    def is_vector(self) -> bool:
        return self.kind is not MetricKind.EDIT

    def check(self, o: MetricObject) -> None:
        """Raise if ``o``'s payload cannot be measured under this metric."""
        if self.is_vector:
            if isinstance(o.payload, str):
                raise KindMismatch(f"object {o.id}: string payload under {self.kind.value}")
            if len(o.payload) != self.dim:
                raise DimensionMismatch(
                    f"object {o.id}: dimension {len(o.payload)} != {self.dim}"
                )
        elif not isinstance(o.payload, str):
            raise KindMismatch(f"object {o.id}: vector payload under edit distance")

    def to_record(self) -> dict:
        return {"kind": self.kind.value, "dim": self.dim}

    @classmethod
    def from_record(cls, rec: dict) -> "Metric":
        return cls(MetricKind(rec["kind"]), rec.get("dim"))


class DistanceCounter:
    """Counts distance evaluations for one role (primary or a worker).

    Calling the counter evaluates the metric without payload checks; objects
    are validated once when they enter the index.
    """

    __slots__ = ("metric", "role", "count", "examined", "_fn")

    def __init__(self, metric: Metric, role: str = "primary"):
        self.metric = metric
        self.role = role
        self.count = 0
        self.examined = 0
        self._fn = metric.fn

    def __call__(self, a: MetricObject, b: MetricObject) -> float:
        self.count += 1
        return self._fn(a.payload, b.payload)

    def merge(self, other: "DistanceCounter") -> None:
        self.count += other.count
        self.examined += other.examined

    def __repr__(self):
        return f"DistanceCounter(role={self.role!r}, count={self.count})"


def distance(
    metric: Metric,
    a: MetricObject,
    b: MetricObject,
    counter: DistanceCounter | None = None,
) -> float:
    metric.check(a)
    metric.check(b)
    if counter is not None:
        return counter(a, b)
    return metric.fn(a.payload, b.payload)


@dataclass
class Violation:
    axiom: str
    ids: tuple
    detail: str


@dataclass
class ValidationReport:
    metric: str
    triples: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for v in self.violations:
            out[v.axiom] = out.get(v.axiom, 0) + 1
        return out

    def to_record(self) -> dict:
        return {
            "metric": self.metric,
            "triples": self.triples,
            "violations": len(self.violations),
            "by_axiom": self.counts(),
            "examples": [
                {"axiom": v.axiom, "ids": list(v.ids), "detail": v.detail}
                for v in self.violations[:10]
            ],
        }


def validate_metric(
    metric: Metric,
    sample: Sequence[MetricObject],
    triples: int,
    *,
    seed: int = 0,
    tol: float | None = None,
    fn: Callable[[Payload, Payload], float] | None = None,
) -> ValidationReport:
    """Check the metric axioms on ``triples`` uniformly drawn triples.

    ``fn`` overrides the metric's distance function, which is how a broken
    distance is checked in tests.
    """
    if not sample:
        raise ValueError("validate_metric needs a non-empty sample")
    if tol is None:
        tol = 0.0 if metric.kind is MetricKind.EDIT else 1e-9
    d = fn or metric.fn
    rng = random.Random(seed)
    report = ValidationReport(metric.kind.value, triples)
    bad = report.violations
    n = len(sample)
    for _ in range(triples):
        a, b, c = (sample[rng.randrange(n)] for _ in range(3))
        pa, pb, pc = a.payload, b.payload, c.payload
        ab, ba = d(pa, pb), d(pb, pa)
        ac, bc = d(pa, pc), d(pb, pc)
        aa = d(pa, pa)
        ids = (a.id, b.id, c.id)
        if ab < -tol or ac < -tol or bc < -tol:
            bad.append(Violation("non-negativity", ids, f"d(a,b)={ab}, d(a,c)={ac}, d(b,c)={bc}"))
        if abs(ab - ba) > tol:
            bad.append(Violation("symmetry", ids, f"d(a,b)={ab} d(b,a)={ba}"))
        if abs(aa) > tol:
            bad.append(Violation("identity", ids, f"d(a,a)={aa}"))
        if ab == 0 and a.payload != b.payload:
            bad.append(Violation("identity", ids, "d(a,b)=0 for distinct payloads"))
        if ac > ab + bc + tol:
            bad.append(Violation("triangle", ids, f"d(a,c)={ac} > d(a,b)+d(b,c)={ab + bc}"))
    return report
