"""Analytic query-cost model and the search for the best partition count.

With lambda = 1 - 2 sigma^2 / r^2 and logs taken base m (the tree fanout),
a query against N_p partitions is modelled as

    primary = N_p * log N_p * lambda^log N_p
    comm    = N_p * lambda^log N_p * T_c
    worker  = (N / N_w) * lambda^log(N / N_p)

The stationarity condition of their sum, multiplied through by
x^(a+1) ln m with a = ln lambda / ln m, is

    x (1 + log x ln(lambda m) + T_c ln(lambda m)) lambda^(2 log x)
        = (N / N_w) lambda^log N ln lambda

which ``optimize_np`` solves by bisection.
"""

from __future__ import annotations

import math
import random
import statistics
import time
from dataclasses import dataclass
from typing import Sequence

from .metric import Metric, MetricObject

EPS = 1e-9
TABLE_GRID = (50, 100, 200, 400, 800, 1600)


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class CostParams:
    N: int
    N_w: int
    sigma2: float
    r: float
    m: int = 20
    T_c: float = 1.0

    def __post_init__(self):
        if self.N < 1 or self.N_w < 1:
            raise DomainError("N and N_w must be positive")
        if self.m < 2:
            raise DomainError("fanout m must be >= 2")
        if not (self.r > 0 and math.isfinite(self.r)):
            raise DomainError("r must be positive and finite")
        if self.sigma2 < 0 or not math.isfinite(self.sigma2):
            raise DomainError("sigma2 must be non-negative and finite")
        if self.T_c <= 0:
            raise DomainError("T_c must be positive")

    @property
    def raw_lambda(self) -> float:
        return 1.0 - 2.0 * self.sigma2 / (self.r * self.r)

    @property
    def lam(self) -> float:
        """Chebyshev factor clamped into [EPS, 1 - EPS]."""
        return min(max(self.raw_lambda, EPS), 1.0 - EPS)

    def log(self, x: float) -> float:
        return math.log(x) / math.log(self.m)


@dataclass(frozen=True)
class CostEstimate:
    N_p: float
    primary_cost: float
    worker_cost: float
    comm_cost: float

    @property
    def total(self) -> float:
        return self.primary_cost + self.worker_cost + self.comm_cost


def estimate_sigma2(
    metric: Metric,
    objects: Sequence[MetricObject],
    centers: Sequence[MetricObject],
    samples: int | None = 10_000,
    seed: int = 0,
) -> float:
    """Unbiased variance of d(object, center).

    ``samples=None`` enumerates every (object, center) pair; otherwise that
    many pairs are drawn with a seeded generator.
    """
    if len(objects) < 1 or len(centers) < 1:
        raise ValueError("need objects and centers")
    fn = metric.fn
    if samples is None:
        ds = [fn(o.payload, c.payload) for o in objects for c in centers]
    else:
        if samples < 2:
            raise ValueError("samples must be >= 2")
        rng = random.Random(seed)
        ds = [fn(rng.choice(objects).payload, rng.choice(centers).payload) for _ in range(samples)]
    if len(ds) < 2:
        return 0.0
    return statistics.variance(ds)


def candidate_fraction(r: float, sigma2: float, nc: float) -> float:
    """Chebyshev estimate of the fraction of clusters surviving ``nc`` levels."""
    if r <= 0:
        raise DomainError("r must be positive")
    return max(0.0, 1.0 - 2.0 * sigma2 / (r * r)) ** nc


def total_cost(n_p: float, p: CostParams) -> CostEstimate:
    if not 1 <= n_p <= p.N:
        raise DomainError(f"N_p must be in [1, {p.N}], got {n_p}")
    lam = p.lam
    h = p.log(n_p)
    survive = lam**h
    return CostEstimate(
        N_p=n_p,
        primary_cost=n_p * h * survive,
        worker_cost=(p.N / p.N_w) * lam ** p.log(p.N / n_p),
        comm_cost=n_p * survive * p.T_c,
    )


def stationarity_lhs(n_p: float, p: CostParams) -> float:
    lam = p.lam
    lm = math.log(lam * p.m)
    h = p.log(n_p)
    return n_p * (1.0 + h * lm + p.T_c * lm) * lam ** (2.0 * h)


def stationarity_rhs(p: CostParams) -> float:
    lam = p.lam
    return (p.N / p.N_w) * lam ** p.log(p.N) * math.log(lam)


def lhs_increasing(p: CostParams, lo: float = 1.0) -> bool:
    """Whether the stationarity left side is increasing on [lo, N] in closed form.

    Writing u = log x, the left side is proportional to
    e^(c u)(1 + T_c L + L u) with L = ln(lambda m) and c = ln(lambda^2 m);
    its u-derivative has the sign of c (1 + T_c L + L u) + L.
    """
    lam = p.lam
    big_l = math.log(lam * p.m)
    c = math.log(lam * lam * p.m)
    umax = p.log(p.N)
    ends = [c * (1 + p.T_c * big_l + big_l * u) + big_l for u in (p.log(lo), umax)]
    return min(ends) > 0


def optimize_np(p: CostParams, max_iter: int = 200) -> int:
    """Integer partition count minimising the model.

    Bisects on the sign of lhs - rhs over [1, N]; the two integers around
    the crossing are compared with ``total_cost``.
    """
    rhs = stationarity_rhs(p)

    def f(x: float) -> float:
        return stationarity_lhs(x, p) - rhs

    lo, hi = 1.0, float(p.N)
    if f(lo) >= 0:
        return 1
    if f(hi) <= 0:
        return p.N
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6:
            break
    x = 0.5 * (lo + hi)
    picks = {max(1, min(p.N, math.floor(x))), max(1, min(p.N, math.ceil(x)))}
    return min(picks, key=lambda n: (total_cost(n, p).total, n))


def cost_curve(p: CostParams, grid: Sequence[int] = TABLE_GRID) -> list[CostEstimate]:
    return [total_cost(n, p) for n in grid if 1 <= n <= p.N]


def calibrate_t_c(metric: Metric, objects: Sequence[MetricObject], rounds: int = 2000, seed: int = 0) -> float:
    """Wall-clock cost of moving one entry across the simulated wire divided
    by the cost of one distance computation."""
    from .cluster import decode_message, encode_message
    from .messages import MessageKind, make_message, obj_to_wire

    rng = random.Random(seed)
    sample = [rng.choice(objects) for _ in range(rounds)]
    fn = metric.fn
    t0 = time.perf_counter()
    for a, b in zip(sample, reversed(sample)):
        fn(a.payload, b.payload)
    per_dist = (time.perf_counter() - t0) / rounds
    t0 = time.perf_counter()
    for o in sample:
        msg = make_message(MessageKind.INSERT_TASK, {"leaf": 0, "objects": [obj_to_wire(o)], "pids": [0]}, -1, 0)
        decode_message(encode_message(msg)).decode()
    per_entry = (time.perf_counter() - t0) / rounds
    return per_entry / max(per_dist, 1e-12)


def params_from_index(dims, r: float, samples: int | None = 10_000, seed: int = 0, t_c: float | None = None) -> CostParams:
    """Cost parameters for a built index: sigma^2 is measured between
    objects and the global partition centers."""
    objs = list(dims.catalog.values())
    centers = [e.center for e in dims.tree.leaf_entries()]
    s2 = estimate_sigma2(dims.metric, objs, centers, samples, seed)
    return CostParams(
        N=len(objs),
        N_w=dims.config.n_workers,
        sigma2=s2,
        r=r,
        m=dims.config.fanout,
        T_c=dims.config.t_c if t_c is None else t_c,
    )
