from __future__ import annotations

import math

import pytest

from dims.metric import Metric, MetricKind, MetricObject
from dims.mtree import Entry, MTree, MTreeConfig, Node

L2_2D = Metric(MetricKind.L2, 2)
EDIT = Metric(MetricKind.EDIT)

# Thirteen points laid out so the worked example's clusters, covering radii
# and parent distances come out exactly as drawn.
FIG_POINTS = {
    1: (2.0, 2.0),
    2: (0.0, 0.0),
    3: (4.0, 2.0),
    4: (1.0, 1.0),
    5: (4.0, 3.0),
    6: (5.0, 2.0),
    7: (-1.0, -1.0),
    8: (7.0, 1.0),
    9: (8.0, 2.0),
    10: (9.0, 1.0),
    11: (5.4, 2.0),
    12: (0.0, 2.0),
    13: (8.0, 1.0),
}

# pid -> (center, members); pids in the figure's order p11, p12, p21, p22, p31, p32
FIG_PARTITIONS = {
    0: (4, [1, 4, 12]),
    1: (7, [2, 7]),
    2: (5, [3, 5]),
    3: (11, [6, 11]),
    4: (8, [8, 13]),
    5: (10, [9, 10]),
}
FIG_ROOT = [(2, [0, 1]), (3, [2, 3]), (8, [4, 5])]
P11, P12, P21, P22, P31, P32 = range(6)

WORDS = ["00100", "10111", "01001", "0110"]


def fig_objects() -> dict[int, MetricObject]:
    return {i: MetricObject(i, p) for i, p in FIG_POINTS.items()}


def fig_tree(seed: int = 0) -> tuple[MTree, dict[int, MetricObject]]:
    """The example's global M-tree, built entry by entry."""
    objs = fig_objects()
    d = L2_2D.fn
    tree = MTree(L2_2D, MTreeConfig(fanout=3, leaf_capacity=3, seed=seed), "global", objs.__getitem__)
    root = Node(leaf=False)
    for rc, pids in FIG_ROOT:
        c = objs[rc]
        parent = Entry(c, 0.0, 0.0, node=root)
        leaf = Node(leaf=True, parent=parent)
        parent.child = leaf
        radius = 0.0
        for pid in pids:
            pc, members = FIG_PARTITIONS[pid]
            center = objs[pc]
            dists = [d(objs[m].payload, center.payload) for m in members]
            e = Entry(
                center,
                max(dists),
                d(center.payload, c.payload),
                items=list(members),
                item_dists=dists,
                pid=pid,
                node=leaf,
            )
            leaf.entries.append(e)
            for m in members:
                tree.locate[m] = e
                radius = max(radius, d(objs[m].payload, c.payload))
        parent.radius = radius
        root.entries.append(parent)
    tree.root = root
    tree.size = len(objs)
    tree.next_pid = len(FIG_PARTITIONS)
    return tree, objs


def brute_range(metric: Metric, objs, q, r) -> set[int]:
    fn = metric.fn
    return {o.id for o in objs if fn(o.payload, q.payload) <= r}


def brute_range_split(metric: Metric, objs, q, r, tol: float) -> tuple[set[int], set[int]]:
    """(surely inside, on the boundary within tol)."""
    fn = metric.fn
    inside, edge = set(), set()
    for o in objs:
        dd = fn(o.payload, q.payload)
        if abs(dd - r) <= tol:
            edge.add(o.id)
        elif dd < r:
            inside.add(o.id)
    return inside, edge


def range_matches(metric, objs, q, r, got, tol=1e-9) -> bool:
    inside, edge = brute_range_split(metric, objs, q, r, tol)
    got = set(got)
    return inside <= got <= inside | edge


def brute_knn(metric: Metric, objs, q, k) -> list[float]:
    fn = metric.fn
    return sorted(fn(o.payload, q.payload) for o in objs)[:k]


def dists_match(a, b, tol=1e-9) -> bool:
    return len(a) == len(b) and all(math.isclose(x, y, rel_tol=0, abs_tol=tol) for x, y in zip(a, b))


@pytest.fixture
def fig():
    return fig_tree()


@pytest.fixture
def words():
    return [MetricObject(i, w) for i, w in enumerate(WORDS)]
