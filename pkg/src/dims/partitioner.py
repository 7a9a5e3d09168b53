"""Three-stage partitioning: global M-tree, intermediate B+-tree, worker assignment."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .codec import Reader, Writer
from .metric import DistanceCounter, Metric, MetricObject
from .mtree import MTree, MTreeConfig


class EmptyDataset(ValueError):
    pass


@dataclass
class Partition:
    id: int
    center: MetricObject
    radius: float
    dist_to_parent: float
    members: list[int]

    @property
    def size(self) -> int:
        return len(self.members)


def partition_capacity(n_objects: int, n_partitions: int) -> int:
    return max(1, math.ceil(n_objects / n_partitions))


def partitions_of(tree: MTree) -> list[Partition]:
    return [
        Partition(e.pid, e.center, e.radius, e.dist_to_parent, list(e.items))
        for e in tree.leaf_entries()
    ]


def build_global_index(
    objects: Sequence[MetricObject],
    n_partitions: int,
    config: MTreeConfig,
    metric: Metric,
    counter: DistanceCounter | None = None,
    catalog: dict[int, MetricObject] | None = None,
) -> tuple[MTree, list[Partition]]:
    """Insert every object into a global M-tree whose leaf entries hold at
    most ``ceil(N / n_partitions)`` objects; return the tree and its partitions."""
    if not objects:
        raise EmptyDataset("cannot index an empty dataset")
    if not 1 <= n_partitions <= len(objects):
        raise ValueError(f"n_partitions must be in [1, {len(objects)}], got {n_partitions}")
    if catalog is None:
        catalog = {o.id: o for o in objects}
    cfg = replace(config, leaf_capacity=partition_capacity(len(objects), n_partitions))
    tree = MTree(metric, cfg, mode="global", resolve=catalog.__getitem__)
    counter = counter or DistanceCounter(metric)
    for o in objects:
        tree.insert(o, counter)
    tree.split_log.clear()
    return tree, partitions_of(tree)


# -- intermediate index --------------------------------------------------------


class BLeaf:
    __slots__ = ("id", "keys", "next")

    def __init__(self, leaf_id: int, keys=None):
        self.id = leaf_id
        self.keys: list[tuple[float, int]] = keys or []  # (dist_to_parent, pid)
        self.next: BLeaf | None = None

    @property
    def pids(self) -> list[int]:
        return [pid for _, pid in self.keys]

    def __repr__(self):
        return f"BLeaf({self.id}, {self.keys})"


class BInner:
    __slots__ = ("seps", "children")

    def __init__(self, seps, children):
        self.seps: list[tuple[float, int]] = seps
        self.children: list = children


def balanced_groups(sizes: Sequence[int], width: int) -> list[list[int]]:
    """Split ``range(len(sizes))`` into contiguous groups of at most
    ``width`` items with near-equal size totals.

    Each cut sits at the prefix sum closest to its equal-share target, so
    a group's total deviates from the mean by at most one item's size.
    """
    n = len(sizes)
    if n == 0:
        return []
    prefix = [0]
    for s in sizes:
        prefix.append(prefix[-1] + s)
    total = prefix[-1]
    n_groups = math.ceil(n / width)
    while True:
        cuts = [0]
        for j in range(1, n_groups):
            target = total * j / n_groups
            lo, hi = cuts[-1] + 1, n - (n_groups - j)
            c = bisect.bisect_left(prefix, target, lo, hi + 1)
            c = min(max(c, lo), hi)
            if c > lo and abs(prefix[c - 1] - target) <= abs(prefix[c] - target):
                c -= 1
            cuts.append(c)
        cuts.append(n)
        groups = [list(range(a, b)) for a, b in zip(cuts, cuts[1:])]
        if all(len(g) <= width for g in groups):
            return groups
        n_groups += 1


class IntermediateIndex:
    """B+-tree over partitions keyed by (distance to parent center, pid).

    Leaves are the heterogeneous buckets shipped to workers.  Leaf ids are
    assigned in key order at build time and sequentially for leaves created
    by later splits.
    """

    def __init__(self, leaf_width: int):
        if leaf_width < 1:
            raise ValueError("leaf_width must be >= 1")
        self.leaf_width = leaf_width
        self.inner_width = max(2, leaf_width)
        self.root = BLeaf(0)
        self.next_leaf_id = 1
        self.by_id: dict[int, BLeaf] = {0: self.root}

    @classmethod
    def build(cls, partitions: Sequence[Partition], leaf_width: int) -> "IntermediateIndex":
        if not partitions:
            raise ValueError("intermediate index needs at least one partition")
        idx = cls(leaf_width)
        ordered = sorted(partitions, key=lambda p: (p.dist_to_parent, p.id))
        groups = balanced_groups([p.size for p in ordered], leaf_width)
        leaves = []
        for i, g in enumerate(groups):
            leaves.append(BLeaf(i, [(ordered[k].dist_to_parent, ordered[k].id) for k in g]))
        for a, b in zip(leaves, leaves[1:]):
            a.next = b
        idx.by_id = {lf.id: lf for lf in leaves}
        idx.next_leaf_id = len(leaves)
        level: list = leaves
        while len(level) > 1:
            parents = []
            for s in range(0, len(level), idx.inner_width):
                chunk = level[s : s + idx.inner_width]
                parents.append(BInner([_first_key(c) for c in chunk[1:]], chunk))
            level = parents
        idx.root = level[0]
        return idx

    def leaves(self) -> list[BLeaf]:
        node = self.root
        while isinstance(node, BInner):
            node = node.children[0]
        out = []
        while node is not None:
            out.append(node)
            node = node.next
        return out

    def __len__(self):
        return len(self.by_id)

    def leaf(self, leaf_id: int) -> BLeaf:
        return self.by_id[leaf_id]

    def _descend(self, key: tuple[float, int]) -> tuple[BLeaf, list]:
        path = []
        node = self.root
        while isinstance(node, BInner):
            i = bisect.bisect_right(node.seps, key)
            path.append((node, i))
            node = node.children[i]
        return node, path

    def locate(self, key: float, pid: int) -> BLeaf:
        leaf, _ = self._descend((key, pid))
        if (key, pid) not in leaf.keys:
            raise KeyError(f"partition {pid} (key {key}) not in intermediate index")
        return leaf

    def insert(self, key: float, pid: int) -> tuple[BLeaf, BLeaf | None, list[int]]:
        """Add partition ``pid``; returns (its leaf, newly split-off leaf or
        None, pids that moved into the new leaf)."""
        k = (key, pid)
        leaf, path = self._descend(k)
        bisect.insort(leaf.keys, k)
        if len(leaf.keys) <= self.leaf_width:
            return leaf, None, []
        mid = len(leaf.keys) // 2
        new = BLeaf(self.next_leaf_id, leaf.keys[mid:])
        self.next_leaf_id += 1
        self.by_id[new.id] = new
        leaf.keys = leaf.keys[:mid]
        new.next, leaf.next = leaf.next, new
        self._insert_up(path, new.keys[0], new)
        home = new if k in new.keys else leaf
        return home, new, new.pids

    def _insert_up(self, path, sep, right) -> None:
        while path:
            node, i = path.pop()
            node.seps.insert(i, sep)
            node.children.insert(i + 1, right)
            if len(node.children) <= self.inner_width:
                return
            mid = len(node.children) // 2
            sep = node.seps[mid - 1]
            right = BInner(node.seps[mid:], node.children[mid:])
            node.seps = node.seps[: mid - 1]
            node.children = node.children[:mid]
        self.root = BInner([sep], [self.root, right])

    def write(self, w: Writer) -> None:
        w.u32(self.leaf_width)
        w.u64(self.next_leaf_id)
        leaves = self.leaves()
        w.u32(len(leaves))
        for lf in leaves:
            w.u64(lf.id)
            w.u32(len(lf.keys))
            for key, pid in lf.keys:
                w.f64(key)
                w.u64(pid)

    @classmethod
    def read(cls, r: Reader) -> "IntermediateIndex":
        idx = cls(r.u32())
        next_id = r.u64()
        leaves = []
        for _ in range(r.u32()):
            lid = r.u64()
            keys = [(r.f64(), r.u64()) for _ in range(r.u32())]
            leaves.append(BLeaf(lid, keys))
        for a, b in zip(leaves, leaves[1:]):
            a.next = b
        # rebuild inner levels over the stored leaf sequence
        level: list = leaves
        while len(level) > 1:
            parents = []
            for s in range(0, len(level), idx.inner_width):
                chunk = level[s : s + idx.inner_width]
                parents.append(BInner([_first_key(c) for c in chunk[1:]], chunk))
            level = parents
        idx.root = level[0]
        idx.by_id = {lf.id: lf for lf in leaves}
        idx.next_leaf_id = next_id
        return idx


def _first_key(node) -> tuple[float, int]:
    while isinstance(node, BInner):
        node = node.children[0]
    return node.keys[0]


# -- worker assignment -----------------------------------------------------------


@dataclass
class WorkerAssignment:
    n_workers: int
    leaf_to_worker: dict[int, int] = field(default_factory=dict)

    def add(self, leaf_id: int) -> int:
        w = leaf_id % self.n_workers
        self.leaf_to_worker[leaf_id] = w
        return w

    def __getitem__(self, leaf_id: int) -> int:
        return self.leaf_to_worker[leaf_id]

    def leaves_of(self, worker: int) -> list[int]:
        return sorted(l for l, w in self.leaf_to_worker.items() if w == worker)

    def counts(self) -> list[int]:
        c = [0] * self.n_workers
        for w in self.leaf_to_worker.values():
            c[w] += 1
        return c


def assign_workers(index, n_workers: int) -> WorkerAssignment:
    """Round-robin: the i-th leaf in key order goes to worker ``i mod n_workers``."""
    if n_workers < 1:
        raise ValueError("need at least one worker")
    a = WorkerAssignment(n_workers)
    for i, lid in enumerate(lf.id for lf in index.leaves()):
        a.leaf_to_worker[lid] = i % n_workers
    return a
