"""M-tree shared by the global index and the workers' local indexes.

Leaf entries are buckets: a center, a covering radius and up to
``leaf_capacity`` items.  In ``"local"`` mode the items are the objects
themselves; in ``"global"`` mode a leaf entry is a partition and its items
are object ids only (objects are fetched through ``resolve`` when a
partition has to be split).

Every leaf item keeps its distance to the bucket center, which lets range
and kNN search skip or accept items with the triangle inequality alone.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass
from typing import Callable, Iterator

from .codec import Reader, Writer
from .metric import DistanceCounter, Metric, MetricObject

INF = math.inf


@dataclass(frozen=True)
class MTreeConfig:
    fanout: int = 20
    leaf_capacity: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.fanout < 2:
            raise ValueError("fanout must be >= 2")
        if self.leaf_capacity < 1:
            raise ValueError("leaf_capacity must be >= 1")


class Entry:
    __slots__ = ("center", "radius", "dist_to_parent", "child", "items", "item_dists", "pid", "node")

    def __init__(self, center, radius, dist_to_parent, child=None, items=None, item_dists=None, pid=None, node=None):
        self.center: MetricObject = center
        self.radius: float = radius
        self.dist_to_parent: float = dist_to_parent
        self.child: Node | None = child
        self.items: list | None = items
        self.item_dists: list[float] | None = item_dists
        self.pid: int | None = pid
        self.node: Node | None = node

    @property
    def is_leaf(self) -> bool:
        return self.child is None

    def __repr__(self):
        kind = f"pid={self.pid}" if self.pid is not None else f"n={len(self.items or ())}"
        return f"Entry(center={self.center.id}, r={self.radius:.4g}, dp={self.dist_to_parent:.4g}, {kind})"


class Node:
    __slots__ = ("entries", "leaf", "parent")

    def __init__(self, leaf: bool, entries=None, parent: Entry | None = None):
        self.entries: list[Entry] = entries if entries is not None else []
        self.leaf = leaf
        self.parent = parent


def _assign(a: float, b: float, ida: int, idb: int) -> int:
    if a < b:
        return 0
    if b < a:
        return 1
    return 0 if ida <= idb else 1


class MTree:
    def __init__(
        self,
        metric: Metric,
        config: MTreeConfig,
        mode: str = "local",
        resolve: Callable[[int], MetricObject] | None = None,
    ):
        if mode not in ("local", "global"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "global" and resolve is None:
            raise ValueError("global mode needs a resolve callable")
        self.metric = metric
        self.config = config
        self.mode = mode
        self.resolve = resolve
        self.root = Node(leaf=True)
        self.size = 0
        self.n_splits = 0
        self.next_pid = 0
        self.locate: dict[int, Entry] = {}
        # (kept pid, new pid) for every partition split, drained by the coordinator
        self.split_log: list[tuple[int, int]] = []

    # -- helpers -----------------------------------------------------------

    @property
    def is_global(self) -> bool:
        return self.mode == "global"

    def _obj(self, item) -> MetricObject:
        return self.resolve(item) if self.is_global else item

    def _item(self, o: MetricObject):
        return o.id if self.is_global else o

    def _rng(self) -> random.Random:
        self.n_splits += 1
        return random.Random(f"{self.config.seed}:{self.n_splits}")

    def _new_pid(self) -> int | None:
        if not self.is_global:
            return None
        pid = self.next_pid
        self.next_pid += 1
        return pid

    def leaf_entries(self) -> Iterator[Entry]:
        """Leaf entries in depth-first (tree) order."""
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.leaf:
                yield from node.entries
            else:
                stack.extend(e.child for e in reversed(node.entries))

    def objects(self) -> Iterator:
        for e in self.leaf_entries():
            yield from e.items

    def height(self) -> int:
        h, node = 1, self.root
        while not node.leaf:
            node = node.entries[0].child
            h += 1
        return h

    def __len__(self):
        return self.size

    # -- insertion ---------------------------------------------------------

    def insert(self, o: MetricObject, counter: DistanceCounter) -> Entry:
        """Route ``o`` to its closest leaf entry, splitting on overflow.

        Returns the leaf entry that holds ``o`` afterwards.
        """
        item = self._item(o)
        self.size += 1
        if not self.root.entries:
            e = Entry(o, 0.0, 0.0, items=[item], item_dists=[0.0], pid=self._new_pid(), node=self.root)
            self.root.entries.append(e)
            self.locate[o.id] = e
            return e
        node = self.root
        while True:
            best, best_d = None, INF
            for e in node.entries:
                d = counter(e.center, o)
                if d < best_d or (d == best_d and e.center.id < best.center.id):
                    best, best_d = e, d
            if best_d > best.radius:
                best.radius = best_d
            if node.leaf:
                break
            node = best.child
        best.items.append(item)
        best.item_dists.append(best_d)
        self.locate[o.id] = best
        if len(best.items) > self.config.leaf_capacity:
            self._split_entry(best, counter)
            return self.locate[o.id]
        return best

    def _split_entry(self, e: Entry, counter: DistanceCounter) -> None:
        node = e.node
        items = e.items
        objs = [self._obj(it) for it in items]
        i, j = self._rng().sample(range(len(items)), 2)
        c = (objs[i], objs[j])
        groups: tuple[list, list] = ([], [])
        dists: tuple[list, list] = ([], [])
        for k, (it, ob) in enumerate(zip(items, objs)):
            if k == i:
                g, d = 0, 0.0
            elif k == j:
                g, d = 1, 0.0
            else:
                d0, d1 = counter(ob, c[0]), counter(ob, c[1])
                g = _assign(d0, d1, c[0].id, c[1].id)
                d = d0 if g == 0 else d1
            groups[g].append(it)
            dists[g].append(d)
        parent = node.parent
        new = []
        for g in (0, 1):
            dp = counter(c[g], parent.center) if parent is not None else 0.0
            pid = e.pid if g == 0 else self._new_pid()
            ne = Entry(c[g], max(dists[g]), dp, items=groups[g], item_dists=dists[g], pid=pid, node=node)
            for it in groups[g]:
                self.locate[it if self.is_global else it.id] = ne
            new.append(ne)
        if self.is_global:
            self.split_log.append((e.pid, new[1].pid))
        pos = node.entries.index(e)
        node.entries[pos : pos + 1] = new
        if len(node.entries) > self.config.fanout:
            self._split_node(node, counter)

    def _split_node(self, node: Node, counter: DistanceCounter) -> None:
        entries = node.entries
        i, j = self._rng().sample(range(len(entries)), 2)
        p = (entries[i].center, entries[j].center)
        halves: tuple[list[Entry], list[Entry]] = ([], [])
        for k, e in enumerate(entries):
            if k == i:
                g, d = 0, 0.0
            elif k == j:
                g, d = 1, 0.0
            else:
                d0, d1 = counter(e.center, p[0]), counter(e.center, p[1])
                g = _assign(d0, d1, p[0].id, p[1].id)
                d = d0 if g == 0 else d1
            e.dist_to_parent = d
            halves[g].append(e)
        parent = node.parent
        if parent is None:
            host = Node(leaf=False)
            gp = None
        else:
            host = parent.node
            gp = host.parent
        routing = []
        for g in (0, 1):
            child = Node(node.leaf, halves[g])
            radius = max(e.dist_to_parent + e.radius for e in halves[g])
            dp = counter(p[g], gp.center) if gp is not None else 0.0
            re = Entry(p[g], radius, dp, child=child, node=host)
            child.parent = re
            for e in halves[g]:
                e.node = child
            routing.append(re)
        if parent is None:
            host.entries = routing
            self.root = host
            return
        pos = host.entries.index(parent)
        host.entries[pos : pos + 1] = routing
        if len(host.entries) > self.config.fanout:
            self._split_node(host, counter)

    # -- deletion ----------------------------------------------------------

    def delete(self, oid: int) -> Entry:
        """Remove object ``oid``; covering radii are left as they are.

        Returns the leaf entry the object was removed from.
        """
        e = self.locate.pop(oid)
        if self.is_global:
            k = e.items.index(oid)
        else:
            k = next(n for n, it in enumerate(e.items) if it.id == oid)
        del e.items[k]
        del e.item_dists[k]
        self.size -= 1
        if not e.items and not self.is_global:
            self._remove_entry(e)
        return e

    def _remove_entry(self, e: Entry) -> None:
        node = e.node
        node.entries.remove(e)
        if node.entries:
            self._collapse_root()
            return
        if node.parent is None:
            self.root = Node(leaf=True)
            return
        self._remove_entry(node.parent)

    def _collapse_root(self) -> None:
        while not self.root.leaf and len(self.root.entries) == 1:
            child = self.root.entries[0].child
            child.parent = None
            for e in child.entries:
                e.dist_to_parent = 0.0
            self.root = child

    # -- search ------------------------------------------------------------

    def range_query(self, q: MetricObject, r: float, counter: DistanceCounter) -> list:
        """Objects (local) or partitions (global) that may lie within ``r`` of ``q``.

        Local mode yields ``(object, distance)`` pairs where distance is None
        for objects accepted without computing their distance.  Global mode
        yields ``(pid, validated)`` pairs.
        """
        out: list = []
        if self.root.entries:
            self._range(self.root, q, r, counter, out)
        return out

    def _range(self, node: Node, q, r, counter, out) -> None:
        glob = self.is_global
        for e in node.entries:
            d = counter(e.center, q)
            if e.child is not None:
                if d <= r - e.radius:
                    self._collect(e.child, out, counter)
                elif d <= r + e.radius:
                    self._range(e.child, q, r, counter, out)
                continue
            if d > r + e.radius:
                continue
            if glob:
                out.append((e.pid, d <= r - e.radius))
                continue
            counter.examined += len(e.items)
            if d <= r - e.radius:
                out.extend((o, None) for o in e.items)
                continue
            for o, od in zip(e.items, e.item_dists):
                if abs(od - d) > r:
                    continue
                if od + d <= r:
                    out.append((o, None))
                    continue
                dd = counter(o, q)
                if dd <= r:
                    out.append((o, dd))

    def _collect(self, node: Node, out: list, counter: DistanceCounter) -> None:
        stack = [node]
        while stack:
            n = stack.pop()
            if n.leaf:
                for e in n.entries:
                    if self.is_global:
                        out.append((e.pid, True))
                    else:
                        counter.examined += len(e.items)
                        out.extend((o, None) for o in e.items)
            else:
                stack.extend(e.child for e in reversed(n.entries))

    def knn_query(self, q: MetricObject, k: int, counter: DistanceCounter, bound: float = INF) -> list:
        """Up to ``k`` nearest ``(object, distance)`` pairs with distance <= ``bound``.

        Best-first over lower bounds ``max(0, d - radius)``; entries farther
        than ``radius + D_k`` are skipped.  Ties at rank k keep the lower id.
        """
        if self.is_global:
            raise TypeError("knn_query runs on local trees; use knn_partitions")
        if k < 1:
            raise ValueError("k must be >= 1")
        dk = bound
        res: list = []  # max-heap on (distance, id)
        queue: list = []
        seq = 0

        def expand(node: Node):
            nonlocal seq
            for e in node.entries:
                d = counter(e.center, q)
                if d > e.radius + dk:
                    continue
                lb = d - e.radius
                seq += 1
                heapq.heappush(queue, (lb if lb > 0 else 0.0, seq, d + e.radius, d, e))

        if self.root.entries:
            expand(self.root)
        while queue:
            lb, _, _ub, d, e = heapq.heappop(queue)
            if lb > dk:
                break
            if e.child is not None:
                expand(e.child)
                continue
            counter.examined += len(e.items)
            for o, od in zip(e.items, e.item_dists):
                if abs(od - d) > dk:
                    continue
                dd = counter(o, q)
                if dd > dk:
                    continue
                if len(res) < k:
                    heapq.heappush(res, (-dd, -o.id, o))
                    if len(res) == k:
                        dk = -res[0][0]
                elif (dd, o.id) < (-res[0][0], -res[0][1]):
                    heapq.heapreplace(res, (-dd, -o.id, o))
                    dk = -res[0][0]
        return sorted(((o, -nd) for nd, _, o in res), key=lambda t: (t[1], t[0].id))

    def knn_partitions(
        self, q: MetricObject, k: int, counter: DistanceCounter, bound: float = INF
    ) -> tuple[list[tuple[int, float, float]], float]:
        """Candidate partitions for a kNN query over a global tree.

        Returns ``(candidates, D_k)`` where candidates are ``(pid, lower
        bound, center distance)`` triples whose lower bound does not exceed
        the final ``D_k``.  ``D_k`` is the smallest upper bound
        ``d(center, q) + radius`` such that partitions within it hold at
        least ``k`` objects.
        """
        if not self.is_global:
            raise TypeError("knn_partitions runs on the global tree")
        dk = bound
        ubs: list = []  # max-heap of (-upper bound, cardinality)
        held = 0
        cand: list = []
        queue: list = []
        seq = 0

        def expand(node: Node):
            nonlocal seq
            for e in node.entries:
                d = counter(e.center, q)
                if d > e.radius + dk:
                    continue
                lb = d - e.radius
                seq += 1
                heapq.heappush(queue, (lb if lb > 0 else 0.0, seq, d, e))

        if self.root.entries:
            expand(self.root)
        while queue:
            lb, _, d, e = heapq.heappop(queue)
            if lb > dk:
                break
            if e.child is not None:
                expand(e.child)
                continue
            cand.append((e.pid, lb, d))
            n = len(e.items)
            if n:
                heapq.heappush(ubs, (-(d + e.radius), n))
                held += n
                while ubs and held - ubs[0][1] >= k:
                    held -= heapq.heappop(ubs)[1]
                if held >= k and -ubs[0][0] < dk:
                    dk = -ubs[0][0]
        return [c for c in cand if c[1] <= dk], dk

    # -- checks & serialization --------------------------------------------

    def audit(self, tol: float = 1e-9) -> list[str]:
        """Brute-force check of covering radii and cached parent distances."""
        fn = self.metric.fn
        problems: list[str] = []

        def below(node: Node) -> list[MetricObject]:
            out = []
            for e in node.entries:
                if e.child is None:
                    out.extend(self._obj(it) for it in e.items)
                else:
                    out.extend(below(e.child))
            return out

        def walk(node: Node, parent: Entry | None):
            if node.parent is not parent:
                problems.append("broken parent link")
            for e in node.entries:
                if e.node is not node:
                    problems.append(f"{e}: broken node link")
                want = fn(e.center.payload, parent.center.payload) if parent is not None else 0.0
                if abs(want - e.dist_to_parent) > tol:
                    problems.append(f"{e}: dist_to_parent {e.dist_to_parent} != {want}")
                if e.child is None:
                    objs = [self._obj(it) for it in e.items]
                    for o, od in zip(objs, e.item_dists):
                        dd = fn(e.center.payload, o.payload)
                        if abs(dd - od) > tol:
                            problems.append(f"{e}: cached item distance {od} != {dd}")
                        if self.locate.get(o.id) is not e:
                            problems.append(f"{e}: locate map out of date for {o.id}")
                else:
                    if any((x.child is None) != e.child.leaf for x in e.child.entries):
                        problems.append(f"{e}: leaf flag mismatch")
                    walk(e.child, e)
                    objs = below(e.child)
                for o in objs:
                    dd = fn(e.center.payload, o.payload)
                    if dd > e.radius + tol:
                        problems.append(f"{e}: object {o.id} at {dd} outside radius")

        walk(self.root, None)
        n = sum(len(e.items) for e in self.leaf_entries())
        if n != self.size:
            problems.append(f"size {self.size} != stored items {n}")
        if n != len(self.locate):
            problems.append(f"locate map holds {len(self.locate)} ids for {n} items")
        return problems

    def write(self, w: Writer) -> None:
        w.u8(1 if self.is_global else 0)
        w.u32(self.config.fanout)
        w.u32(self.config.leaf_capacity)
        w.i64(self.config.seed)
        w.u64(self.n_splits)
        w.u64(self.next_pid)
        w.u64(self.size)
        self._write_node(w, self.root)

    def _write_node(self, w: Writer, node: Node) -> None:
        w.u8(1 if node.leaf else 0)
        w.u32(len(node.entries))
        for e in node.entries:
            w.obj(e.center)
            w.f64(e.radius)
            w.f64(e.dist_to_parent)
            if e.child is not None:
                self._write_node(w, e.child)
                continue
            w.i64(-1 if e.pid is None else e.pid)
            w.u32(len(e.items))
            for it, d in zip(e.items, e.item_dists):
                if self.is_global:
                    w.u64(it)
                else:
                    w.obj(it)
                w.f64(d)

    def to_bytes(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @classmethod
    def read(cls, r: Reader, metric: Metric, resolve=None) -> "MTree":
        glob = r.u8() == 1
        cfg = MTreeConfig(fanout=r.u32(), leaf_capacity=r.u32(), seed=r.i64())
        tree = cls(metric, cfg, "global" if glob else "local", resolve=resolve)
        tree.n_splits = r.u64()
        tree.next_pid = r.u64()
        tree.size = r.u64()
        tree.root = tree._read_node(r, None)
        return tree

    def _read_node(self, r: Reader, parent: Entry | None) -> Node:
        node = Node(leaf=r.u8() == 1, parent=parent)
        for _ in range(r.u32()):
            center = r.obj()
            e = Entry(center, r.f64(), r.f64(), node=node)
            if not node.leaf:
                e.child = self._read_node(r, e)
            else:
                pid = r.i64()
                e.pid = None if pid < 0 else pid
                e.items, e.item_dists = [], []
                for _ in range(r.u32()):
                    it = r.u64() if self.is_global else r.obj()
                    e.items.append(it)
                    e.item_dists.append(r.f64())
                    self.locate[it if self.is_global else it.id] = e
            node.entries.append(e)
        return node

    @classmethod
    def from_bytes(cls, data: bytes, metric: Metric, resolve=None) -> "MTree":
        return cls.read(Reader(data), metric, resolve)
