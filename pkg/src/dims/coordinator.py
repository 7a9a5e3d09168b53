"""The primary node: global filtering, bucket lookup, task fan-out and merging."""

from __future__ import annotations

import json
import math
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .cluster import Cluster, RunStats, simulated_cost
from .codec import Reader, Writer
from .messages import MessageKind, PRIMARY, decode_payload, make_message, obj_to_wire
from .metric import DistanceCounter, Metric, MetricObject
from .mtree import MTree, MTreeConfig
from .partitioner import (
    IntermediateIndex,
    Partition,
    WorkerAssignment,
    assign_workers,
    build_global_index,
    partitions_of,
)
from .worker import WorkerNode


class IndexNotBuilt(RuntimeError):
    pass


class DuplicateId(KeyError):
    pass


class UnknownId(KeyError):
    pass


@dataclass(frozen=True)
class DIMSConfig:
    n_partitions: int = 200
    n_workers: int = 10
    fanout: int = 20
    leaf_width: int | None = None  # partitions per bucket; defaults to fanout
    seed: int = 0
    t_c: float = 1.0
    sequential: bool = False

    @property
    def bucket_width(self) -> int:
        return self.leaf_width or self.fanout


@dataclass
class QueryPlan:
    q: MetricObject
    mode: str  # "range" or "knn"
    r: float | None = None
    k: int | None = None
    candidates: list[int] = field(default_factory=list)
    validated: list[int] = field(default_factory=list)
    tasks: dict[int, list[int]] = field(default_factory=dict)  # worker -> leaf ids
    bound: float | None = None
    nearest: int | None = None
    d_t: float | None = None
    d_k: float | None = None


@dataclass
class QueryAnswer:
    entries: list[tuple[int, float | None]]
    plan: QueryPlan
    stats: RunStats
    cost: float
    wall: float

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.entries]

    def to_record(self, wall: bool = True) -> dict:
        rec = {
            "mode": self.plan.mode,
            "q": self.plan.q.id,
            "answers": [[i, d] for i, d in self.entries],
            "candidates": len(self.plan.candidates),
            "latency": self.cost,
            "stats": self.stats.to_record(wall),
        }
        if wall:
            rec["wall"] = self.wall
        return rec


class DIMS:
    """Coordinator plus its simulated workers."""

    def __init__(self, metric: Metric, config: DIMSConfig = DIMSConfig()):
        self.metric = metric
        self.config = config
        self.catalog: dict[int, MetricObject] = {}
        self.tree: MTree | None = None
        self.index: IntermediateIndex | None = None
        self.assignment: WorkerAssignment | None = None
        self.pkey: dict[int, float] = {}  # partition key frozen at registration
        self.obj_leaf: dict[int, int] = {}
        self.workers: list[WorkerNode] = []
        self.cluster: Cluster | None = None

    # -- construction --------------------------------------------------------

    @property
    def built(self) -> bool:
        return self.tree is not None

    def _require(self) -> None:
        if not self.built:
            raise IndexNotBuilt("build or load an index first")

    def __len__(self):
        return len(self.catalog)

    def build(self, objects: Sequence[MetricObject]) -> RunStats:
        cfg = self.config
        ids = set()
        for o in objects:
            self.metric.check(o)
            if o.id in ids:
                raise DuplicateId(o.id)
            ids.add(o.id)
        stats = RunStats.empty(cfg.n_workers)
        pc = DistanceCounter(self.metric, "primary")
        t0 = time.perf_counter()
        catalog = {o.id: o for o in objects}
        n_p = min(cfg.n_partitions, len(objects))
        tree, _ = build_global_index(
            objects, n_p, MTreeConfig(cfg.fanout, 1, cfg.seed), self.metric, pc, catalog
        )
        stats.phases["global"] = time.perf_counter() - t0
        stats.primary.distances = stats.primary.examined = pc.count
        self.deploy(tree, catalog, stats)
        return stats

    def deploy(self, tree: MTree, catalog: dict[int, MetricObject], stats: RunStats | None = None) -> RunStats:
        """Index the partitions of an existing global tree and ship the
        buckets to the workers."""
        cfg = self.config
        stats = stats or RunStats.empty(cfg.n_workers)
        t0 = time.perf_counter()
        self.catalog = catalog
        tree.resolve = catalog.__getitem__
        self.tree = tree
        parts = partitions_of(tree)
        self.pkey = {p.id: p.dist_to_parent for p in parts}
        buckets = self._make_buckets(parts)
        stats.phases["intermediate"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        cap = tree.config.leaf_capacity
        self.workers = [WorkerNode(i, self.metric, cfg.fanout, cap) for i in range(cfg.n_workers)]
        self._reset_cluster()
        members = {p.id: p.members for p in parts}
        tasks = []
        self.obj_leaf = {}
        for lid, pids in buckets:
            body_parts, objs = [], []
            for pid in pids:
                body_parts.append([pid, list(members[pid])])
                for oid in members[pid]:
                    objs.append(obj_to_wire(self.catalog[oid]))
                    self.obj_leaf[oid] = lid
            body = {"leaf": lid, "partitions": body_parts, "objects": objs, "seed": cfg.seed}
            w = self.assignment[lid]
            tasks.append((w, make_message(MessageKind.BUILD_LOCAL, body, PRIMARY, w)))
        self.cluster.dispatch(tasks, stats)
        stats.phases["local"] = time.perf_counter() - t0
        return stats

    def _make_buckets(self, parts: Sequence[Partition]) -> list[tuple[int, list[int]]]:
        """Group partitions into worker buckets; returns (bucket id, pids) pairs."""
        self.index = IntermediateIndex.build(parts, self.config.bucket_width)
        self.assignment = assign_workers(self.index, self.config.n_workers)
        return [(leaf.id, leaf.pids) for leaf in self.index.leaves()]

    def _reset_cluster(self) -> None:
        if self.cluster is not None:
            self.cluster.close()
        self.cluster = Cluster(self.workers, sequential=self.config.sequential)

    def close(self) -> None:
        if self.cluster is not None:
            self.cluster.close()

    def leaf_of(self, pid: int) -> int:
        return self.index.locate(self.pkey[pid], pid).id

    # -- queries ---------------------------------------------------------------

    def _group(self, pids: Iterable[int]) -> dict[int, dict[int, list[int]]]:
        """worker -> leaf -> candidate pids, all keys in ascending order."""
        out: dict[int, dict[int, list[int]]] = defaultdict(lambda: defaultdict(list))
        for pid in pids:
            lid = self.leaf_of(pid)
            out[self.assignment[lid]][lid].append(pid)
        return {w: dict(sorted(out[w].items())) for w in sorted(out)}

    def range_query(self, q: MetricObject, r: float) -> QueryAnswer:
        """All objects within ``r`` of ``q``.

        A None distance marks an object accepted by a covering-radius
        argument without computing its exact distance.
        """
        self._require()
        self.metric.check(q)
        if r < 0:
            raise ValueError("radius must be non-negative")
        t0 = time.perf_counter()
        stats = RunStats.empty(self.config.n_workers)
        pc = DistanceCounter(self.metric, "primary")
        cand = self.tree.range_query(q, r, pc)
        valid = {pid for pid, ok in cand if ok}
        plan = QueryPlan(q, "range", r=r, candidates=[p for p, _ in cand], validated=sorted(valid))
        tasks = []
        qw = obj_to_wire(q)
        for w, leaves in self._group(plan.candidates).items():
            pids = [p for ps in leaves.values() for p in ps]
            # buckets whose candidates are all validated need no local search
            search = [lid for lid, ps in leaves.items() if any(p not in valid for p in ps)]
            plan.tasks[w] = list(leaves)
            body = {
                "q": qw,
                "r": r,
                "leaves": search,
                "partitions": pids,
                "validated": [p for p in pids if p in valid],
            }
            tasks.append((w, make_message(MessageKind.RANGE_TASK, body, PRIMARY, w)))
        found: dict[int, float | None] = {}
        for msg in self.cluster.dispatch(tasks, stats):
            for oid, d in decode_payload(msg.payload)["entries"]:
                if d is not None or oid not in found:
                    found[oid] = d
        stats.primary.distances = stats.primary.examined = pc.count
        entries = sorted(found.items())
        return QueryAnswer(entries, plan, stats, simulated_cost(stats, self.config.t_c), time.perf_counter() - t0)

    def knn_query(self, q: MetricObject, k: int) -> QueryAnswer:
        """The ``min(k, N)`` nearest objects, sorted by (distance, id)."""
        self._require()
        self.metric.check(q)
        if k < 1:
            raise ValueError("k must be >= 1")
        t0 = time.perf_counter()
        stats = RunStats.empty(self.config.n_workers)
        pc = DistanceCounter(self.metric, "primary")
        qw = obj_to_wire(q)
        cand, d_k = self.tree.knn_partitions(q, k, pc)
        plan = QueryPlan(q, "knn", k=k, d_k=d_k)
        sizes = {e.pid: len(e.items) for e in self.tree.leaf_entries()}

        # tight bound from the nearest non-empty partition's bucket
        found: list[tuple[float, int]] = []
        d_t = math.inf
        near = min(((lb, pid) for pid, lb, _ in cand if sizes[pid]), default=None)
        near_leaf = None
        if near is not None:
            plan.nearest = near[1]
            near_leaf = self.leaf_of(near[1])
            w = self.assignment[near_leaf]
            body = {"q": qw, "k": k, "bound": None, "leaves": [near_leaf], "partitions": [near[1]]}
            (msg,) = self.cluster.dispatch([(w, make_message(MessageKind.KNN_TASK, body, PRIMARY, w))], stats)
            local = decode_payload(msg.payload)["entries"]
            found.extend((d, oid) for oid, d in local)
            if len(local) >= k:
                d_t = local[-1][1]
        plan.d_t = d_t
        bound = min(d_t, d_k)
        plan.bound = bound
        plan.candidates = [pid for pid, lb, _ in cand if lb <= bound and sizes[pid]]

        tasks = []
        for w, leaves in self._group(plan.candidates).items():
            search = [lid for lid in leaves if lid != near_leaf]
            plan.tasks[w] = list(leaves)
            if not search:
                continue
            body = {
                "q": qw,
                "k": k,
                "bound": None if math.isinf(bound) else bound,
                "leaves": search,
                "partitions": [p for lid in search for p in leaves[lid]],
            }
            tasks.append((w, make_message(MessageKind.KNN_TASK, body, PRIMARY, w)))
        for msg in self.cluster.dispatch(tasks, stats):
            found.extend((d, oid) for oid, d in decode_payload(msg.payload)["entries"])
        stats.primary.distances = stats.primary.examined = pc.count
        best = sorted(set(found))[:k]
        entries = [(oid, d) for d, oid in best]
        return QueryAnswer(entries, plan, stats, simulated_cost(stats, self.config.t_c), time.perf_counter() - t0)

    # -- updates ---------------------------------------------------------------

    def insert_object(self, o: MetricObject) -> RunStats:
        """Route ``o`` to its closest partition; partition splits register the
        new partition in the intermediate index and move its members."""
        self._require()
        self.metric.check(o)
        if o.id in self.catalog:
            raise DuplicateId(o.id)
        stats = RunStats.empty(self.config.n_workers)
        pc = DistanceCounter(self.metric, "primary")
        self.catalog[o.id] = o
        self.tree.insert(o, pc)
        for _kept, new in self.tree.split_log:
            self._register(new, exclude=o.id, stats=stats)
        self.tree.split_log.clear()
        lid = self.leaf_of(self.tree.locate[o.id].pid)
        self._send_inserts(lid, [o], stats)
        self.obj_leaf[o.id] = lid
        stats.primary.distances = stats.primary.examined = pc.count
        return stats

    def _register(self, pid: int, exclude: int, stats: RunStats) -> None:
        entry = next(e for e in self.tree.leaf_entries() if e.pid == pid)
        self.pkey[pid] = entry.dist_to_parent
        home, new_leaf, moved = self.index.insert(entry.dist_to_parent, pid)
        if new_leaf is not None:
            self.assignment.add(new_leaf.id)
        # objects whose bucket changed: the new partition's members plus
        # every partition pushed into a freshly split-off bucket
        relocate = [oid for oid in entry.items if oid != exclude]
        for mp in moved:
            if mp != pid:
                me = next(e for e in self.tree.leaf_entries() if e.pid == mp)
                relocate.extend(oid for oid in me.items if oid != exclude)
        by_src: dict[int, list[int]] = defaultdict(list)
        by_dst: dict[int, list[MetricObject]] = defaultdict(list)
        for oid in relocate:
            src = self.obj_leaf.get(oid)
            if src is None:
                continue
            dst = self.leaf_of(self.tree.locate[oid].pid)
            by_src[src].append(oid)
            by_dst[dst].append(self.catalog[oid])
            self.obj_leaf[oid] = dst
        tasks = []
        for lid, oids in sorted(by_src.items()):
            w = self.assignment[lid]
            tasks.append((w, make_message(MessageKind.DELETE_TASK, {"ids": oids}, PRIMARY, w)))
        self.cluster.dispatch(tasks, stats)
        for lid, objs in sorted(by_dst.items()):
            self._send_inserts(lid, objs, stats)

    def _send_inserts(self, lid: int, objs: list[MetricObject], stats: RunStats) -> None:
        w = self.assignment[lid]
        body = {
            "leaf": lid,
            "objects": [obj_to_wire(o) for o in objs],
            "pids": [self.tree.locate[o.id].pid for o in objs],
        }
        self.cluster.dispatch([(w, make_message(MessageKind.INSERT_TASK, body, PRIMARY, w))], stats)

    def delete_object(self, oid: int) -> RunStats:
        """Remove ``oid`` from its partition and its worker's local tree.
        Covering radii are not shrunk."""
        self._require()
        if oid not in self.catalog:
            raise UnknownId(oid)
        stats = RunStats.empty(self.config.n_workers)
        self.tree.delete(oid)
        lid = self.obj_leaf.pop(oid)
        w = self.assignment[lid]
        self.cluster.dispatch([(w, make_message(MessageKind.DELETE_TASK, {"ids": [oid]}, PRIMARY, w))], stats)
        del self.catalog[oid]
        return stats

    # -- persistence -------------------------------------------------------------

    def write(self, w: Writer) -> None:
        self._require()
        c = self.config
        w.text(json.dumps({**asdict(c), "metric": self.metric.to_record()}, sort_keys=True))
        w.u64(len(self.catalog))
        for o in self.catalog.values():
            w.obj(o)
        self.tree.write(w)
        w.u32(len(self.pkey))
        for pid, key in self.pkey.items():
            w.u64(pid)
            w.f64(key)
        self.index.write(w)
        w.u32(len(self.assignment.leaf_to_worker))
        for lid, wid in self.assignment.leaf_to_worker.items():
            w.u64(lid)
            w.u32(wid)
        w.u32(len(self.workers))
        for node in self.workers:
            node.write(w)

    @classmethod
    def read(cls, r: Reader) -> "DIMS":
        head = json.loads(r.text())
        metric = Metric.from_record(head.pop("metric"))
        dims = cls(metric, DIMSConfig(**head))
        for _ in range(r.u64()):
            o = r.obj()
            dims.catalog[o.id] = o
        dims.tree = MTree.read(r, metric, resolve=dims.catalog.__getitem__)
        for _ in range(r.u32()):
            pid = r.u64()
            dims.pkey[pid] = r.f64()
        dims.index = IntermediateIndex.read(r)
        dims.assignment = WorkerAssignment(dims.config.n_workers)
        for _ in range(r.u32()):
            lid = r.u64()
            dims.assignment.leaf_to_worker[lid] = r.u32()
        dims.workers = [WorkerNode.read(r, metric) for _ in range(r.u32())]
        for node in dims.workers:
            dims.obj_leaf.update(node.leaf_of)
        dims._reset_cluster()
        return dims
