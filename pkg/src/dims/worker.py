"""Worker nodes: an M-forest (one local M-tree per assigned bucket) plus the
task handlers the coordinator talks to."""

from __future__ import annotations

import heapq
import math

from .codec import Reader, Writer
from .messages import (
    Message,
    MessageKind,
    PRIMARY,
    decode_payload,
    make_message,
    obj_from_wire,
)
from .metric import DistanceCounter, Metric, MetricObject
from .mtree import MTree, MTreeConfig


class UnknownLeaf(KeyError):
    pass


def local_seed(seed: int, leaf_id: int) -> int:
    return seed * 1_000_003 + leaf_id


class WorkerNode:
    def __init__(self, worker_id: int, metric: Metric, fanout: int = 20, leaf_capacity: int = 50):
        self.worker_id = worker_id
        self.metric = metric
        self.fanout = fanout
        self.leaf_capacity = leaf_capacity
        self.seed = 0
        self.forest: dict[int, MTree] = {}
        self.store: dict[int, MetricObject] = {}
        self.members: dict[int, set[int]] = {}
        self.pid_of: dict[int, int] = {}
        self.leaf_of: dict[int, int] = {}

    def __repr__(self):
        return f"WorkerNode({self.worker_id}, leaves={sorted(self.forest)}, objects={len(self.store)})"

    # -- index maintenance --------------------------------------------------

    def build_leaf(
        self,
        leaf_id: int,
        partitions: list[tuple[int, list[MetricObject]]],
        seed: int,
        counter: DistanceCounter | None = None,
    ) -> MTree:
        """Build a fresh local M-tree over every object of the bucket."""
        counter = counter or DistanceCounter(self.metric, f"worker{self.worker_id}")
        self.seed = seed
        if leaf_id in self.forest:
            self.drop_leaf(leaf_id)
        cfg = MTreeConfig(self.fanout, self.leaf_capacity, local_seed(seed, leaf_id))
        tree = MTree(self.metric, cfg, mode="local")
        for pid, objs in partitions:
            ids = self.members.setdefault(pid, set())
            for o in objs:
                tree.insert(o, counter)
                self._own(o, pid, leaf_id)
                ids.add(o.id)
        self.forest[leaf_id] = tree
        return tree

    def drop_leaf(self, leaf_id: int) -> None:
        tree = self.forest.pop(leaf_id)
        for o in list(tree.objects()):
            self._disown(o.id)

    def _own(self, o: MetricObject, pid: int, leaf_id: int) -> None:
        self.store[o.id] = o
        self.pid_of[o.id] = pid
        self.leaf_of[o.id] = leaf_id

    def _disown(self, oid: int) -> None:
        del self.store[oid]
        pid = self.pid_of.pop(oid)
        del self.leaf_of[oid]
        ids = self.members[pid]
        ids.discard(oid)
        if not ids:
            del self.members[pid]

    def insert(self, leaf_id: int, pid: int, o: MetricObject, counter: DistanceCounter) -> None:
        tree = self.forest.get(leaf_id)
        if tree is None:
            tree = MTree(
                self.metric,
                MTreeConfig(self.fanout, self.leaf_capacity, local_seed(self.seed, leaf_id)),
                mode="local",
            )
            self.forest[leaf_id] = tree
        tree.insert(o, counter)
        self._own(o, pid, leaf_id)
        self.members.setdefault(pid, set()).add(o.id)

    def delete(self, oid: int) -> None:
        leaf_id = self.leaf_of[oid]
        self.forest[leaf_id].delete(oid)
        self._disown(oid)

    # -- queries ---------------------------------------------------------------

    def _trees(self, leaf_ids):
        for lid in leaf_ids:
            tree = self.forest.get(lid)
            if tree is None:
                raise UnknownLeaf(f"worker {self.worker_id} does not hold leaf {lid}")
            yield tree

    def local_range(
        self,
        leaf_ids,
        q: MetricObject,
        r: float,
        counter: DistanceCounter,
        validated=(),
    ) -> list[tuple[int, float | None]]:
        """Objects within ``r`` of ``q`` in the named buckets.

        Members of ``validated`` partitions are returned without any distance
        computation; a None distance marks an object known to lie within r.
        """
        trees = list(self._trees(leaf_ids))
        found: dict[int, float | None] = {}
        for pid in validated:
            ids = self.members.get(pid, ())
            counter.examined += len(ids)
            for oid in ids:
                found[oid] = None
        for tree in trees:
            for o, d in tree.range_query(q, r, counter):
                if d is not None or o.id not in found:
                    found[o.id] = d
        return sorted(found.items())

    def local_knn(
        self,
        leaf_ids,
        q: MetricObject,
        k: int,
        bound: float,
        counter: DistanceCounter,
    ) -> list[tuple[int, float]]:
        """The k nearest objects within ``bound`` across the named buckets."""
        best: list[tuple[float, int]] = []
        for tree in self._trees(leaf_ids):
            for o, d in tree.knn_query(q, k, counter, bound):
                best.append((d, o.id))
        best = heapq.nsmallest(k, best)
        return [(oid, d) for d, oid in best]

    # -- message handling --------------------------------------------------------

    def handle(self, msg: Message) -> Message:
        body = decode_payload(msg.payload)
        counter = DistanceCounter(self.metric, f"worker{self.worker_id}")
        kind = msg.kind
        if kind is MessageKind.BUILD_LOCAL:
            objs = {o.id: o for o in map(obj_from_wire, body["objects"])}
            parts = [(pid, [objs[i] for i in ids]) for pid, ids in body["partitions"]]
            self.build_leaf(body["leaf"], parts, body["seed"], counter)
            return self._reply(MessageKind.ACK, {}, counter)
        if kind is MessageKind.INSERT_TASK:
            for w, pid in zip(body["objects"], body["pids"]):
                self.insert(body["leaf"], pid, obj_from_wire(w), counter)
            return self._reply(MessageKind.ACK, {}, counter)
        if kind is MessageKind.DELETE_TASK:
            for oid in body["ids"]:
                self.delete(oid)
            return self._reply(MessageKind.ACK, {}, counter)
        q = obj_from_wire(body["q"])
        if kind is MessageKind.RANGE_TASK:
            res = self.local_range(body["leaves"], q, body["r"], counter, body["validated"])
        elif kind is MessageKind.KNN_TASK:
            bound = body["bound"]
            res = self.local_knn(body["leaves"], q, body["k"], math.inf if bound is None else bound, counter)
        else:
            raise ValueError(f"worker cannot handle {kind}")
        return self._reply(MessageKind.RESULT, {"entries": [list(t) for t in res]}, counter)

    def _reply(self, kind: MessageKind, body: dict, counter: DistanceCounter) -> Message:
        body["distances"] = counter.count
        body["examined"] = counter.examined
        if kind is MessageKind.ACK:
            body.pop("entries", None)
        return make_message(kind, body, self.worker_id, PRIMARY)

    # -- persistence -----------------------------------------------------------

    def write(self, w: Writer) -> None:
        w.u64(self.worker_id)
        w.u32(self.fanout)
        w.u32(self.leaf_capacity)
        w.u64(self.seed)
        w.u32(len(self.forest))
        for lid in sorted(self.forest):
            w.u64(lid)
            tree = self.forest[lid]
            tree.write(w)
            objs = sorted(tree.objects(), key=lambda o: o.id)
            w.u32(len(objs))
            for o in objs:
                w.u64(o.id)
                w.u64(self.pid_of[o.id])

    @classmethod
    def read(cls, r: Reader, metric: Metric) -> "WorkerNode":
        node = cls(r.u64(), metric)
        node.fanout = r.u32()
        node.leaf_capacity = r.u32()
        node.seed = r.u64()
        for _ in range(r.u32()):
            lid = r.u64()
            tree = MTree.read(r, metric)
            node.forest[lid] = tree
            objs = {o.id: o for o in tree.objects()}
            for _ in range(r.u32()):
                oid, pid = r.u64(), r.u64()
                node._own(objs[oid], pid, lid)
                node.members.setdefault(pid, set()).add(oid)
        return node
