"""Homogeneous-only placement used as the comparison point for workload balance.

The global tree's partitions are cut, in tree order, into one contiguous
run per worker.  Similar partitions therefore share a worker, which is
good for pruning and bad when queries concentrate on one region.
"""

from __future__ import annotations

import math
from typing import Sequence

from .coordinator import DIMS
from .partitioner import Partition, WorkerAssignment


class HomogeneousDIMS(DIMS):
    """Same global index and workers as :class:`DIMS`, without the
    intermediate heterogeneous stage.  Read-only after build."""

    def _make_buckets(self, parts: Sequence[Partition]) -> list[tuple[int, list[int]]]:
        n_w = self.config.n_workers
        per = math.ceil(len(parts) / n_w)
        self.index = None
        self.assignment = WorkerAssignment(n_w)
        self._bucket_of: dict[int, int] = {}
        buckets = []
        for b, s in enumerate(range(0, len(parts), per)):
            pids = [p.id for p in parts[s : s + per]]
            self.assignment.leaf_to_worker[b] = b
            for pid in pids:
                self._bucket_of[pid] = b
            buckets.append((b, pids))
        return buckets

    def leaf_of(self, pid: int) -> int:
        return self._bucket_of[pid]

    def insert_object(self, o):
        raise NotImplementedError("the baseline is read-only")

    def delete_object(self, oid):
        raise NotImplementedError("the baseline is read-only")

    def write(self, w):
        raise NotImplementedError("the baseline is not persisted")
