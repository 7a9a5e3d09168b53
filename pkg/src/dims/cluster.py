"""In-process simulated cluster: message dispatch plus cost and workload accounting.

Busy time is measured in distance computations so runs are reproducible;
wall-clock is recorded alongside but only ever reported.
"""

from __future__ import annotations

import json
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .messages import Message, MessageKind, decode_payload
from .worker import WorkerNode


class WorkerPanic(RuntimeError):
    def __init__(self, worker_id: int, cause: BaseException):
        super().__init__(f"worker {worker_id} failed: {cause!r}")
        self.worker_id = worker_id
        self.cause = cause


@dataclass
class NodeStats:
    node_id: int
    distances: int = 0
    examined: int = 0
    wall: float = 0.0

    @property
    def busy(self) -> int:
        return self.distances

    def add(self, other: "NodeStats") -> None:
        self.distances += other.distances
        self.examined += other.examined
        self.wall += other.wall


@dataclass
class RunStats:
    workers: list[NodeStats]
    primary: NodeStats = field(default_factory=lambda: NodeStats(-1))
    messages: int = 0
    entries: int = 0
    phases: dict[str, float] = field(default_factory=dict)

    @classmethod
    def empty(cls, n_workers: int) -> "RunStats":
        return cls([NodeStats(i) for i in range(n_workers)])

    def add(self, other: "RunStats") -> None:
        for a, b in zip(self.workers, other.workers):
            a.add(b)
        self.primary.add(other.primary)
        self.messages += other.messages
        self.entries += other.entries
        for k, v in other.phases.items():
            self.phases[k] = self.phases.get(k, 0.0) + v

    def to_record(self, wall: bool = True) -> dict:
        rec = {
            "primary": asdict(self.primary),
            "workers": [asdict(w) for w in self.workers],
            "messages": self.messages,
            "entries": self.entries,
        }
        if wall:
            rec["phases"] = dict(self.phases)
        else:
            for n in [rec["primary"], *rec["workers"]]:
                del n["wall"]
        return rec


def encode_message(msg: Message) -> bytes:
    head = json.dumps(
        [msg.kind.value, msg.entry_count, msg.src, msg.dst], separators=(",", ":")
    ).encode()
    return len(head).to_bytes(4, "little") + head + msg.payload


def decode_message(raw: bytes) -> Message:
    n = int.from_bytes(raw[:4], "little")
    kind, count, src, dst = json.loads(raw[4 : 4 + n])
    return Message(MessageKind(kind), bytes(raw[4 + n :]), count, src, dst)


def _wire(msg: Message) -> Message:
    return decode_message(encode_message(msg))


class Cluster:
    """A set of workers reachable only through serialized messages.

    ``sequential=True`` runs workers one after another in id order; the
    default runs each worker's queue on its own thread.
    """

    def __init__(self, workers: Sequence[WorkerNode], sequential: bool = False):
        self.workers = list(workers)
        self.sequential = sequential
        self._pool: ThreadPoolExecutor | None = None

    def __len__(self):
        return len(self.workers)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _run_queue(self, wid: int, queue: list[Message]) -> tuple[list[Message], float]:
        worker = self.workers[wid]
        t0 = time.perf_counter()
        out = []
        for msg in queue:
            try:
                out.append(_wire(worker.handle(_wire(msg))))
            except Exception as exc:  # surfaced to the caller as a failed run
                raise WorkerPanic(wid, exc) from exc
        return out, time.perf_counter() - t0

    def dispatch(
        self, tasks: Sequence[tuple[int, Message]], stats: RunStats | None = None
    ) -> list[Message]:
        """Deliver every task once; returns replies in worker-id order."""
        queues: dict[int, list[Message]] = {}
        for wid, msg in tasks:
            if not 0 <= wid < len(self.workers):
                raise ValueError(f"no worker {wid}")
            queues.setdefault(wid, []).append(msg)
        order = sorted(queues)
        if self.sequential or len(order) <= 1:
            done = [self._run_queue(w, queues[w]) for w in order]
        else:
            if self._pool is None:
                self._pool = ThreadPoolExecutor(max_workers=len(self.workers))
            futs = [self._pool.submit(self._run_queue, w, queues[w]) for w in order]
            done = [f.result() for f in futs]
        replies: list[Message] = []
        for wid, (out, wall) in zip(order, done):
            replies.extend(out)
            if stats is None:
                continue
            ws = stats.workers[wid]
            ws.wall += wall
            for msg in out:
                body = decode_payload(msg.payload)
                ws.distances += body["distances"]
                ws.examined += body["examined"]
        if stats is not None:
            stats.messages += len(tasks) + len(replies)
            stats.entries += sum(m.entry_count for _, m in tasks)
            stats.entries += sum(m.entry_count for m in replies)
        return replies


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    min: float
    max: float


def _summary(xs: Sequence[float]) -> Summary:
    return Summary(statistics.fmean(xs), statistics.pstdev(xs), min(xs), max(xs))


def workload_stats(run: RunStats) -> dict[str, Summary]:
    """Population statistics over all workers; idle workers count as zero."""
    return {
        "busy": _summary([w.busy for w in run.workers]),
        "examined": _summary([w.examined for w in run.workers]),
    }


def simulated_cost(run: RunStats, t_c: float = 1.0) -> float:
    """Makespan of the workers plus primary work plus transfer volume."""
    slowest = max((w.distances for w in run.workers), default=0)
    return slowest + run.primary.distances + t_c * run.entries
