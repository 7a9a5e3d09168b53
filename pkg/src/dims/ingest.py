"""Dataset loading, synthetic data, radius resolution and index files."""

from __future__ import annotations

import math
import random
import string
import struct
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from .codec import DecodeError, Reader, Writer
from .coordinator import DIMS
from .metric import DimensionMismatch, KindMismatch, Metric, MetricKind, MetricObject
from .partitioner import EmptyDataset

MAGIC = b"DIMS"
VERSION = b"1"
PAIR_SAMPLES = 10_000


class ParseError(ValueError):
    def __init__(self, path, where: str, msg: str):
        super().__init__(f"{path}: {where}: {msg}")
        self.where = where


class CorruptIndex(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class Format(str, Enum):
    WORDS = "words"
    VECTOR_TEXT = "vectors"
    VECTOR_BINARY = "binary"


@dataclass(frozen=True)
class DatasetSpec:
    path: Path
    format: Format
    metric: Metric
    limit_pct: float | None = None  # keep the first limit_pct % of records

    def __post_init__(self):
        object.__setattr__(self, "path", Path(self.path))
        object.__setattr__(self, "format", Format(self.format))
        if (self.format is Format.WORDS) != (self.metric.kind is MetricKind.EDIT):
            raise KindMismatch(f"{self.format.value} data cannot use the {self.metric.kind.value} metric")
        if self.limit_pct is not None and not 0 < self.limit_pct <= 100:
            raise ValueError("cardinality limit must be in (0, 100]")


@dataclass(frozen=True)
class RadiusSpec:
    value: float
    percent: bool = True

    def __post_init__(self):
        if self.percent and not 0 < self.value <= 100:
            raise ValueError("radius percentage must be in (0, 100]")
        if not self.percent and self.value < 0:
            raise ValueError("absolute radius must be non-negative")


def _limit(records: list, pct: float | None) -> list:
    if pct is None:
        return records
    return records[: max(1, math.floor(len(records) * pct / 100))]


def load_dataset(spec: DatasetSpec) -> list[MetricObject]:
    """Read a dataset file; ids are zero-based record positions."""
    if spec.format is Format.VECTOR_BINARY:
        objs = _load_binary(spec.path, spec.metric)
    else:
        text = spec.path.read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        loader = _load_words if spec.format is Format.WORDS else _load_vectors
        objs = loader(spec.path, lines, spec.metric)
    if not objs:
        raise EmptyDataset(f"{spec.path}: no records")
    return _limit(objs, spec.limit_pct)


def _load_words(path, lines: list[str], metric: Metric) -> list[MetricObject]:
    out = []
    for n, line in enumerate(lines):
        tok = line.rstrip("\r")
        if not tok or any(c.isspace() for c in tok):
            raise ParseError(path, f"line {n + 1}", "expected exactly one token")
        out.append(MetricObject(n, tok))
    return out


def _load_vectors(path, lines: list[str], metric: Metric) -> list[MetricObject]:
    out = []
    for n, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            vec = tuple(float(x) for x in line.split())
        except ValueError as exc:
            raise ParseError(path, f"line {n + 1}", str(exc)) from None
        if len(vec) != metric.dim:
            raise DimensionMismatch(f"{path}: line {n + 1}: dimension {len(vec)} != {metric.dim}")
        out.append(MetricObject(len(out), vec))
    return out


def _load_binary(path, metric: Metric) -> list[MetricObject]:
    data = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ParseError(path, f"offset {pos}", "truncated dimension header")
        (dim,) = struct.unpack_from("<I", data, pos)
        if dim != metric.dim:
            raise DimensionMismatch(f"{path}: offset {pos}: dimension {dim} != {metric.dim}")
        pos += 4
        if pos + 4 * dim > len(data):
            raise ParseError(path, f"offset {pos}", f"truncated record, need {4 * dim} bytes")
        vec = struct.unpack_from(f"<{dim}f", data, pos)
        pos += 4 * dim
        out.append(MetricObject(len(out), tuple(float(x) for x in vec)))
    return out


# -- writers and synthetic data ------------------------------------------------


def write_words(path, words: Sequence[str]) -> None:
    Path(path).write_text("".join(w + "\n" for w in words), encoding="utf-8")


def write_vector_text(path, vectors: Sequence[Sequence[float]]) -> None:
    Path(path).write_text("".join(" ".join(repr(float(x)) for x in v) + "\n" for v in vectors))


def write_vector_binary(path, vectors: Sequence[Sequence[float]]) -> None:
    buf = bytearray()
    for v in vectors:
        buf += struct.pack(f"<I{len(v)}f", len(v), *v)
    Path(path).write_bytes(bytes(buf))


def gaussian_clusters(
    n: int, n_clusters: int = 3, dim: int = 2, spread: float = 2.0, box: float = 20.0, seed: int = 0
) -> tuple[list[MetricObject], list[int]]:
    """``n`` points around ``n_clusters`` random centers; also returns each
    point's cluster label."""
    rng = random.Random(seed)
    centers = [[rng.uniform(0, box) for _ in range(dim)] for _ in range(n_clusters)]
    objs, labels = [], []
    for i in range(n):
        c = i % n_clusters
        objs.append(MetricObject(i, tuple(rng.gauss(x, spread) for x in centers[c])))
        labels.append(c)
    return objs, labels


def random_words(n: int, min_len: int = 3, max_len: int = 12, alphabet: str = string.ascii_lowercase, seed: int = 0) -> list[MetricObject]:
    rng = random.Random(seed)
    return [
        MetricObject(i, "".join(rng.choice(alphabet) for _ in range(rng.randint(min_len, max_len))))
        for i in range(n)
    ]


def uniform_vectors(n: int, dim: int, seed: int = 0) -> list[MetricObject]:
    rng = random.Random(seed)
    return [MetricObject(i, tuple(rng.random() for _ in range(dim))) for i in range(n)]


# -- radius --------------------------------------------------------------------


def distance_scale(metric: Metric, objects: Sequence[MetricObject], seed: int = 0) -> float:
    """Largest distance among ``PAIR_SAMPLES`` seeded random pairs, or among
    all pairs when there are fewer."""
    if not objects:
        raise EmptyDataset("no objects")
    fn = metric.fn
    n = len(objects)
    if n * (n - 1) // 2 <= PAIR_SAMPLES:
        return max(
            (fn(objects[i].payload, objects[j].payload) for i in range(n) for j in range(i + 1, n)),
            default=0.0,
        )
    rng = random.Random(seed)
    best = 0.0
    for _ in range(PAIR_SAMPLES):
        a, b = rng.randrange(n), rng.randrange(n)
        best = max(best, fn(objects[a].payload, objects[b].payload))
    return best


def resolve_radius(spec: RadiusSpec, metric: Metric, objects: Sequence[MetricObject], seed: int = 0) -> float:
    if not spec.percent:
        return spec.value
    return spec.value / 100.0 * distance_scale(metric, objects, seed)


# -- index files -----------------------------------------------------------------


def index_bytes(dims: DIMS) -> bytes:
    w = Writer()
    dims.write(w)
    body = w.getvalue()
    return MAGIC + VERSION + struct.pack("<I", zlib.crc32(body)) + body


def save_index(dims: DIMS, path) -> None:
    Path(path).write_bytes(index_bytes(dims))


def index_from_bytes(data: bytes) -> DIMS:
    head = len(MAGIC) + len(VERSION) + 4
    if len(data) < head or data[: len(MAGIC)] != MAGIC:
        raise CorruptIndex("not an index file")
    version = data[len(MAGIC) : len(MAGIC) + 1]
    if version != VERSION:
        raise VersionMismatch(f"index format {version!r}, expected {VERSION!r}")
    (crc,) = struct.unpack_from("<I", data, len(MAGIC) + 1)
    body = data[head:]
    if zlib.crc32(body) != crc:
        raise CorruptIndex("checksum mismatch")
    r = Reader(body)
    try:
        dims = DIMS.read(r)
    except (DecodeError, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CorruptIndex(f"undecodable index: {exc}") from exc
    if not r.at_end():
        raise CorruptIndex("trailing bytes after index")
    return dims


def load_index(path) -> DIMS:
    return index_from_bytes(Path(path).read_bytes())
