"""Command line: build, query, bench, optimize, validate.

Every command prints line-delimited JSON records on stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
import time
from dataclasses import replace
from pathlib import Path

from .cluster import RunStats, simulated_cost, workload_stats
from .coordinator import DIMS, DIMSConfig
from .cost_model import TABLE_GRID, calibrate_t_c, optimize_np, params_from_index, total_cost
from .ingest import (
    CorruptIndex,
    DatasetSpec,
    Format,
    ParseError,
    RadiusSpec,
    VersionMismatch,
    load_dataset,
    load_index,
    resolve_radius,
    save_index,
)
from .metric import Metric, MetricError, MetricKind, MetricObject, validate_metric
from .partitioner import EmptyDataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
RADIUS_GRID = (0.1, 0.2, 0.4, 0.8, 1.6, 3.2)
K_GRID = (1, 2, 4, 8, 16, 32)
SEED_ENV = "DIMS_SEED"


class UsageError(Exception):
    pass


def emit(rec: dict, out=None) -> None:
    print(json.dumps(rec, sort_keys=True), file=out or sys.stdout)


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _infer_dim(path: Path, fmt: Format) -> int:
    if fmt is Format.VECTOR_BINARY:
        head = path.read_bytes()[:4]
        if len(head) < 4:
            raise EmptyDataset(f"{path}: no records")
        return int.from_bytes(head, "little")
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                return len(line.split())
    raise EmptyDataset(f"{path}: no records")


def dataset_spec(args) -> DatasetSpec:
    kind = MetricKind(args.metric)
    fmt = Format(args.format) if args.format else (Format.WORDS if kind is MetricKind.EDIT else Format.VECTOR_TEXT)
    path = Path(args.data)
    dim = None
    if kind is not MetricKind.EDIT:
        dim = args.dim or _infer_dim(path, fmt)
    return DatasetSpec(path, fmt, Metric(kind, dim), args.limit)


def parse_query(text: str, metric: Metric) -> MetricObject:
    if metric.kind is MetricKind.EDIT:
        return MetricObject(-1, text)
    try:
        vec = tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise UsageError(f"cannot parse query vector {text!r}") from None
    q = MetricObject(-1, vec)
    metric.check(q)
    return q


# -- commands ------------------------------------------------------------------


def cmd_build(args) -> None:
    spec = dataset_spec(args)
    objs = load_dataset(spec)
    cfg = DIMSConfig(
        n_partitions=args.np, n_workers=args.workers, fanout=args.fanout, seed=args.seed, sequential=args.sequential
    )
    t0 = time.perf_counter()
    dims = DIMS(spec.metric, cfg)
    stats = dims.build(objs)
    wall = time.perf_counter() - t0
    save_index(dims, args.out)
    dims.close()
    emit({
        "command": "build",
        "objects": len(objs),
        "partitions": sum(1 for _ in dims.tree.leaf_entries()),
        "buckets": len(dims.index),
        "partition_capacity": dims.tree.config.leaf_capacity,
        "wall": wall,
        "stats": stats.to_record(),
        "out": str(args.out),
    })


def _radius(args, dims: DIMS) -> float:
    if args.radius is not None:
        return resolve_radius(RadiusSpec(args.radius, percent=False), dims.metric, [])
    return resolve_radius(RadiusSpec(args.r), dims.metric, list(dims.catalog.values()), args.seed)


def cmd_query(args) -> None:
    dims = load_index(args.index)
    if args.q is None and args.q_id is None:
        raise UsageError("query needs --q or --q-id")
    if args.q_id is not None:
        if args.q_id not in dims.catalog:
            raise UsageError(f"no object with id {args.q_id}")
        q = dims.catalog[args.q_id]
    else:
        q = parse_query(args.q, dims.metric)
    if args.mode == "range":
        ans = dims.range_query(q, _radius(args, dims))
    else:
        ans = dims.knn_query(q, args.k)
    rec = ans.to_record()
    rec["command"] = "query"
    rec["answer_payloads"] = [dims.catalog[i].payload for i in ans.ids]
    emit(rec)
    dims.close()


def cmd_bench(args) -> None:
    dims = load_index(args.index)
    if args.sequential:
        dims.config = replace(dims.config, sequential=True)
        dims._reset_cluster()
    rng = random.Random(args.seed)
    pool = list(dims.catalog.values())
    queries = [rng.choice(pool) for _ in range(args.queries)]
    if args.mode == "range":
        settings = RADIUS_GRID if args.grid else (args.r,)
    else:
        settings = K_GRID if args.grid else (args.k,)
    scale = resolve_radius(RadiusSpec(100.0), dims.metric, pool, args.seed)
    for s in settings:
        batch = RunStats.empty(dims.config.n_workers)
        lat = []
        for q in queries:
            if args.mode == "range":
                r = args.radius if args.radius is not None and not args.grid else s / 100.0 * scale
                ans = dims.range_query(q, r)
            else:
                ans = dims.knn_query(q, s)
            batch.add(ans.stats)
            lat.append(ans.cost)
            rec = {
                "command": "bench",
                "mode": args.mode,
                "setting": s,
                "q": q.id,
                "latency": ans.cost,
                "answers": len(ans.entries),
                "distance_count": {
                    "primary": ans.stats.primary.distances,
                    "workers": sum(w.distances for w in ans.stats.workers),
                },
                "busy": [w.busy for w in ans.stats.workers],
                "examined": [w.examined for w in ans.stats.workers],
                "messages": ans.stats.messages,
                "entries": ans.stats.entries,
            }
            if not args.no_wall:
                rec["wall"] = ans.wall
            emit(rec)
        ws = workload_stats(batch)
        emit({
            "command": "bench",
            "summary": True,
            "mode": args.mode,
            "setting": s,
            "queries": len(queries),
            "mean_latency": sum(lat) / len(lat) if lat else 0.0,
            "workload_std": {"busy": ws["busy"].std, "examined": ws["examined"].std},
            "workload": {k: v.__dict__ for k, v in ws.items()},
            "batch_cost": simulated_cost(batch, dims.config.t_c),
            "stats": batch.to_record(wall=not args.no_wall),
        })
    dims.close()


def _curve_point(n: int, p) -> dict:
    if not 1 <= n <= p.N:
        return {"N_p": n, "total": None}
    c = total_cost(n, p)
    return {**c.__dict__, "total": c.total}


def cmd_optimize(args) -> None:
    dims = load_index(args.index)
    r = _radius(args, dims)
    t_c = None
    if args.calibrate:
        t_c = calibrate_t_c(dims.metric, list(dims.catalog.values()), seed=args.seed)
    p = params_from_index(dims, r, samples=args.samples, seed=args.seed, t_c=t_c)
    n_star = optimize_np(p)
    emit({
        "command": "optimize",
        "params": {**p.__dict__, "lambda": p.lam, "raw_lambda": p.raw_lambda},
        "n_star": n_star,
        "n_star_cost": _curve_point(n_star, p),
        "curve": [_curve_point(n, p) for n in TABLE_GRID],
    })
    dims.close()


def cmd_validate(args) -> None:
    spec = dataset_spec(args)
    objs = load_dataset(spec)
    rep = validate_metric(spec.metric, objs, args.triples, seed=args.seed)
    rec = rep.to_record()
    rec["command"] = "validate"
    rec["objects"] = len(objs)
    emit(rec)
    if not rep.ok:
        raise SystemExit(EXIT_DATA)


# -- parser ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dims", description="Distributed metric index over a simulated cluster.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp):
        sp.add_argument("--data", required=True)
        sp.add_argument("--metric", required=True, choices=[k.value for k in MetricKind])
        sp.add_argument("--format", choices=[f.value for f in Format])
        sp.add_argument("--dim", type=int)
        sp.add_argument("--limit", type=float, help="keep the first LIMIT percent of records")

    def seed_arg(sp):
        sp.add_argument("--seed", type=int, default=None)

    def radius_args(sp):
        sp.add_argument("--r", type=float, default=0.8, help="radius as percent of the distance scale")
        sp.add_argument("--radius", type=float, help="absolute radius (overrides --r)")

    b = sub.add_parser("build")
    data_args(b)
    b.add_argument("--np", type=int, default=200)
    b.add_argument("--workers", type=int, default=10)
    b.add_argument("--fanout", type=int, default=20)
    b.add_argument("--sequential", action="store_true")
    b.add_argument("--out", required=True)
    seed_arg(b)
    b.set_defaults(func=cmd_build)

    q = sub.add_parser("query")
    q.add_argument("--index", required=True)
    q.add_argument("--mode", choices=["range", "knn"], required=True)
    q.add_argument("--q")
    q.add_argument("--q-id", type=int)
    radius_args(q)
    q.add_argument("--k", type=int, default=8)
    seed_arg(q)
    q.set_defaults(func=cmd_query)

    be = sub.add_parser("bench")
    be.add_argument("--index", required=True)
    be.add_argument("--queries", type=int, default=100)
    be.add_argument("--mode", choices=["range", "knn"], default="range")
    be.add_argument("--grid", action="store_true", help="sweep the radius or k grid")
    radius_args(be)
    be.add_argument("--k", type=int, default=8)
    be.add_argument("--sequential", action="store_true")
    be.add_argument("--no-wall", action="store_true", help="omit wall-clock fields")
    seed_arg(be)
    be.set_defaults(func=cmd_bench)

    o = sub.add_parser("optimize")
    o.add_argument("--index", required=True)
    radius_args(o)
    o.add_argument("--samples", type=int, default=10_000)
    o.add_argument("--calibrate", action="store_true", help="measure T_c instead of using the index's value")
    seed_arg(o)
    o.set_defaults(func=cmd_optimize)

    v = sub.add_parser("validate")
    data_args(v)
    v.add_argument("--triples", type=int, default=10_000)
    seed_arg(v)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.seed is None:
            args.seed = default_seed()
        for name in ("np", "workers", "k", "queries", "triples"):
            if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
                raise UsageError(f"--{name} must be positive")
        args.func(args)
    except UsageError as exc:
        print(f"dims: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, EmptyDataset, MetricError, CorruptIndex, VersionMismatch, OSError, ValueError) as exc:
        print(f"dims: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"dims: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
