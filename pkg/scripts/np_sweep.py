"""Sweep the partition count around the model optimum and print measured simulated cost."""

import argparse
import json
import random
import statistics

from dims import DIMS, DIMSConfig, Metric, MetricKind, MetricObject
from dims.cost_model import optimize_np, params_from_index, total_cost
from dims.ingest import distance_scale, gaussian_clusters


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--workers", type=int, default=10)
    ap.add_argument("--queries", type=int, default=100)
    ap.add_argument("--pct", type=float, default=0.8)
    ap.add_argument("--k", type=int, default=8)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    metric = Metric(MetricKind.L2, 2)
    objs, _ = gaussian_clusters(args.n, seed=args.seed)
    r = args.pct / 100 * distance_scale(metric, objs, seed=0)
    probe = DIMS(metric, DIMSConfig(n_workers=args.workers, sequential=True))
    probe.build(objs)
    params = params_from_index(probe, r, seed=0)
    n_star = optimize_np(params)
    probe.close()

    rng = random.Random(args.seed)
    queries = []
    for _ in range(args.queries):
        base = rng.choice(objs).payload
        queries.append(MetricObject(-1, tuple(x + rng.gauss(0, 0.5) for x in base)))

    for f in (0.25, 0.5, 1, 2, 4, 8):
        n_p = max(1, round(n_star * f))
        d = DIMS(metric, DIMSConfig(n_partitions=n_p, n_workers=args.workers, sequential=True))
        d.build(objs)
        rng_cost = statistics.fmean(d.range_query(q, r).cost for q in queries)
        knn_cost = statistics.fmean(d.knn_query(q, args.k).cost for q in queries)
        d.close()
        print(json.dumps({"N_p": n_p, "n_star": n_star, "range_cost": rng_cost, "knn_cost": knn_cost,
                          "model_total": total_cost(min(n_p, args.n), params).total}))


if __name__ == "__main__":
    main()
