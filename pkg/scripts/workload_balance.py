"""Hot-spot workload: compare per-worker load spread of the full pipeline and a homogeneous assignment."""

import argparse
import json
import random

from dims import DIMS, DIMSConfig, Metric, MetricKind, MetricObject
from dims.baselines import HomogeneousDIMS
from dims.cluster import RunStats, workload_stats
from dims.ingest import distance_scale, gaussian_clusters


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--workers", type=int, default=10)
    ap.add_argument("--queries", type=int, default=100)
    ap.add_argument("--pct", type=float, default=0.8)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    metric = Metric(MetricKind.L2, 2)
    objs, labels = gaussian_clusters(args.n, seed=args.seed)
    hot = [o for o, lab in zip(objs, labels) if lab == 0]
    rng = random.Random(5)
    queries = [MetricObject(-1, rng.choice(hot).payload) for _ in range(args.queries)]
    r = args.pct / 100 * distance_scale(metric, objs, seed=0)

    for name, cls in (("dims", DIMS), ("homogeneous", HomogeneousDIMS)):
        d = cls(metric, DIMSConfig(n_workers=args.workers, sequential=True))
        d.build(objs)
        batch = RunStats.empty(args.workers)
        for q in queries:
            batch.add(d.range_query(q, r).stats)
        d.close()
        stats = workload_stats(batch)
        print(json.dumps({"policy": name,
                          "examined": [w.examined for w in batch.workers],
                          "examined_std": stats["examined"].std,
                          "busy_std": stats["busy"].std}))


if __name__ == "__main__":
    main()
