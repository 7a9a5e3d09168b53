"""Print the analytic cost curve and the optimum for a range of dataset sizes."""

import argparse
import json

from dims import DIMS, DIMSConfig, Metric, MetricKind
from dims.cost_model import TABLE_GRID, CostParams, cost_curve, optimize_np, params_from_index
from dims.ingest import distance_scale, gaussian_clusters


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--pct", type=float, default=0.8)
    ap.add_argument("--sizes", type=int, nargs="*", default=[10_000, 100_000, 1_000_000])
    args = ap.parse_args()

    metric = Metric(MetricKind.L2, 2)
    objs, _ = gaussian_clusters(args.n, seed=7)
    r = args.pct / 100 * distance_scale(metric, objs, seed=0)
    d = DIMS(metric, DIMSConfig(sequential=True))
    d.build(objs)
    base = params_from_index(d, r, seed=0)
    d.close()
    for n in args.sizes:
        p = CostParams(N=n, N_w=base.N_w, sigma2=base.sigma2, r=base.r, m=base.m, T_c=base.T_c)
        curve = [{"N_p": c.N_p, "total": c.total} for c in cost_curve(p, [g for g in TABLE_GRID if g <= n])]
        print(json.dumps({"N": n, "lambda_raw": p.raw_lambda, "lambda": p.lam, "n_star": optimize_np(p),
                          "curve": curve}))


if __name__ == "__main__":
    main()
