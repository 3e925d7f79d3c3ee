"""Adaptive vs uniform-eps regret slopes on band-mdp, median over seeds."""
import argparse
import json

import numpy as np

from zoomq.experiments import adaptivity_sweep


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--env", default="band-mdp")
    p.add_argument("--Ks", default="1000,3000,10000,30000,100000")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", default=None, help="optional JSON report path")
    args = p.parse_args()
    Ks = [int(k) for k in args.Ks.split(",")]
    res = adaptivity_sweep(args.env, Ks, range(args.seeds), progress=print)
    eps, best = res.best_uniform
    report = {
        "Ks": Ks,
        "adaptive_median": res.median_curve(res.adaptive).tolist(),
        "adaptive_slope": res.adaptive_slope,
        "uniform_median": {str(e): res.median_curve(a).tolist() for e, a in res.uniform.items()},
        "uniform_slopes": {str(e): s for e, s in res.uniform_slopes.items()},
        "best_uniform": [eps, best],
        "finest_fraction": res.finest_fraction,
        "finest_fraction_median": float(np.median(res.finest_fraction)),
        "seconds": res.seconds,
    }
    print(json.dumps(report, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)


if __name__ == "__main__":
    main()
