"""Monte Carlo comparison of the BR and FPL estimators on IID logit data.

    python3 scripts/estimator_monte_carlo.py --reps 50 --households 2000
"""

import argparse

import numpy as np

from spillover_welfare.estimation import FitSpec, fit_br, fit_fpl
from spillover_welfare.model import LOGIT, CommonIntercept, IndexParams
from spillover_welfare.simulation import simulate_iid, standard_population

SLOPES = ("c1", "c2", "c3[children]", "c3[female_edu]", "alpha")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--villages", type=int, default=11)
    ap.add_argument("--households", type=int, default=2000)
    ap.add_argument("--alpha", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    truth = IndexParams(-0.01, 2e-5, (0.1, 0.05), args.alpha, CommonIntercept(-1.0), LOGIT)
    true = dict(zip(SLOPES, (-0.01, 2e-5, 0.1, 0.05, args.alpha)))
    pop = standard_population(args.villages, args.households)
    tied = (1, args.villages)
    est = {"BR": [], "FPL": []}
    cover = {"BR": [], "FPL": []}
    for r in range(args.reps):
        ds = simulate_iid(pop, truth, args.seed * 100_003 + r)
        for name, res in (("BR", fit_br(ds, FitSpec("BR", LOGIT, "dummies", tied=tied))),
                          ("FPL", fit_fpl(ds, FitSpec("FPL", LOGIT, "dummies", tied=tied)))):
            est[name].append([res.estimate(k) for k in SLOPES])
            cover[name].append([abs(res.estimate(k) - true[k]) <= 1.96 * res.se(k)
                                for k in SLOPES])
    print(f"{args.reps} replications, {args.villages} villages x {args.households} households")
    print(f"{'param':>16} {'true':>10} {'BR mean':>11} {'BR sd':>10} {'FPL mean':>11} "
          f"{'95% cover BR':>13} {'95% cover FPL':>14}")
    for j, k in enumerate(SLOPES):
        b, f = np.array(est["BR"])[:, j], np.array(est["FPL"])[:, j]
        print(f"{k:>16} {true[k]:10.4g} {b.mean():11.4g} {b.std(ddof=1):10.3g} {f.mean():11.4g} "
              f"{np.mean(np.array(cover['BR'])[:, j]):13.2f} "
              f"{np.mean(np.array(cover['FPL'])[:, j]):14.2f}")


if __name__ == "__main__":
    main()
