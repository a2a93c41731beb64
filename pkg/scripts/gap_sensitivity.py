"""How the exposure slope responds to the shelter threshold.

Simulates one set of races and re-measures it at several gap thresholds, then
prints the eq2 slope and its p-value at each.
"""

from __future__ import annotations

import argparse

from peloton.dilemma.experiment import model_dataset, simulate_races, scenario
from peloton.metrics import DraftingParams, race_metrics
from peloton.stats.lmm import fit_lmm


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", choices=("strategy", "ability", "null"), default="strategy")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--races", type=int, default=9)
    parser.add_argument("--thresholds", type=float, nargs="+", default=[0.1, 0.15, 0.2, 0.25, 0.3, 0.4])
    args = parser.parse_args()

    _, results = simulate_races(scenario(args.scenario, seed=args.seed), args.races)
    print(f"{'threshold':>9s} {'mean tau':>9s} {'slope':>9s} {'p':>9s}")
    for thr in args.thresholds:
        params = DraftingParams(gap_threshold=thr)
        rows = [r for res in results for r in race_metrics(res.log, params) if not r.breakaway]
        fit = fit_lmm(model_dataset("eq2", rows))
        taus = [r.tau for r in rows if r.tau is not None]
        print(f"{thr:9.2f} {sum(taus) / len(taus):9.2f} {fit.beta[1]:9.4f} {fit.p[1]:9.2g}")


if __name__ == "__main__":
    main()
