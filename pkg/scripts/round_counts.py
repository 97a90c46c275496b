"""Read rounds per protocol over seeded fair runs, one TSV row per protocol."""

import argparse
from collections import Counter
from pathlib import Path

from fastrot.properties import check_fast_rot
from fastrot.scenario import load_scenario, run_fair

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=200)
    ap.add_argument("names", nargs="*", default=["cops_snow", "wren", "cops_rw"])
    args = ap.parse_args()
    print("scenario\tprotocol\treads\trounds\tR\tN\tV\tinconsistent_runs")
    for name in args.names:
        sc = load_scenario(SCENARIOS / f"{name}.toml")
        rounds, flags, bad = Counter(), Counter(), 0
        for seed in range(args.seeds):
            sc.generator.seed = seed
            res = run_fair(sc.spec, sc.protocol(), sc.transactions(), seed, sc.budget)
            bad += not res.consistent
            for r in res.reports:
                if "R" in r.flags:
                    rounds[check_fast_rot(res.trace, r.txn_id).rounds] += 1
                    flags.update(k for k, ok in r.flags.items() if ok)
        reads = sum(rounds.values())
        hist = ",".join(f"{k}:{n}" for k, n in sorted(rounds.items()))
        print(f"{name}\t{sc.protocol().describe()}\t{reads}\t{hist}\t"
              f"{flags['R']}\t{flags['N']}\t{flags['V']}\t{bad}")


if __name__ == "__main__":
    main()
