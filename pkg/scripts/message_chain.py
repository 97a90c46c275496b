"""Walk the message chain of commit_wait for several phase counts and show where each one breaks."""

import argparse

from fastrot.adversary import repro_lemma3
from fastrot.protocols import make_protocol


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k-max", type=int, default=8)
    ap.add_argument("--phases", type=int, nargs="*", default=[1, 2, 3, 4])
    args = ap.parse_args()
    print("phases\trounds_held\toutcome\tcensus\tchecks")
    for phases in args.phases:
        rep = repro_lemma3(make_protocol("commit_wait", phases=phases), k_max=args.k_max)
        w = rep.witness
        census = " ".join(str(r.sent) for r in rep.rows) or "-"
        checks = f"{sum(ok for _, ok in w.checks)}/{len(w.checks)}"
        print(f"{phases}\t{len(rep.rows)}\t{w.kind} at k={w.k}\t{census}\t{checks}")


if __name__ == "__main__":
    main()
