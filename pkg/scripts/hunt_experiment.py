"""Search cost of finding a split read, per protocol, system and search seed."""

import argparse
import time

from fastrot.adversary import NoneFound, hunt
from fastrot.model import SystemSpec
from fastrot.protocols import make_protocol

SYSTEMS = {"two": SystemSpec.disjoint_spec(), "ring3": SystemSpec.ring_spec(3), "ring4": SystemSpec.ring_spec(4)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--depth", type=int, default=40)
    args = ap.parse_args()
    print("protocol\tsystem\tseed\tresult\tnodes\tprobes\tdepth\tseconds")
    for name in ("eager", "commit_wait"):
        for sys_name, spec in SYSTEMS.items():
            for seed in range(args.seeds):
                t0 = time.perf_counter()
                res = hunt(make_protocol(name), spec, args.depth, seed)
                dt = time.perf_counter() - t0
                if isinstance(res, NoneFound):
                    row = ("NoneFound", res.nodes, res.probes, res.deepest)
                else:
                    v = res.verdicts
                    row = (res.kind, v["nodes"], v["probes"], v["depth"])
                print(f"{name}\t{sys_name}\t{seed}\t" + "\t".join(map(str, row)) + f"\t{dt:.3f}")


if __name__ == "__main__":
    main()
