"""Command line: run scenarios, check histories, hunt for witnesses, replay the message chain.

Exit codes: 0 pass or witness found, 1 consistency or property failure,
2 usage, 3 checker exhausted, 4 unsourced value, 5 nothing found,
6 the message-chain argument broke down.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Sequence

from . import adversary
from .history import UnsourcedValue, check_causal_consistency, dumps_history, extract_history, loads_history
from .kernel import full_trace
from .model import InvalidSpec, SimError, SystemSpec
from .protocols import PROTOCOLS, make_protocol
from .scenario import Scenario, ScenarioError, load_scenario, run_fair, run_scripted

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_EXHAUSTED, EXIT_UNSOURCED, EXIT_NONE_FOUND, EXIT_LEMMA = range(7)


class Usage(Exception):
    pass


def _out(lines: Sequence[str]) -> None:
    sys.stdout.write("".join(f"{x}\n" for x in lines))


def _header(cmd: str, **fields) -> str:
    return f"# fastrot {cmd} " + " ".join(f"{k}={v}" for k, v in fields.items())


def _scenario(args) -> Scenario:
    if not args.scenario:
        raise Usage("--scenario is required")
    try:
        sc = load_scenario(args.scenario)
    except OSError as exc:
        raise Usage(f"cannot read {args.scenario}: {exc.strerror}") from exc
    except ScenarioError as exc:
        raise Usage(f"{args.scenario}: {exc}") from exc
    if args.seed is not None:
        sc.seed = args.seed
        if sc.generator is not None:
            sc.generator.seed = args.seed
    if args.budget is not None:
        sc.budget = args.budget
    if getattr(args, "depth", None) is not None:
        sc.depth = args.depth
    return sc


def _protocol_and_spec(args):
    """From --scenario, or --protocol on the default two-server system (--ring N for partial replication)."""
    if args.scenario:
        sc = _scenario(args)
        return sc.protocol(), sc.spec, sc
    if not args.protocol:
        raise Usage("give --scenario or --protocol")
    try:
        protocol = make_protocol(args.protocol)
        spec = SystemSpec.ring_spec(args.ring) if args.ring else SystemSpec.disjoint_spec()
        protocol.check_spec(spec)
    except (ValueError, InvalidSpec) as exc:
        raise Usage(str(exc)) from exc
    return protocol, spec, None


# --------------------------------------------------------------------------
# run


def _run_one(sc: Scenario, window: int):
    if sc.mode == "scripted":
        return run_scripted(sc, window=window)
    protocol = sc.protocol()
    return run_fair(sc.spec, protocol, sc.transactions(), sc.seed, sc.budget, window)


def _report(res, sc: Scenario, window: int, fmt: str) -> list[str]:
    protocol = sc.protocol()
    lines = [_header("run", protocol=protocol.describe().replace(" ", ""), declared=protocol.declared_text(),
                     mode=sc.mode, seed=sc.seed, budget=sc.budget, window=window)]
    for r in res.reports:
        lines.append(f"report\t{r.line}" if fmt == "records" else r.line)
    for anchor, v in res.windows:
        lines.append(f"window\tT{anchor}\t{v.outcome}" if fmt == "records" else f"window T{anchor}: {v.outcome}")
    verdict = "Consistent" if res.consistent else "Exhausted" if res.exhausted and not res.first_failure else "Inconsistent"
    lines.append(f"declared\t{'held' if res.declared_ok else 'violated'}")
    lines.append(f"consistency\t{verdict}")
    if res.first_failure:
        lines.append(f"first failure\t{res.first_failure}")
    return lines


def _exit_of(res) -> int:
    if res.first_failure:
        return EXIT_FAIL
    if not res.consistent:
        return EXIT_EXHAUSTED
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _scenario(args)
    if sc.mode == "hunt":
        return _hunt(sc.protocol(), sc.spec, sc.depth, sc.seed, args.out_dir or "witness")
    res = _run_one(sc, args.window)
    lines = _report(res, sc, args.window, args.format)
    _out(lines)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        full_trace(res.trace).dump(os.path.join(args.out_dir, "trace.tsv"))
        with open(os.path.join(args.out_dir, "history.tsv"), "w") as fh:
            fh.write(dumps_history(extract_history(res.trace)))
        with open(os.path.join(args.out_dir, "report.txt"), "w") as fh:
            fh.write("".join(f"{x}\n" for x in lines))
    return _exit_of(res)


# --------------------------------------------------------------------------
# check-history


def cmd_check_history(args) -> int:
    try:
        with open(args.history) as fh:
            h = loads_history(fh.read())
    except OSError as exc:
        raise Usage(f"cannot read {args.history}: {exc.strerror}") from exc
    except ValueError as exc:
        raise Usage(f"{args.history}: {exc}") from exc
    try:
        v = check_causal_consistency(h, cap=args.cap)
    except UnsourcedValue as exc:
        _out([_header("check-history", cap=args.cap), f"UnsourcedValue\t{exc}"])
        return EXIT_UNSOURCED
    lines = [_header("check-history", cap=args.cap), v.outcome]
    if v.note:
        lines.append(f"note\t{v.note}")
    if v.witness:
        for c, order in sorted(v.witness.items()):
            lines.append(f"order\t{c}\t{' '.join(f'T{i}' for i in order)}")
    _out(lines)
    return {"Consistent": EXIT_OK, "Inconsistent": EXIT_FAIL, "Exhausted": EXIT_EXHAUSTED}[v.outcome]


# --------------------------------------------------------------------------
# hunt and the message chain


def _hunt(protocol, spec, depth: int, seed: int, out_dir: str) -> int:
    if not protocol.all_four:
        raise Usage(f"{protocol.name} declares {protocol.declared_text()}; hunting needs a protocol claiming RNVW")
    if depth <= 0:
        raise Usage("--depth must be positive")
    res = adversary.hunt(protocol, spec, depth, seed)
    head = _header("hunt", protocol=protocol.describe().replace(" ", ""), seed=seed, depth=depth)
    if isinstance(res, adversary.NoneFound):
        _out([head, f"NoneFound\tnodes={res.nodes}\tprobes={res.probes}\tdeepest={res.deepest}\t{res.note}"])
        return EXIT_NONE_FOUND
    paths = adversary.write_bundle(res, out_dir)
    _out([head, f"witness\t{res.kind}", *res.narrative.rstrip("\n").split("\n"),
          *(f"wrote\t{paths[k]}" for k in sorted(paths))])
    return EXIT_OK


def cmd_hunt(args) -> int:
    protocol, spec, sc = _protocol_and_spec(args)
    depth = args.depth if args.depth is not None else sc.depth if sc else 40
    seed = args.seed if args.seed is not None else sc.seed if sc else 0
    return _hunt(protocol, spec, depth, seed, args.out_dir or "witness")


def cmd_repro_lemma3(args) -> int:
    protocol, spec, sc = _protocol_and_spec(args)
    seed = args.seed if args.seed is not None else sc.seed if sc else 0
    head = _header("repro-lemma3", protocol=protocol.describe().replace(" ", ""), k_max=args.k_max, seed=seed)
    try:
        rep = adversary.repro_lemma3(protocol, spec, args.k_max, seed=seed, cap=args.cap)
    except adversary.NotAllFour as exc:
        raise Usage(str(exc)) from exc
    except adversary.LemmaStructureBroken as exc:
        _out([head, f"LemmaStructureBroken\t{exc}"])
        return EXIT_LEMMA
    except InvalidSpec as exc:
        raise Usage(str(exc)) from exc
    lines = [head, *rep.lines()]
    if rep.rows:
        lines.append(f"census\t{' '.join(str(r.sent) for r in rep.rows)}\t{'growing' if rep.census_grows else 'NOT growing'}")
    _out(lines)
    if args.out_dir and rep.witness is not None:
        adversary.write_bundle(rep.witness, args.out_dir)
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep


def _sweep_one(job: tuple[str, int, int]) -> tuple[int, int, str]:
    path, seed, window = job
    sc = load_scenario(path)
    sc.seed = seed
    if sc.generator is not None:
        sc.generator.seed = seed
    res = _run_one(sc, window)
    return seed, _exit_of(res), res.first_failure or "ok"


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    first = sc.seed
    jobs = [(args.scenario, s, args.window) for s in range(first, first + args.seeds)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    lines = [_header("sweep", protocol=sc.protocol_name, first_seed=first, seeds=args.seeds, window=args.window)]
    lines += [f"seed\t{s}\texit={code}\t{msg}" for s, code, msg in results]
    failed = [s for s, code, _ in results if code != EXIT_OK]
    lines.append(f"failed\t{len(failed)}\t{' '.join(map(str, failed)) or '-'}")
    _out(lines)
    return max((code for _, code, _ in results), default=EXIT_OK)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fastrot", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, *, depth=False):
        p.add_argument("--scenario", help="scenario file (TOML with format = \"fastrot-scenario/1\")")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--budget", type=int, default=None, help="scheduled events per run")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--window", type=int, default=8, help="checker window size")
        p.add_argument("--format", choices=("text", "records"), default="text")
        p.add_argument("--cap", type=int, default=64, help="probe or checker cap")
        if depth:
            p.add_argument("--depth", type=int, default=None)

    p = sub.add_parser("run", help="run a scenario and report properties and consistency")
    common(p, depth=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check-history", help="check a history file for causal consistency")
    p.add_argument("history")
    p.add_argument("--cap", type=int, default=8, help="largest number of transactions checked")
    p.add_argument("--format", choices=("text", "records"), default="text")
    p.set_defaults(func=cmd_check_history)

    for name, func, helptext in (("hunt", cmd_hunt, "search solo write schedules for a witness"),
                                 ("repro-lemma3", cmd_repro_lemma3, "build the message chain round by round")):
        p = sub.add_parser(name, help=helptext)
        common(p, depth=True)
        p.add_argument("--protocol", choices=sorted(set(PROTOCOLS) | {"eager", "commit_wait"}))
        p.add_argument("--ring", type=int, default=0, help="partially replicated ring of N servers")
        if name == "repro-lemma3":
            p.add_argument("--k-max", type=int, default=5)
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", help="run a scenario over consecutive seeds")
    common(p)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except Usage as exc:
        print(f"fastrot: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimError as exc:
        print(f"fastrot: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
