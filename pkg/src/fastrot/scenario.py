"""Scenarios: a system, a protocol, a workload and a schedule mode, plus the run pipeline."""

from __future__ import annotations

import random
import sys
from dataclasses import dataclass, field
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .history import Verdict, check_windows, extract_history
from .kernel import (
    Configuration,
    Deliver,
    DeliverNext,
    Invoke,
    Step,
    Trace,
    drain,
    fair_run,
    init,
    run,
)
from .model import InvalidSpec, ProcessId, SystemSpec, Transaction
from .properties import property_reports
from .protocols import ProtocolSpec, make_protocol

FORMAT = "fastrot-scenario/1"
FIRST_WORKLOAD_TXN = 100


class ScenarioError(ValueError):
    pass


@dataclass
class Generator:
    seed: int = 0
    transactions: int = 8
    read_fraction: float = 0.5
    arity: int = 2


@dataclass
class Scenario:
    spec: SystemSpec
    protocol_name: str
    protocol_params: dict = field(default_factory=dict)
    mode: str = "fair"  # fair | scripted | hunt
    seed: int = 0
    budget: int = 2000
    depth: int = 40
    workload: list[Transaction] = field(default_factory=list)
    generator: Generator | None = None
    script: list[str] = field(default_factory=list)

    def protocol(self) -> ProtocolSpec:
        return make_protocol(self.protocol_name, **self.protocol_params)

    def transactions(self) -> list[Transaction]:
        if self.workload:
            return list(self.workload)
        if self.generator is not None:
            return generate_workload(self.spec, self.protocol(), self.generator)
        return []


def generate_workload(spec: SystemSpec, protocol: ProtocolSpec, gen: Generator) -> list[Transaction]:
    """Seeded mix of read-only and write-only transactions over the non-initializer clients."""
    rng = random.Random(gen.seed)
    clients = [spec.writer, *spec.readers]
    limit = protocol.write_arity_limit or len(spec.objects)
    out = []
    for k in range(gen.transactions):
        txn_id = FIRST_WORKLOAD_TXN + k
        cl = clients[rng.randrange(len(clients))]
        if rng.random() < gen.read_fraction:
            n = rng.randint(1, len(spec.objects))
            reads = tuple(sorted(rng.sample(spec.objects, n)))
            out.append(Transaction(txn_id, cl, reads=reads))
        else:
            n = rng.randint(1, max(1, min(gen.arity, limit)))
            objs = sorted(rng.sample(spec.objects, n))
            out.append(Transaction(txn_id, cl, writes=tuple((o, f"v{txn_id}{o.lower()}") for o in objs)))
    return out


# --------------------------------------------------------------------------
# scenario files


def _spec_from(table: Mapping[str, Any]) -> SystemSpec:
    if "ring" in table:
        return SystemSpec.ring_spec(int(table["ring"]), clients=table.get("clients"))
    servers = int(table.get("servers", 2))
    clients = int(table.get("clients", 4))
    objects = table.get("objects")
    if objects is None:
        return SystemSpec.disjoint_spec(servers, clients)
    if isinstance(objects, int):
        return SystemSpec.disjoint_spec(servers, clients, objects)
    objs = tuple(objects)
    repl = table.get("replication", {})
    replication = {o: tuple(repl.get(o, [i % servers])) for i, o in enumerate(objs)}
    initial = table.get("initial", {})
    initial_values = {o: initial.get(o, f"x{i}_in") for i, o in enumerate(objs)}
    return SystemSpec(servers, clients, objs, replication, initial_values)


def loads_scenario(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"not a scenario file: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise ScenarioError(f"missing or unsupported header; expected format = \"{FORMAT}\"")
    try:
        spec = _spec_from(doc.get("system", {}))
    except (InvalidSpec, TypeError, KeyError) as exc:
        raise ScenarioError(f"bad [system]: {exc}") from exc
    proto = doc.get("protocol", {})
    if "name" not in proto:
        raise ScenarioError("[protocol] needs a name")
    params = {k: v for k, v in proto.items() if k != "name"}
    sched = doc.get("schedule", {})
    sc = Scenario(spec, proto["name"], params,
                  mode=sched.get("mode", "fair"),
                  seed=int(sched.get("seed", 0)),
                  budget=int(sched.get("budget", 2000)),
                  depth=int(sched.get("depth", 40)),
                  script=list(sched.get("events", [])))
    if sc.mode not in ("fair", "scripted", "hunt"):
        raise ScenarioError(f"unknown schedule mode {sc.mode!r}")
    try:
        sc.protocol()
    except (ValueError, TypeError) as exc:
        raise ScenarioError(str(exc)) from exc
    for k, item in enumerate(doc.get("workload", [])):
        try:
            cl = ProcessId.parse(item["client"])
            writes = tuple(sorted(item.get("writes", {}).items()))
            reads = tuple(item.get("reads", []))
            txn = Transaction(int(item.get("txn", FIRST_WORKLOAD_TXN + k)), cl, reads=reads, writes=writes)
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"bad workload entry {k}: {exc}") from exc
        unknown = (set(reads) | {o for o, _ in writes}) - set(spec.objects)
        if unknown or not cl.is_client:
            raise ScenarioError(f"workload entry {k} names unknown objects or processes")
        sc.workload.append(txn)
    if "generator" in doc:
        g = doc["generator"]
        sc.generator = Generator(int(g.get("seed", sc.seed)), int(g.get("transactions", 8)),
                                 float(g.get("read_fraction", 0.5)), int(g.get("arity", 2)))
    return sc


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return loads_scenario(fh.read())


def parse_script_event(text: str, workload: Mapping[int, Transaction]) -> Any:
    """``step p0`` / ``deliver c2 p0`` (head of link) / ``deliver #17`` / ``invoke 100``."""
    words = text.split()
    if not words:
        raise ScenarioError("empty script event")
    if words[0] == "step" and len(words) == 2:
        return Step(ProcessId.parse(words[1]))
    if words[0] == "deliver" and len(words) == 2 and words[1].startswith("#"):
        return Deliver(int(words[1][1:]))
    if words[0] == "deliver" and len(words) == 3:
        return DeliverNext(ProcessId.parse(words[1]), ProcessId.parse(words[2]))
    if words[0] == "invoke" and len(words) == 2:
        t = workload[int(words[1])]
        return Invoke(t.client, t)
    raise ScenarioError(f"cannot parse script event {text!r}")


# --------------------------------------------------------------------------
# the pipeline


@dataclass
class RunResult:
    trace: Trace
    reports: list
    windows: list[tuple[int, Verdict]]
    declared_ok: bool
    consistent: bool
    first_failure: str | None
    exhausted: bool = False


def execute(c0: Configuration, protocol: ProtocolSpec, txns: list[Transaction], seed: int, budget: int) -> Trace:
    """Fair run of a workload from C_0 until every transaction completes, then drain."""
    want = {t.txn_id for t in txns}

    def finished(cfg: Configuration) -> bool:
        return want <= cfg.txn_ids and not any(t.txn_id in want for t in cfg.active.values())

    tr = fair_run(c0, seed, budget, workload=txns, until=finished, label="workload")
    return tr.then(drain(tr.final))


def evaluate(trace: Trace, protocol: ProtocolSpec, window: int = 8) -> RunResult:
    reports = property_reports(trace, protocol)
    failure = None
    declared_ok = True
    for r in reports:
        for prop, ok in r.flags.items():
            if prop in protocol.declared and not ok:
                declared_ok = False
                failure = failure or f"declared property {prop} failed: {r.line}"
    h = extract_history(trace)
    wins = check_windows(h, window)
    consistent = all(v.outcome == "Consistent" for _, v in wins)
    exhausted = any(v.outcome == "Exhausted" for _, v in wins)
    for anchor, v in wins:
        if v.outcome == "Inconsistent":
            failure = failure or f"window anchored at T{anchor} is Inconsistent"
            break
    return RunResult(trace, reports, wins, declared_ok, consistent, failure, exhausted)


def run_fair(spec: SystemSpec, protocol: ProtocolSpec, txns: list[Transaction], seed: int,
             budget: int = 2000, window: int = 8, c0: Configuration | None = None) -> RunResult:
    c0 = c0 if c0 is not None else init(spec, protocol)
    return evaluate(execute(c0, protocol, txns, seed, budget), protocol, window)


def run_scripted(sc: Scenario, c0: Configuration | None = None, window: int = 8) -> RunResult:
    protocol = sc.protocol()
    c0 = c0 if c0 is not None else init(sc.spec, protocol)
    by_id = {t.txn_id: t for t in sc.transactions()}
    events = [parse_script_event(e, by_id) for e in sc.script]
    return evaluate(run(c0, events, label="scripted"), protocol, window)
