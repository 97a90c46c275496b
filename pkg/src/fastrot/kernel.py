"""Asynchronous message-passing kernel.

Processes are deterministic state machines. Every directed link has a FIFO
outcome buffer at the sender; every process has one income buffer holding
what was delivered to it, in delivery order. A delivery moves the head of an
outcome buffer into the receiver's income buffer; a step hands a process its
whole income buffer (and any pending transaction invocations) and lets it
emit at most one message per neighbour.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

from .model import (
    Message,
    ObjectId,
    Part,
    ProcessId,
    SimError,
    SystemSpec,
    Transaction,
    Value,
    check_meta,
)

Link = tuple[ProcessId, ProcessId]


class IllegalEvent(SimError):
    def __init__(self, index: int, event: Any, reason: str):
        super().__init__(f"event #{index} {event}: {reason}")
        self.index = index
        self.event = event
        self.reason = reason


class IllegalDelivery(SimError):
    pass


class FanoutViolation(SimError):
    pass


class ProtocolBootstrapFailure(SimError):
    pass


# --------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class Deliver:
    msg_id: int
    src: ProcessId | None = None
    dst: ProcessId | None = None


@dataclass(frozen=True)
class DeliverNext:
    """Schedule template: deliver whatever heads the ``src -> dst`` link."""

    src: ProcessId
    dst: ProcessId


@dataclass(frozen=True)
class Step:
    process: ProcessId
    spontaneous: bool = False
    consumed: tuple[int, ...] = ()
    emitted: tuple[int, ...] = ()


@dataclass(frozen=True)
class Invoke:
    client: ProcessId
    txn: Transaction


@dataclass(frozen=True)
class Respond:
    client: ProcessId
    txn_id: int
    results: tuple[tuple[ObjectId, Value], ...]


Event = Deliver | Step | Invoke | Respond


# --------------------------------------------------------------------------
# machine interface


@dataclass(frozen=True)
class StepContext:
    pid: ProcessId
    spec: SystemSpec


@dataclass
class StepResult:
    state: Any
    sends: list[tuple[ProcessId, tuple[Part, ...]]] = field(default_factory=list)
    responses: list[tuple[int, tuple[tuple[ObjectId, Value], ...]]] = field(default_factory=list)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class _Log:
    """Cons list of invocation/response events since the initial configuration."""

    parent: "_Log | None"
    event: Event

    def __iter__(self) -> Iterator[Event]:
        out = []
        node: _Log | None = self
        while node is not None:
            out.append(node.event)
            node = node.parent
        return reversed(out)


class Configuration:
    """An immutable snapshot of the whole system.

    Process states are never mutated after being stored: a step works on a
    deep copy, so configurations can be shared and branched freely.
    """

    __slots__ = ("spec", "protocol", "states", "outcome", "income", "invocations",
                 "active", "txn_ids", "next_msg_id", "event_count", "oplog", "bootstrap")

    def __init__(self, spec: SystemSpec, protocol: Any, states: Mapping[ProcessId, Any],
                 outcome: Mapping[Link, tuple[Message, ...]] | None = None,
                 income: Mapping[ProcessId, tuple[Message, ...]] | None = None,
                 invocations: Mapping[ProcessId, tuple[Transaction, ...]] | None = None,
                 active: Mapping[ProcessId, Transaction] | None = None,
                 txn_ids: frozenset[int] = frozenset(), next_msg_id: int = 1,
                 event_count: int = 0, oplog: _Log | None = None, bootstrap: "Trace | None" = None):
        self.spec = spec
        self.protocol = protocol
        self.states = dict(states)
        self.outcome = dict(outcome or {})
        self.income = dict(income or {})
        self.invocations = dict(invocations or {})
        self.active = dict(active or {})
        self.txn_ids = txn_ids
        self.next_msg_id = next_msg_id
        self.event_count = event_count
        self.oplog = oplog
        self.bootstrap = bootstrap

    def _replace(self, **kw: Any) -> "Configuration":
        fields = {name: getattr(self, name) for name in self.__slots__}
        fields.update(kw)
        return Configuration(**fields)

    def state_of(self, p: ProcessId) -> Any:
        if p in self.states:
            return self.states[p]
        return self.protocol.machine_for(p).initial_state(p, self.spec)

    def known_clients(self) -> set[ProcessId]:
        seen = {p for p in self.states if p.is_client}
        for src, dst in self.outcome:
            seen.update(q for q in (src, dst) if q.is_client)
        seen.update(p for p in self.income if p.is_client)
        return seen

    def fresh_client(self, exclude: Iterable[ProcessId] = ()) -> ProcessId:
        """A client index that has never appeared anywhere in this configuration."""
        taken = {c.index for c in self.known_clients()} | {c.index for c in exclude}
        taken.update(range(self.spec.client_count))
        i = max(taken) + 1
        return ProcessId("client", i)

    def in_transit(self) -> list[Message]:
        return sorted((m for q in self.outcome.values() for m in q), key=lambda m: m.msg_id)

    def delivered_unread(self) -> list[Message]:
        return sorted((m for q in self.income.values() for m in q), key=lambda m: m.msg_id)

    def buffers_empty(self) -> bool:
        return not any(self.outcome.values()) and not any(self.income.values())

    @property
    def quiescent(self) -> bool:
        return not self.active and not any(self.invocations.values())

    def income_of(self, p: ProcessId) -> list[Message]:
        return list(self.income.get(p, ()))

    def links_into(self, p: ProcessId) -> list[Link]:
        return sorted(link for link, q in self.outcome.items() if q and link[1] == p)

    def head(self, src: ProcessId, dst: ProcessId) -> Message | None:
        q = self.outcome.get((src, dst))
        return q[0] if q else None

    def find_pending(self, msg_id: int) -> Message | None:
        for q in self.outcome.values():
            for m in q:
                if m.msg_id == msg_id:
                    return m
        return None

    def history_events(self) -> list[Event]:
        return list(self.oplog) if self.oplog is not None else []

    def fingerprint(self, processes: Iterable[ProcessId] | None = None) -> tuple:
        """Comparable summary that ignores message ids.

        With ``processes`` given, only those processes' states are included;
        buffers are always compared by message content.
        """
        procs = sorted(self.states) if processes is None else sorted(processes)
        states = tuple((p, _freeze(self.state_of(p))) for p in procs)

        def bufs(b: Mapping[Any, tuple[Message, ...]]) -> tuple:
            return tuple(sorted((k, tuple(m.content() for m in q)) for k, q in b.items() if q))

        return (states, bufs(self.outcome), bufs(self.income),
                tuple(sorted((c, t) for c, t in self.invocations.items() if t)))

    def __repr__(self) -> str:
        return (f"<Configuration events={self.event_count} in_transit={len(self.in_transit())} "
                f"active={sorted(self.active)}>")


def _freeze(x: Any) -> Any:
    if hasattr(x, "__dataclass_fields__"):
        return (type(x).__name__,) + tuple((k, _freeze(getattr(x, k))) for k in sorted(x.__dataclass_fields__))
    if isinstance(x, dict):
        return tuple(sorted(((_freeze(k), _freeze(v)) for k, v in x.items()), key=repr))
    if isinstance(x, (set, frozenset)):
        return ("set",) + tuple(sorted((_freeze(v) for v in x), key=repr))
    if isinstance(x, (list, tuple)):
        return tuple(_freeze(v) for v in x)
    return x


def state_fingerprint(state: Any) -> str:
    """Stable text form of a protocol state, for logs and equality reports."""
    return repr(_freeze(state))


def initial_configuration(spec: SystemSpec, protocol: Any) -> Configuration:
    protocol.check_spec(spec)
    states = {p: protocol.machine_for(p).initial_state(p, spec) for p in spec.servers}
    for i in range(spec.client_count):
        c = ProcessId("client", i)
        states[c] = protocol.machine_for(c).initial_state(c, spec)
    return Configuration(spec, protocol, states)


# --------------------------------------------------------------------------
# primitive transitions


def deliver(c: Configuration, msg_id: int) -> Configuration:
    """Move message ``msg_id`` from its outcome buffer to the matching income buffer."""
    for link, q in c.outcome.items():
        for pos, m in enumerate(q):
            if m.msg_id != msg_id:
                continue
            if pos != 0:
                raise IllegalDelivery(f"message {msg_id} is not at the head of link {link[0]}->{link[1]}")
            outcome = dict(c.outcome)
            outcome[link] = q[1:]
            income = dict(c.income)
            income[m.dst] = income.get(m.dst, ()) + (m,)
            return c._replace(outcome=outcome, income=income, event_count=c.event_count + 1)
    raise IllegalDelivery(f"message {msg_id} is not pending")


def invoke(c: Configuration, txn: Transaction) -> Configuration:
    cl = txn.client
    if not cl.is_client:
        raise SimError(f"{cl} is not a client")
    if cl in c.active or c.invocations.get(cl):
        raise SimError(f"{cl} already has an active transaction")
    if txn.txn_id in c.txn_ids:
        raise SimError(f"transaction id {txn.txn_id} reused")
    objs = set(c.spec.objects)
    if not set(txn.reads) <= objs or not set(txn.write_set) <= objs:
        raise SimError(f"T{txn.txn_id} names unknown objects")
    if any(v in objs for _, v in txn.writes):
        raise SimError(f"T{txn.txn_id} writes a value equal to an object id")
    c.protocol.validate_transaction(txn, c.spec)
    invs = dict(c.invocations)
    invs[cl] = (txn,)
    active = dict(c.active)
    active[cl] = txn
    return c._replace(invocations=invs, active=active, txn_ids=c.txn_ids | {txn.txn_id},
                      event_count=c.event_count + 1, oplog=_Log(c.oplog, Invoke(cl, txn)))


def step(c: Configuration, p: ProcessId) -> tuple[Configuration, list[Message]]:
    """One computation step of ``p``; returns the new configuration and emitted messages."""
    c2, emitted, _, _ = _step(c, p)
    return c2, emitted


def _step(c: Configuration, p: ProcessId):
    inbox = c.income_of(p)
    invs = c.invocations.get(p, ())
    machine = c.protocol.machine_for(p)
    state = copy.deepcopy(c.state_of(p))
    res: StepResult = machine.step(state, StepContext(p, c.spec), invs, inbox)

    dsts = [d for d, _ in res.sends]
    if len(set(dsts)) != len(dsts):
        dup = sorted({d for d in dsts if dsts.count(d) > 1})
        raise FanoutViolation(f"{p} emitted more than one message to {dup} in one step")
    next_id = c.next_msg_id
    outcome = dict(c.outcome)
    emitted = []
    for dst, parts in sorted(res.sends, key=lambda s: s[0]):
        if dst == p:
            raise SimError(f"{p} sent a message to itself")
        if p.is_client and dst.is_client:
            raise SimError(f"clients may not talk to each other ({p}->{dst})")
        if dst.is_server and dst.index >= c.spec.server_count:
            raise SimError(f"{p} sent to unknown server {dst}")
        if not parts:
            continue
        m = Message(next_id, p, dst, tuple(parts))
        check_meta(m, c.spec.objects)
        next_id += 1
        outcome[(p, dst)] = outcome.get((p, dst), ()) + (m,)
        emitted.append(m)

    income = {dst: q for dst, q in c.income.items() if dst != p}
    invocations = dict(c.invocations)
    invocations.pop(p, None)
    states = dict(c.states)
    states[p] = res.state

    active = c.active
    oplog = c.oplog
    responds = []
    for txn_id, results in res.responses:
        cur = active.get(p)
        if cur is None or cur.txn_id != txn_id:
            raise SimError(f"{p} responded to T{txn_id}, which is not its active transaction")
        if set(o for o, _ in results) != set(cur.reads):
            raise SimError(f"{p} returned results for {sorted(o for o, _ in results)}, expected {sorted(cur.reads)}")
        ordered = tuple(sorted(results, key=lambda r: cur.reads.index(r[0])))
        ev = Respond(p, txn_id, ordered)
        responds.append(ev)
        oplog = _Log(oplog, ev)
        active = dict(active)
        del active[p]

    step_ev = Step(p, spontaneous=not inbox and not invs,
                   consumed=tuple(m.msg_id for m in inbox),
                   emitted=tuple(m.msg_id for m in emitted))
    c2 = c._replace(states=states, outcome=outcome, income=income, invocations=invocations,
                    active=active, next_msg_id=next_id, event_count=c.event_count + 1, oplog=oplog)
    return c2, emitted, step_ev, responds


# --------------------------------------------------------------------------
# traces


@dataclass
class Trace:
    start: Configuration
    events: list[Event] = field(default_factory=list)
    messages: dict[int, Message] = field(default_factory=dict)
    final: Configuration | None = None
    seed: int | None = None
    label: str = ""

    def __post_init__(self):
        if self.final is None:
            self.final = self.start

    def __len__(self) -> int:
        return len(self.events)

    def then(self, other: "Trace") -> "Trace":
        """Concatenation; ``other`` must start where this trace ends."""
        msgs = dict(self.messages)
        msgs.update(other.messages)
        return Trace(self.start, self.events + other.events, msgs, other.final, self.seed, self.label)

    def scheduled(self) -> list[Event]:
        """The adversary-controlled events (everything but responses)."""
        return [e for e in self.events if not isinstance(e, Respond)]

    def steps_of(self, p: ProcessId) -> list[tuple[int, Step]]:
        return [(i, e) for i, e in enumerate(self.events) if isinstance(e, Step) and e.process == p]

    def sent_by(self, p: ProcessId) -> list[Message]:
        return [self.messages[i] for _, e in self.steps_of(p) for i in e.emitted]

    def responses(self) -> list[Respond]:
        return [e for e in self.events if isinstance(e, Respond)]

    def result_of(self, txn_id: int) -> dict[ObjectId, Value] | None:
        for e in self.events:
            if isinstance(e, Respond) and e.txn_id == txn_id:
                return dict(e.results)
        return None

    def lines(self) -> list[str]:
        out = ["seq\tkind\tprocess\tmsg_id\tsrc\tdst\tpayload\tmeta\ttxn"]
        for seq, e in enumerate(self.events):
            out.append("\t".join(_record(seq, e, self.messages)))
        return out

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


def _render_values(vals: Iterable[tuple[ObjectId, Value]]) -> str:
    return ",".join(f"{o}={v}" for o, v in vals) or "-"


def _render_parts(parts: Sequence[Part]) -> str:
    chunks = []
    for p in parts:
        meta = ";".join(f"{k}:{v!r}" for k, v in p.meta)
        chunks.append(f"{p.kind}({meta})" if meta else p.kind)
    return "|".join(chunks) or "-"


def _record(seq: int, e: Event, messages: Mapping[int, Message]) -> list[str]:
    if isinstance(e, Deliver):
        m = messages.get(e.msg_id)
        if m is None:
            return [str(seq), "deliver", "-", str(e.msg_id), str(e.src), str(e.dst), "-", "-", "-"]
        return [str(seq), "deliver", str(m.dst), str(m.msg_id), str(m.src), str(m.dst),
                _render_values(m.payload), _render_parts(m.parts), _txn_of(m)]
    if isinstance(e, Step):
        meta = f"consumed={','.join(map(str, e.consumed)) or '-'};emitted={','.join(map(str, e.emitted)) or '-'}"
        kind = "step*" if e.spontaneous else "step"
        return [str(seq), kind, str(e.process), "-", "-", "-", "-", meta, "-"]
    if isinstance(e, Invoke):
        t = e.txn
        payload = ",".join([f"r:{o}" for o in t.reads] + [f"w:{o}={v}" for o, v in t.writes])
        return [str(seq), "invoke", str(e.client), "-", "-", "-", payload, "-", str(t.txn_id)]
    if isinstance(e, Respond):
        return [str(seq), "respond", str(e.client), "-", "-", "-", _render_values(e.results), "-", str(e.txn_id)]
    raise TypeError(e)


def _txn_of(m: Message) -> str:
    ids = sorted({p.get("txn") for p in m.parts if p.get("txn") is not None})
    return ",".join(map(str, ids)) or "-"


# --------------------------------------------------------------------------
# running schedules


def apply_event(c: Configuration, ev: Any) -> tuple[Configuration, list[Event], list[Message]]:
    """Apply one scheduled event; returns (config, recorded events, new messages)."""
    if isinstance(ev, DeliverNext):
        m = c.head(ev.src, ev.dst)
        if m is None:
            raise IllegalDelivery(f"nothing in transit on {ev.src}->{ev.dst}")
        ev = Deliver(m.msg_id)
    if isinstance(ev, Deliver):
        m = c.find_pending(ev.msg_id)
        c2 = deliver(c, ev.msg_id)
        return c2, [Deliver(m.msg_id, m.src, m.dst)], []
    if isinstance(ev, Step):
        c2, emitted, step_ev, responds = _step(c, ev.process)
        return c2, [step_ev, *responds], emitted
    if isinstance(ev, Invoke):
        if ev.txn.client != ev.client:
            raise SimError("invoke event names a different client than the transaction")
        return invoke(c, ev.txn), [ev], []
    if isinstance(ev, Respond):
        raise SimError("responses are emitted by the simulator, not scheduled")
    raise TypeError(f"unknown event {ev!r}")


class _Recorder:
    def __init__(self, c: Configuration, seed: int | None = None, label: str = ""):
        self.trace = Trace(c, seed=seed, label=label)
        self.config = c

    def apply(self, ev: Any) -> list[Event]:
        before = self.config
        c2, recorded, emitted = apply_event(before, ev)
        self.config = c2
        self.trace.events.extend(recorded)
        for m in emitted:
            self.trace.messages[m.msg_id] = m
        if isinstance(recorded[0], Deliver) and recorded[0].msg_id not in self.trace.messages:
            # sent before this trace started
            self.trace.messages[recorded[0].msg_id] = before.find_pending(recorded[0].msg_id)
        self.trace.final = c2
        return recorded


def run(c: Configuration, schedule: Iterable[Any], label: str = "") -> Trace:
    """Apply ``schedule`` from ``c``; raises :class:`IllegalEvent` at the first bad event."""
    rec = _Recorder(c, label=label)
    for i, ev in enumerate(schedule):
        try:
            rec.apply(ev)
        except IllegalEvent:
            raise
        except SimError as exc:
            if isinstance(exc, FanoutViolation):
                raise
            raise IllegalEvent(i, ev, str(exc)) from exc
    return rec.trace


def fair_run(c: Configuration, seed: int, budget: int, *,
             participants: Iterable[ProcessId] | None = None,
             workload: Sequence[Transaction] = (),
             until: Callable[[Configuration], bool] | None = None,
             window: int | None = None,
             spontaneous: bool = True,
             withhold: Callable[[Message], bool] | None = None,
             label: str = "") -> Trace:
    """Seeded randomized schedule with bounded unfairness.

    Every pending message whose destination participates is delivered within
    ``window`` events of being sent, and every participating server steps at
    least once per ``window`` events. Messages matching ``withhold`` are never
    delivered, which makes the run deliberately unfair. ``workload`` transactions are invoked in
    order per client as soon as that client is idle. Stops after ``budget``
    scheduled events or as soon as ``until(config)`` holds.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    rng = random.Random(seed)
    queues: dict[ProcessId, list[Transaction]] = {}
    for t in workload:
        queues.setdefault(t.client, []).append(t)
    if participants is None:
        procs = set(c.spec.servers) | set(c.known_clients()) | set(queues) | set(c.active)
    else:
        procs = set(participants) | set(queues)
    procs_sorted = sorted(procs)
    servers = [p for p in procs_sorted if p.is_server]
    window = window or max(8, 4 * len(procs_sorted))

    rec = _Recorder(c, seed=seed, label=label)
    sent_at: dict[int, int] = {m.msg_id: 0 for m in c.in_transit()}
    last_step: dict[ProcessId, int] = {p: 0 for p in servers}
    n = 0
    while n < budget:
        cfg = rec.config
        if until is not None and until(cfg):
            break
        choices: list[Any] = []
        forced: Any = None
        for cl in sorted(queues):
            if queues[cl] and cl not in cfg.active and not cfg.invocations.get(cl):
                choices.append(Invoke(cl, queues[cl][0]))
        heads = []
        for link, q in sorted(cfg.outcome.items()):
            if q and link[1] in procs and not (withhold is not None and withhold(q[0])):
                heads.append(q[0])
        for m in heads:
            if n - sent_at.get(m.msg_id, n) >= window and forced is None:
                forced = Deliver(m.msg_id)
            choices.append(Deliver(m.msg_id))
        for p in procs_sorted:
            busy = bool(cfg.income_of(p)) or bool(cfg.invocations.get(p))
            if busy or (p.is_server and spontaneous):
                choices.append(Step(p))
        if forced is None and spontaneous:
            for p in servers:
                if n - last_step[p] >= window:
                    forced = Step(p)
                    break
        if not choices:
            break
        ev = forced if forced is not None else choices[rng.randrange(len(choices))]
        recorded = rec.apply(ev)
        n += 1
        for r in recorded:
            if isinstance(r, Invoke):
                queues[r.client].pop(0)
            elif isinstance(r, Step):
                last_step[r.process] = n
                for mid in r.emitted:
                    sent_at[mid] = n
    return rec.trace


def drain(c: Configuration, *, participants: Iterable[ProcessId] | None = None,
          max_events: int = 10_000, label: str = "") -> Trace:
    """Deterministically deliver everything in transit and step the receivers until all buffers are empty."""
    allowed = None if participants is None else set(participants)
    rec = _Recorder(c, label=label)
    for _ in range(max_events):
        cfg = rec.config
        pending = [m for m in cfg.in_transit() if allowed is None or m.dst in allowed]
        if pending:
            heads = {link: q[0] for link, q in cfg.outcome.items() if q}
            m = next(m for m in pending if heads.get((m.src, m.dst)) is m)
            rec.apply(Deliver(m.msg_id))
            continue
        unread = sorted({m.dst for m in cfg.delivered_unread()} | {p for p, t in cfg.invocations.items() if t})
        unread = [p for p in unread if allowed is None or p in allowed]
        if not unread:
            break
        rec.apply(Step(unread[0]))
    return rec.trace


def run_until_complete(c: Configuration, txn_ids: Iterable[int], seed: int = 0, budget: int = 5000,
                       participants: Iterable[ProcessId] | None = None,
                       workload: Sequence[Transaction] = ()) -> Trace:
    wanted = set(txn_ids)

    def done(cfg: Configuration) -> bool:
        active_ids = {t.txn_id for t in cfg.active.values()}
        queued = {t.txn_id for t in workload} - cfg.txn_ids
        return not (wanted & active_ids) and not (wanted & queued)

    return fair_run(c, seed, budget, participants=participants, workload=workload, until=done)


# --------------------------------------------------------------------------
# bootstrap


def bootstrap(spec: SystemSpec, protocol: Any, seed: int = 0, budget: int = 20_000) -> Trace:
    """From the initial configuration to C_0.

    Each initializer ``c_i`` writes ``x_i^in``; once every initial value is
    visible and the buffers are empty, the writer reads every object. The
    returned trace ends in C_0: that read has completed and nothing is in
    transit.
    """
    from .properties import probe_visibility  # deferred: properties builds on the kernel

    q_in = initial_configuration(spec, protocol)
    inits = [Transaction(i, c, writes=((o, spec.initial_values[o]),))
             for i, (o, c) in enumerate(zip(spec.objects, spec.initializers))]
    try:
        trace = run_until_complete(q_in, [t.txn_id for t in inits], seed=seed, budget=budget,
                                   participants=set(spec.servers) | set(spec.initializers), workload=inits)
    except SimError as exc:
        raise ProtocolBootstrapFailure(f"initial writes rejected: {exc}") from exc
    if trace.final.active:
        raise ProtocolBootstrapFailure("initial writes did not complete")

    servers_only = list(spec.servers)
    for _ in range(200):
        trace = trace.then(drain(trace.final, participants=servers_only + list(spec.initializers)))
        cfg = trace.final
        if all(probe_visibility(cfg, o, spec.initial_values[o], spec.reserved, cap=64).outcome == "Visible"
               for o in spec.objects):
            break
        # let timer-driven protocols make progress
        trace = trace.then(run(cfg, [Step(p) for p in servers_only]))
    else:
        raise ProtocolBootstrapFailure("initial values never became visible")

    t_in = Transaction(len(spec.objects), spec.writer, reads=tuple(spec.objects))
    part = run_until_complete(trace.final, [t_in.txn_id], seed=seed, budget=budget,
                              participants=servers_only + [spec.writer], workload=[t_in])
    trace = trace.then(part)
    trace = trace.then(drain(trace.final, participants=servers_only + [spec.writer]))
    got = trace.result_of(t_in.txn_id)
    if got != dict(spec.initial_values):
        raise ProtocolBootstrapFailure(f"writer read {got}, expected the initial values")
    if not trace.final.buffers_empty():
        raise ProtocolBootstrapFailure("buffers did not drain after the initial read")
    trace.label = "bootstrap"
    return trace


def init(spec: SystemSpec, protocol: Any, seed: int = 0) -> Configuration:
    """C_0 for ``spec`` under ``protocol``; the bootstrap trace rides along."""
    trace = bootstrap(spec, protocol, seed=seed)
    return trace.final._replace(bootstrap=trace)


def full_trace(t: Trace) -> Trace:
    """``t`` prefixed with the bootstrap of its start configuration, when that is C_0."""
    boot = t.start.bootstrap
    if boot is not None and boot.final is not None and boot.final.event_count == t.start.event_count:
        return boot.then(t)
    return t
