"""Fast read-only transaction checks, visibility probes and minimal progress."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .kernel import (
    Configuration,
    Deliver,
    Invoke,
    Respond,
    Step,
    Trace,
    _Recorder,
    drain,
    fair_run,
    init,
)
from .model import Message, ObjectId, ProcessId, SimError, SystemSpec, Transaction, Value


class NotAReadOnlyTxn(SimError):
    pass


# --------------------------------------------------------------------------
# one-round / nonblocking / one-value


@dataclass
class FastRotReport:
    txn_id: int
    one_round: bool
    nonblocking: bool
    one_value: bool
    rounds: int
    offending: list[int] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def fast(self) -> bool:
        return self.one_round and self.nonblocking and self.one_value

    def flags(self) -> dict[str, bool]:
        return {"R": self.one_round, "N": self.nonblocking, "V": self.one_value}

    def line(self) -> str:
        yn = {True: "yes", False: "no"}
        origin = ",".join(map(str, self.offending)) or "-"
        return (f"T{self.txn_id}\tR={yn[self.one_round]}\tN={yn[self.nonblocking]}\t"
                f"V={yn[self.one_value]}\trounds={self.rounds}\torigin={origin}")


def _tagged(m: Message, txn_id: int) -> list:
    return [p for p in m.parts if p.get("txn") == txn_id]


def check_fast_rot(t: Trace, txn_id: int, spec: SystemSpec | None = None) -> FastRotReport:
    """Judge one read-only transaction of ``t`` from its own events alone."""
    spec = spec or t.start.spec
    events = t.events
    inv = next(((i, e) for i, e in enumerate(events) if isinstance(e, Invoke) and e.txn.txn_id == txn_id), None)
    if inv is None:
        raise NotAReadOnlyTxn(f"T{txn_id} is not invoked in this trace")
    i0, ev = inv
    txn = ev.txn
    if not txn.read_only:
        raise NotAReadOnlyTxn(f"T{txn_id} writes")
    c = txn.client
    done = next((i for i, e in enumerate(events) if isinstance(e, Respond) and e.txn_id == txn_id), None)
    end = done if done is not None else len(events)
    notes: list[str] = []
    offending: list[int] = []

    steps = [(i, e) for i, e in enumerate(events) if i0 < i <= end and isinstance(e, Step) and e.process == c]
    request_steps = []
    requests: list[Message] = []
    for i, e in steps:
        reqs = [t.messages[m] for m in e.emitted
                if t.messages[m].dst.is_server and _tagged(t.messages[m], txn_id)]
        if reqs:
            request_steps.append(i)
            requests.extend(reqs)
    rounds = len(request_steps)

    one_round = True
    if done is None:
        one_round = False
        notes.append("never completed")
    if rounds != 1:
        one_round = False
        offending.extend(request_steps[1:])
        notes.append(f"{rounds} request rounds")
    elif steps and request_steps[0] != steps[0][0]:
        one_round = False
        offending.append(request_steps[0])
        notes.append("requests not sent in the first step after invocation")
    contacted = {m.dst for m in requests}
    for o in txn.reads:
        if not set(spec.holders(o)) & contacted:
            one_round = False
            notes.append(f"no server storing {o} contacted")

    # Nonblocking: every response to a request leaves in the step that consumed that request.
    nonblocking = True
    consumed_at: dict[int, int] = {}
    for i, e in enumerate(events):
        if isinstance(e, Step):
            for mid in e.consumed:
                consumed_at[mid] = i
    replies = [(i, t.messages[mid]) for i, e in enumerate(events) if isinstance(e, Step) and e.process.is_server
               for mid in e.emitted if t.messages[mid].dst == c and _tagged(t.messages[mid], txn_id)]
    answering = {consumed_at[m.msg_id] for m in requests if m.msg_id in consumed_at}
    for i, m in replies:
        if i not in answering:
            nonblocking = False
            offending.append(i)
            notes.append(f"{m.src} answered in a later step")

    # One value.
    one_value = True
    reads = set(txn.reads)
    carriers: dict[ObjectId, dict[ProcessId, int]] = {}
    for i, m in replies:
        objs = [o for p in _tagged(m, txn_id) for o, _ in p.values]
        stored = set(spec.stored_at(m.src))
        bad = [o for o in objs if o not in stored or o not in reads]
        if bad:
            one_value = False
            offending.append(i)
            notes.append(f"{m.src} sent values of {sorted(set(bad))}")
        for o in objs:
            carriers.setdefault(o, {}).setdefault(m.src, 0)
            carriers[o][m.src] += 1
    for o, by in sorted(carriers.items()):
        if o not in reads:
            continue
        if spec.disjoint:
            if max(by.values()) > 1:
                one_value = False
                notes.append(f"more than one value of {o} in one message")
        elif len(by) != 1 or sum(by.values()) != 1:
            one_value = False
            notes.append(f"{o} values came from {sorted(by)}")
    if not spec.disjoint and done is not None:
        for o in sorted(reads - set(carriers)):
            one_value = False
            notes.append(f"no server sent a value of {o}")
    return FastRotReport(txn_id, one_round, nonblocking, one_value, rounds, sorted(set(offending)), notes)


@dataclass
class TxnReport:
    txn_id: int
    flags: dict[str, bool]
    line: str


def property_reports(t: Trace, protocol, spec: SystemSpec | None = None) -> list[TxnReport]:
    """R/N/V for every read-only transaction and W for every multi-object write in ``t``."""
    spec = spec or t.start.spec
    out = []
    for e in t.events:
        if not isinstance(e, Invoke):
            continue
        txn = e.txn
        if txn.read_only:
            r = check_fast_rot(t, txn.txn_id, spec)
            out.append(TxnReport(txn.txn_id, r.flags(), r.line()))
        elif len(txn.writes) > 1:
            ok = t.result_of(txn.txn_id) is not None
            out.append(TxnReport(txn.txn_id, {"W": ok}, f"T{txn.txn_id}\tW={'yes' if ok else 'no'}"))
    return out


# --------------------------------------------------------------------------
# visibility


@dataclass
class VisibilityVerdict:
    outcome: str  # "Visible" | "NotVisible" | "Unknown"
    probes_run: int
    counterexample: Trace | None = None
    returned: tuple = ()
    exhaustive: bool = True
    reader: ProcessId | None = None

    @property
    def visible(self) -> bool:
        return self.outcome == "Visible"


class _Chooser:
    """Replays a prefix of choices, then takes option 0, recording arities."""

    def __init__(self, prefix: Sequence[int], rng: random.Random | None = None):
        self.prefix = list(prefix)
        self.taken: list[int] = []
        self.arities: list[int] = []
        self.rng = rng

    def __call__(self, n: int) -> int:
        if n <= 1:
            return 0
        k = len(self.taken)
        if k < len(self.prefix):
            pick = self.prefix[k]
        elif self.rng is not None:
            pick = self.rng.randrange(n)
        else:
            pick = 0
        self.taken.append(pick)
        self.arities.append(n)
        return pick


def _probe_once(c: Configuration, reader: ProcessId, txn: Transaction, choose: _Chooser,
                max_rounds: int = 6) -> Trace:
    """One probe execution: the reader's requests interleaved with deliveries already in flight."""
    rec = _Recorder(c, label="probe")
    rec.apply(Invoke(reader, txn))
    rec.apply(Step(reader))
    for _ in range(max_rounds):
        cfg = rec.config
        if reader not in cfg.active:
            break
        targets = sorted(dst for (src, dst), q in cfg.outcome.items() if src == reader and q)
        if not targets:
            break
        remaining = list(targets)
        while remaining:
            s = remaining.pop(choose(len(remaining)))
            for link in rec.config.links_into(s):
                if link[0] == reader:
                    continue
                q = rec.config.outcome[link]
                for m in q[:choose(len(q) + 1)]:
                    rec.apply(Deliver(m.msg_id))
            for m in rec.config.outcome.get((reader, s), ()):
                rec.apply(Deliver(m.msg_id))
            rec.apply(Step(s))
        for link in sorted(link for link, q in rec.config.outcome.items() if link[1] == reader and q):
            for m in rec.config.outcome[link]:
                rec.apply(Deliver(m.msg_id))
        rec.apply(Step(reader))
    if reader in rec.config.active:
        # not a fast protocol for this read; let everything that may help finish it
        servers = list(c.spec.servers)
        for _ in range(50):
            tail = drain(rec.config, participants=servers + [reader])
            rec.trace = rec.trace.then(tail)
            rec.config = rec.trace.final
            if reader not in rec.config.active:
                break
            for s in servers:
                rec.apply(Step(s))
    return rec.trace


def probe_reads(c: Configuration, reads: Sequence[ObjectId], excluded: Iterable[ProcessId] = (),
                cap: int = 256, seed: int = 0) -> tuple[list[tuple[Trace, dict]], bool]:
    """Probe executions of a fresh reader; returns (executions, exhaustive)."""
    excluded = set(excluded) | set(c.spec.reserved)
    reader = c.fresh_client(excluded)
    txn = Transaction(max(c.txn_ids, default=0) + 1, reader, reads=tuple(reads))
    runs = []
    prefix: list[int] = []
    while True:
        ch = _Chooser(prefix)
        tr = _probe_once(c, reader, txn, ch)
        runs.append((tr, tr.result_of(txn.txn_id) or {}))
        # next choice sequence in depth-first order
        taken, ar = ch.taken, ch.arities
        k = len(taken) - 1
        while k >= 0 and taken[k] + 1 >= ar[k]:
            k -= 1
        if k < 0:
            return runs, True
        if len(runs) >= cap:
            break
        prefix = taken[:k] + [taken[k] + 1]
    rng = random.Random(seed)
    sampled = []
    for _ in range(cap):
        tr = _probe_once(c, reader, txn, _Chooser([], rng))
        sampled.append((tr, tr.result_of(txn.txn_id) or {}))
    return runs + sampled, False


def probe_visibility(c: Configuration, x: ObjectId, v: Value, excluded: Iterable[ProcessId] = (),
                     cap: int = 256, seed: int = 0, reads: Sequence[ObjectId] | None = None) -> VisibilityVerdict:
    """Is ``v`` returned for ``x`` by every probe read from ``c``?"""
    reads = tuple(reads) if reads is not None else tuple(c.spec.objects)
    if x not in reads:
        reads = reads + (x,)
    runs, exhaustive = probe_reads(c, reads, excluded, cap, seed)
    returned = tuple(sorted({r.get(x) for _, r in runs}, key=str))
    reader = runs[0][0].events[0].client
    for tr, r in runs:
        if r.get(x) != v:
            return VisibilityVerdict("NotVisible", len(runs), tr, returned, exhaustive, reader)
    return VisibilityVerdict("Visible" if exhaustive else "Unknown", len(runs), None, returned, exhaustive, reader)


def all_visible(c: Configuration, values: Iterable[tuple[ObjectId, Value]], excluded=(), cap: int = 256) -> bool:
    return all(probe_visibility(c, o, v, excluded, cap).visible for o, v in values)


def none_visible(c: Configuration, values: Iterable[tuple[ObjectId, Value]], excluded=(), cap: int = 256) -> bool:
    return all(probe_visibility(c, o, v, excluded, cap).outcome == "NotVisible" for o, v in values)


# --------------------------------------------------------------------------
# minimal progress


@dataclass
class ProgressVerdict:
    outcome: str  # "Achieved" | "Starved"
    at: int | None
    census: list[tuple[int, int, int]]  # (events so far, messages sent so far, in transit)
    trace: Trace

    @property
    def achieved(self) -> bool:
        return self.outcome == "Achieved"


def default_write(spec: SystemSpec, protocol, txn_id: int) -> Transaction:
    """The canonical write-only transaction of the writer: new values for the first objects."""
    n = 1 if protocol.write_arity_limit == 1 else min(2, len(spec.objects)) if spec.disjoint else len(spec.objects)
    objs = spec.objects[:n]
    return Transaction(txn_id, spec.writer, writes=tuple((o, f"x{spec.objects.index(o)}") for o in objs))


def check_minimal_progress(protocol, spec: SystemSpec, t_w: Transaction | None = None, seed: int = 0,
                           budget: int = 400, start: Configuration | None = None,
                           withhold: Callable[[Message], bool] | None = None,
                           cap: int = 64) -> ProgressVerdict:
    """Run ``t_w`` solo from a quiescent configuration until its values are visible, or give up."""
    c = start if start is not None else init(spec, protocol, seed=0)
    if not c.quiescent:
        raise SimError("minimal progress is judged from a quiescent configuration")
    if t_w is None:
        t_w = default_write(spec, protocol, max(c.txn_ids, default=0) + 1)
    census: list[tuple[int, int, int]] = []
    base_sent = c.next_msg_id
    hit: list[int] = []

    def visible(cfg: Configuration) -> bool:
        n = cfg.event_count - c.event_count
        census.append((n, cfg.next_msg_id - base_sent, len(cfg.in_transit())))
        if t_w.txn_id not in cfg.txn_ids or not all_visible(cfg, t_w.writes, cap=cap):
            return False
        hit.append(n)
        return True

    participants = list(spec.servers) + [t_w.client]
    trace = fair_run(c, seed, budget, participants=participants, workload=[t_w], until=visible,
                     withhold=withhold, label="solo-write")
    if hit or visible(trace.final):
        return ProgressVerdict("Achieved", hit[0], census, trace)
    return ProgressVerdict("Starved", None, census, trace)
