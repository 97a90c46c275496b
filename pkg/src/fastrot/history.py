"""Histories and the causal-consistency checker.

A history is the projection of a trace onto object-operation invocations and
responses. The checker searches sequential orders: first for one order in
which every transaction is legal (which settles the question at once), then
over every distinct reads-from relation an equivalent order can induce, and
for each acyclic causal relation, for a per-client order that respects it
and makes that client's transactions legal.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .kernel import Invoke, Respond, Trace, full_trace
from .model import ObjectId, ProcessId, SimError, Value
from .protocols.base import UNWRITTEN


class UnsourcedValue(SimError):
    pass


class ShapeMismatch(SimError):
    pass


@dataclass(frozen=True)
class OpEvent:
    kind: str  # "invoke" | "response"
    op: str  # "read" | "write"
    txn: int
    client: ProcessId
    obj: ObjectId
    value: Value | None = None


@dataclass(frozen=True)
class TransactionRecord:
    txn_id: int
    client: ProcessId
    ops: tuple[tuple[str, ObjectId, Value | None], ...]  # ("read"|"write", obj, value) in invocation order
    complete: bool

    @property
    def read_set(self) -> frozenset[ObjectId]:
        return frozenset(o for k, o, _ in self.ops if k == "read")

    @property
    def write_set(self) -> frozenset[ObjectId]:
        return frozenset(o for k, o, _ in self.ops if k == "write")

    @property
    def read_only(self) -> bool:
        return not self.write_set

    @property
    def write_only(self) -> bool:
        return not self.read_set

    @property
    def observed(self) -> dict[ObjectId, Value]:
        return {o: v for k, o, v in self.ops if k == "read" and v is not None}

    @property
    def writes(self) -> dict[ObjectId, Value]:
        return {o: v for k, o, v in self.ops if k == "write"}

    def external_reads(self) -> list[tuple[ObjectId, Value]]:
        """Reads not preceded by the transaction's own write of the same object."""
        own: set[ObjectId] = set()
        out = []
        for k, o, v in self.ops:
            if k == "write":
                own.add(o)
            elif o not in own:
                out.append((o, v))
        return out


@dataclass(frozen=True)
class History:
    events: tuple[OpEvent, ...] = ()
    initial: tuple[tuple[ObjectId, Value], ...] = ()

    def initial_value(self, obj: ObjectId) -> Value:
        return dict(self.initial).get(obj, UNWRITTEN)

    def clients(self) -> list[ProcessId]:
        return sorted({e.client for e in self.events})

    def sub(self, client: ProcessId) -> "History":
        return History(tuple(e for e in self.events if e.client == client), self.initial)

    def restrict(self, txn_ids: Iterable[int]) -> "History":
        keep = set(txn_ids)
        return History(tuple(e for e in self.events if e.txn in keep), self.initial)

    def transactions(self) -> list[TransactionRecord]:
        """Transactions in order of first invocation."""
        order: list[int] = []
        client: dict[int, ProcessId] = {}
        invs: dict[int, list[OpEvent]] = {}
        resps: dict[int, dict[tuple[str, ObjectId], OpEvent]] = {}
        for e in self.events:
            if e.txn not in client:
                order.append(e.txn)
                client[e.txn] = e.client
                invs[e.txn] = []
                resps[e.txn] = {}
            if e.kind == "invoke":
                invs[e.txn].append(e)
            else:
                resps[e.txn][(e.op, e.obj)] = e
        out = []
        for t in order:
            ops = []
            done = True
            for e in invs[t]:
                r = resps[t].get((e.op, e.obj))
                if r is None:
                    done = False
                if e.op == "read":
                    ops.append(("read", e.obj, None if r is None else r.value))
                else:
                    ops.append(("write", e.obj, e.value))
            out.append(TransactionRecord(t, client[t], tuple(ops), done and bool(invs[t])))
        return out

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class Relation:
    kind: str  # "reads_from" | "causal" | "program"
    edges: frozenset[tuple[int, int]]
    cyclic: bool = False

    def __contains__(self, edge) -> bool:
        return edge in self.edges


@dataclass
class Verdict:
    outcome: str  # "Consistent" | "Inconsistent" | "Exhausted"
    witness: dict[ProcessId, tuple[int, ...]] | None = None
    causal: Relation | None = None
    stats: dict = field(default_factory=dict)
    note: str = ""

    @property
    def consistent(self) -> bool:
        return self.outcome == "Consistent"


# --------------------------------------------------------------------------
# extraction and projections


def extract_history(t: Trace, include_bootstrap: bool = True) -> History:
    """Project a trace onto object operations (bootstrap transactions included by default)."""
    trace = full_trace(t) if include_bootstrap else t
    events: list[OpEvent] = []
    active = {}
    for e in trace.events:
        if isinstance(e, Invoke):
            active[e.txn.txn_id] = e.txn
            for o in e.txn.reads:
                events.append(OpEvent("invoke", "read", e.txn.txn_id, e.client, o))
            for o, v in e.txn.writes:
                events.append(OpEvent("invoke", "write", e.txn.txn_id, e.client, o, v))
        elif isinstance(e, Respond):
            txn = active.get(e.txn_id)
            for o, v in e.results:
                events.append(OpEvent("response", "read", e.txn_id, e.client, o, v))
            if txn is not None:
                for o, _ in txn.writes:
                    events.append(OpEvent("response", "write", e.txn_id, e.client, o))
    starts_at_qin = trace.start.event_count == 0
    initial = () if starts_at_qin else tuple(sorted(trace.start.spec.initial_values.items()))
    return History(tuple(events), initial)


def complete_of(h: History) -> History:
    done = {t.txn_id for t in h.transactions() if t.complete}
    return h.restrict(done)


def comm_of(h: History) -> History:
    """Append acks for write invocations that never got a response."""
    answered = {(e.txn, e.obj) for e in h.events if e.kind == "response" and e.op == "write"}
    extra = tuple(OpEvent("response", "write", e.txn, e.client, e.obj)
                  for e in h.events
                  if e.kind == "invoke" and e.op == "write" and (e.txn, e.obj) not in answered)
    return History(h.events + extra, h.initial)


def program_order(txns: Sequence[TransactionRecord]) -> Relation:
    last: dict[ProcessId, int] = {}
    edges = set()
    for t in txns:
        if t.client in last:
            edges.add((last[t.client], t.txn_id))
        last[t.client] = t.txn_id
    return Relation("program", frozenset(_closure(edges)))


# --------------------------------------------------------------------------
# legality and relations over sequential orders


def is_legal_in(seq: Sequence[TransactionRecord], txn_id: int,
                initial: Mapping[ObjectId, Value] | None = None) -> bool:
    """Whether every read of ``txn_id`` returns what the three-case rule demands in ``seq``."""
    initial = initial or {}
    current: dict[ObjectId, Value] = {}
    for t in seq:
        if t.txn_id == txn_id:
            return _legal_at(t, current, initial)
        current.update(t.writes)
    raise KeyError(f"T{txn_id} not in sequence")


def _legal_at(t: TransactionRecord, current: Mapping[ObjectId, Value], initial: Mapping[ObjectId, Value]) -> bool:
    own: dict[ObjectId, Value] = {}
    for kind, o, v in t.ops:
        if kind == "write":
            own[o] = v
        elif o in own:
            if v != own[o]:
                return False
        elif v != current.get(o, initial.get(o, UNWRITTEN)):
            return False
    return True


def writers_of(txns: Sequence[TransactionRecord]) -> dict[tuple[ObjectId, Value], list[int]]:
    out: dict[tuple[ObjectId, Value], list[int]] = {}
    for t in txns:
        for kind, o, v in t.ops:
            if kind == "write" and t.txn_id not in out.get((o, v), []):
                out.setdefault((o, v), []).append(t.txn_id)
    return out


def check_sources(txns: Sequence[TransactionRecord], initial: Mapping[ObjectId, Value]) -> None:
    w = writers_of(txns)
    for t in txns:
        for o, v in t.external_reads():
            if v is None:
                continue
            if not [x for x in w.get((o, v), []) if x != t.txn_id] and v != initial.get(o, UNWRITTEN):
                raise UnsourcedValue(f"T{t.txn_id} read {o}={v}, which nobody wrote")


def reads_from_of(seq: Sequence[TransactionRecord], initial: Mapping[ObjectId, Value] | None = None) -> Relation:
    """Reads-from induced by a sequential order: each read points at the last preceding writer of its value."""
    initial = initial or {}
    check_sources(seq, initial)
    edges = set()
    last: dict[tuple[ObjectId, Value], int] = {}
    for t in seq:
        for o, v in t.external_reads():
            src = last.get((o, v))
            if src is not None and src != t.txn_id:
                edges.add((src, t.txn_id))
        for o, v in t.writes.items():
            last[(o, v)] = t.txn_id
    return Relation("reads_from", frozenset(edges))


def _closure(edges: Iterable[tuple[int, int]]) -> set[tuple[int, int]]:
    succ: dict[int, set[int]] = {}
    for a, b in edges:
        succ.setdefault(a, set()).add(b)
    out = set()
    for a in list(succ):
        seen, todo = set(), list(succ[a])
        while todo:
            x = todo.pop()
            if x in seen:
                continue
            seen.add(x)
            todo.extend(succ.get(x, ()))
        out.update((a, b) for b in seen)
    return out


def causal_of(h: History | Sequence[TransactionRecord], rf: Relation) -> Relation:
    txns = h.transactions() if isinstance(h, History) else list(h)
    edges = _closure(set(program_order(txns).edges) | set(rf.edges))
    cyclic = any(a == b for a, b in edges)
    return Relation("causal", frozenset(edges), cyclic)


# --------------------------------------------------------------------------
# searches


def _topo_legal(txns: Sequence[TransactionRecord], preds: Mapping[int, frozenset[int]],
                must_be_legal: frozenset[int], initial: Mapping[ObjectId, Value],
                stats: dict) -> tuple[int, ...] | None:
    """A topological order of ``preds`` in which every txn in ``must_be_legal`` is legal."""
    by_id = {t.txn_id: t for t in txns}
    ids = [t.txn_id for t in txns]
    failed: set = set()

    def go(placed: frozenset, current: tuple, order: tuple):
        if len(order) == len(ids):
            return order
        key = (placed, current)
        if key in failed:
            return None
        cur = dict(current)
        for i in ids:
            if i in placed or not preds[i] <= placed:
                continue
            t = by_id[i]
            stats["nodes"] = stats.get("nodes", 0) + 1
            if i in must_be_legal and not _legal_at(t, cur, initial):
                continue
            nxt = dict(cur)
            nxt.update(t.writes)
            got = go(placed | {i}, tuple(sorted(nxt.items())), order + (i,))
            if got is not None:
                return got
        failed.add(key)
        return None

    return go(frozenset(), (), ())


def _preds_of(ids: Sequence[int], rel: Iterable[tuple[int, int]]) -> dict[int, frozenset[int]]:
    p: dict[int, set[int]] = {i: set() for i in ids}
    for a, b in rel:
        p[b].add(a)
    return {i: frozenset(s) for i, s in p.items()}


def reads_from_candidates(txns: Sequence[TransactionRecord], stats: dict | None = None) -> list[Relation]:
    """Every distinct reads-from relation induced by some order respecting program order.

    Only orders in which each read that has candidate writers is preceded by
    one of them are considered; the induced edge is the last such writer.
    """
    stats = stats if stats is not None else {}
    ids = [t.txn_id for t in txns]
    by_id = {t.txn_id: t for t in txns}
    preds = _preds_of(ids, program_order(txns).edges)
    w = writers_of(txns)
    found: set[frozenset] = set()
    seen: set = set()

    def go(placed: frozenset, last: tuple, rf: frozenset):
        key = (placed, last, rf)
        if key in seen:
            return
        seen.add(key)
        if len(placed) == len(ids):
            found.add(rf)
            return
        lastd = dict(last)
        for i in ids:
            if i in placed or not preds[i] <= placed:
                continue
            stats["rf_nodes"] = stats.get("rf_nodes", 0) + 1
            t = by_id[i]
            new = set()
            ok = True
            for o, v in t.external_reads():
                cands = [x for x in w.get((o, v), []) if x != i]
                if not cands:
                    continue
                src = lastd.get((o, v))
                if src is None or src == i:
                    ok = False
                    break
                new.add((src, i))
            if not ok:
                continue
            nl = dict(lastd)
            for o, v in t.writes.items():
                nl[(o, v)] = i
            go(placed | {i}, tuple(sorted(nl.items())), rf | new)

    go(frozenset(), (), frozenset())
    return [Relation("reads_from", r) for r in sorted(found, key=lambda r: sorted(r))]


def validate_witness(txns: Sequence[TransactionRecord], causal: Relation, client: ProcessId,
                     sigma: Sequence[int], initial: Mapping[ObjectId, Value]) -> str | None:
    """Re-check one per-client order from scratch; returns a complaint or None."""
    by_id = {t.txn_id: t for t in txns}
    if sorted(sigma) != sorted(by_id):
        return "order is not a permutation of the complete transactions"
    pos = {t: i for i, t in enumerate(sigma)}
    for a, b in causal.edges:
        if pos[a] >= pos[b]:
            return f"T{a} must precede T{b}"
    seq = [by_id[i] for i in sigma]
    for t in seq:
        if t.client == client and not is_legal_in(seq, t.txn_id, initial):
            return f"T{t.txn_id} is not legal"
    return None


def sourced_initial(initial: Iterable[tuple[ObjectId, Value]], txns: Sequence[TransactionRecord]) -> dict:
    """Initial values that no transaction writes; the rest resolve to their initializer."""
    written = writers_of(txns)
    return {o: v for o, v in initial if (o, v) not in written}


def check_causal_consistency(h: History, cap: int = 8) -> Verdict:
    hc = complete_of(comm_of(h))
    txns = hc.transactions()
    stats: dict = {"transactions": len(txns)}
    if len(txns) > cap:
        return Verdict("Exhausted", stats=stats, note=f"{len(txns)} transactions exceed cap {cap}")
    initial = sourced_initial(hc.initial, txns)
    check_sources(txns, initial)
    ids = [t.txn_id for t in txns]
    clients = sorted({t.client for t in txns})
    po = program_order(txns)

    # One order legal for everybody settles it.
    everyone = frozenset(ids)
    order = _topo_legal(txns, _preds_of(ids, po.edges), everyone, initial, stats)
    if order is not None:
        seq = [t for i in order for t in txns if t.txn_id == i]
        rf = reads_from_of(seq, initial)
        causal = causal_of(txns, rf)
        witness = {c: order for c in clients}
        _revalidate(txns, causal, witness, initial)
        stats["shortcut"] = True
        return Verdict("Consistent", witness, causal, stats)

    stats["shortcut"] = False
    candidates = reads_from_candidates(txns, stats)
    stats["rf_candidates"] = len(candidates)
    for rf in candidates:
        causal = causal_of(txns, rf)
        if causal.cyclic:
            stats["cyclic"] = stats.get("cyclic", 0) + 1
            continue
        preds = _preds_of(ids, causal.edges)
        witness = {}
        for c in clients:
            mine = frozenset(t.txn_id for t in txns if t.client == c)
            sigma = _topo_legal(txns, preds, mine, initial, stats)
            if sigma is None:
                break
            witness[c] = sigma
        else:
            _revalidate(txns, causal, witness, initial)
            return Verdict("Consistent", witness, causal, stats)
    return Verdict("Inconsistent", stats=stats,
                   note=f"no causal relation among {len(candidates)} reads-from candidates admits per-client orders")


def _revalidate(txns, causal, witness, initial) -> None:
    for c, sigma in witness.items():
        problem = validate_witness(txns, causal, c, sigma, initial)
        if problem is not None:
            raise AssertionError(f"checker produced a bad witness for {c}: {problem}")


# --------------------------------------------------------------------------
# the mixed-read shape


@dataclass(frozen=True)
class Violation:
    txn_id: int
    client: ProcessId
    new: tuple[ObjectId, ...]
    old: tuple[ObjectId, ...]

    def describe(self) -> str:
        return (f"T{self.txn_id} by {self.client} saw the new value of {', '.join(self.new)} "
                f"but the initial value of {', '.join(self.old)}")


def mixed_read_oracle(h: History) -> Violation | None:
    """Fast path for the canonical shape: flag a read that saw part of the multi-object write."""
    txns = complete_of(comm_of(h)).transactions()
    multi = [t for t in txns if len(t.write_set) >= 2]
    if len(multi) != 1:
        raise ShapeMismatch(f"expected one multi-object write, found {len(multi)}")
    tw = multi[0]
    new = tw.writes
    initial_of: dict[ObjectId, Value] = {}
    for t in txns:
        if t is tw or not t.write_set:
            continue
        if len(t.write_set) != 1 or t.read_set:
            raise ShapeMismatch(f"T{t.txn_id} is neither an initializer nor a read")
        (o, v), = t.writes.items()
        if o in initial_of:
            raise ShapeMismatch(f"{o} written by more than one initializer")
        initial_of[o] = v
    for o in new:
        initial_of.setdefault(o, h.initial_value(o))
    before = [t for t in txns if t.client == tw.client and t.read_only]
    idx = {t.txn_id: i for i, t in enumerate(txns)}
    if not any(idx[t.txn_id] < idx[tw.txn_id] and all(t.observed.get(o) == initial_of[o] for o in new)
               for t in before):
        raise ShapeMismatch("the writer never read the initial values before writing")
    for t in txns:
        if not t.read_only or t.client == tw.client:
            continue
        seen = {o: v for o, v in t.observed.items() if o in new}
        if len(seen) < 2:
            continue
        fresh = tuple(sorted(o for o, v in seen.items() if v == new[o]))
        stale = tuple(sorted(o for o, v in seen.items() if v == initial_of[o]))
        if len(fresh) + len(stale) != len(seen):
            raise ShapeMismatch(f"T{t.txn_id} read a value that is neither new nor initial")
        if fresh and stale:
            return Violation(t.txn_id, t.client, fresh, stale)
    return None


# --------------------------------------------------------------------------
# windows over long histories


def windows(h: History, size: int = 8) -> list[tuple[int, History]]:
    """One sub-history per read-only transaction, closed under writers of read values.

    Each window grows from its anchor through program-order predecessors and
    writers of read values, adding a transaction only together with every
    writer it needs, and stops at ``size`` transactions. A consistent history
    yields consistent windows, so any Inconsistent window is a real violation.
    """
    hc = complete_of(comm_of(h))
    txns = hc.transactions()
    by_id = {t.txn_id: t for t in txns}
    w = writers_of(txns)
    prev: dict[int, int] = {}
    last: dict[ProcessId, int] = {}
    for t in txns:
        if t.client in last:
            prev[t.txn_id] = last[t.client]
        last[t.client] = t.txn_id

    def needs(i: int) -> list[int]:
        return sorted({x for o, v in by_id[i].external_reads() for x in w.get((o, v), []) if x != i})

    def unit(i: int, have: set[int]) -> set[int]:
        out, todo = set(), [i]
        while todo:
            x = todo.pop()
            if x in have or x in out:
                continue
            out.add(x)
            todo.extend(needs(x))
        return out

    result = []
    for anchor in txns:
        if not anchor.read_only:
            continue
        have = unit(anchor.txn_id, set())
        queue = deque(sorted(have))
        visited = set(have)
        while queue:
            x = queue.popleft()
            for y in ([prev[x]] if x in prev else []) + needs(x):
                if y in visited:
                    continue
                visited.add(y)
                add = unit(y, have)
                if len(have) + len(add) <= size:
                    have |= add
                    queue.append(y)
        result.append((anchor.txn_id, hc.restrict(have)))
    return result


def check_windows(h: History, size: int = 8) -> list[tuple[int, Verdict]]:
    return [(anchor, check_causal_consistency(sub, cap=max(size, len(sub.transactions()))))
            for anchor, sub in windows(h, size)]


# --------------------------------------------------------------------------
# history files


HEADER = "kind\top\ttxn\tclient\tobject\tvalue"


def dumps_history(h: History) -> str:
    lines = [HEADER]
    for o, v in h.initial:
        lines.append(f"init\t-\t-\t-\t{o}\t{v}")
    for e in h.events:
        lines.append(f"{e.kind}\t{e.op}\t{e.txn}\t{e.client}\t{e.obj}\t{'-' if e.value is None else e.value}")
    return "\n".join(lines) + "\n"


def loads_history(text: str) -> History:
    events = []
    initial = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#") or line == HEADER:
            continue
        cols = line.split("\t") if "\t" in line else line.split()
        if len(cols) != 6:
            raise ValueError(f"line {n}: expected 6 fields, got {len(cols)}")
        kind, op, txn, client, obj, value = cols
        if kind == "init":
            initial.append((obj, value))
            continue
        if kind not in ("invoke", "response") or op not in ("read", "write"):
            raise ValueError(f"line {n}: bad kind/op {kind}/{op}")
        events.append(OpEvent(kind, op, int(txn), ProcessId.parse(client), obj, None if value == "-" else value))
    return History(tuple(events), tuple(sorted(initial)))


def serial_history(txns: Iterable[tuple[int, str, Sequence[tuple[str, str, str]]]],
                   initial: Mapping[ObjectId, Value] | None = None,
                   unanswered: Iterable[int] = ()) -> History:
    """Build a history where transactions run one after another.

    Each item is ``(txn_id, client, ops)`` with ops ``("r", obj, value)`` or
    ``("w", obj, value)``. Transactions listed in ``unanswered`` get their
    invocations but no responses.
    """
    skip = set(unanswered)
    events: list[OpEvent] = []
    for txn_id, cl, ops in txns:
        c = ProcessId.parse(cl)
        for k, o, v in ops:
            events.append(OpEvent("invoke", "read" if k == "r" else "write", txn_id, c, o, None if k == "r" else v))
        if txn_id in skip:
            continue
        for k, o, v in ops:
            events.append(OpEvent("response", "read", txn_id, c, o, v) if k == "r"
                          else OpEvent("response", "write", txn_id, c, o))
    return History(tuple(events), tuple(sorted((initial or {}).items())))
