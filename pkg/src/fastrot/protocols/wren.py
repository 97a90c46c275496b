"""Snapshot reads below a gossiped stable time, with client-driven two-phase writes.

Servers keep scalar logical clocks. A write is prepared everywhere it lands,
committed at the largest prepare time, and counts as stable at a server once
that server's local stable time (its clock, held back by anything still
prepared) passes it. Servers swap local stable times on timer steps; the
minimum they know of is the cutoff. A read first asks one server for the
cutoff, then reads every object at that snapshot. Clients keep their own
recent writes in a cache so they can read them before the cutoff catches up.
A cached write counts as newer than another client's version only if that
version is no later than the snapshot the write was committed under; servers
leave the asking client's own versions out of their answers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..kernel import StepContext, StepResult
from ..model import ProcessId, SystemSpec, Transaction, part
from .base import UNWRITTEN, Outbox, ProtocolSpec, parts_of, servers_for


@dataclass
class WrenServer:
    clock: int = 0
    versions: dict = field(default_factory=dict)  # obj -> [(ts, txn, value, writer index)]
    pending: dict = field(default_factory=dict)  # txn -> (prepare ts, values, writer index)
    known: dict = field(default_factory=dict)  # server index -> last heard local stable time
    ticks: int = 0

    def local_stable(self) -> int:
        low = min((pt for pt, _, _ in self.pending.values()), default=None)
        return self.clock if low is None else min(self.clock, low - 1)

    def cutoff(self, me: ProcessId, spec: SystemSpec) -> int:
        others = [self.known.get(q.index, 0) for q in spec.servers if q != me]
        return min([self.local_stable(), *others])

    def newest_at(self, obj: str, snapshot: int, skip_writer: int):
        best = None
        for ts, txn, value, writer in self.versions.get(obj, ()):
            if ts <= snapshot and writer != skip_writer and (best is None or (ts, txn) > best[:2]):
                best = (ts, txn, value)
        return best


@dataclass
class WrenClient:
    dep_ts: int = 0
    snapshot: int = 0
    cache: dict = field(default_factory=dict)  # obj -> (snapshot at commit, value) of own writes
    txn: Transaction | None = None
    stage: str = ""
    waiting: set = field(default_factory=set)
    got: dict = field(default_factory=dict)  # obj -> (ts, value)
    prepared: list = field(default_factory=list)


@dataclass(frozen=True)
class WrenServerMachine:
    gossip_period: int

    def initial_state(self, pid: ProcessId, spec: SystemSpec) -> WrenServer:
        return WrenServer()

    def step(self, st: WrenServer, ctx: StepContext, invocations, inbox) -> StepResult:
        out = Outbox()
        me, spec = ctx.pid, ctx.spec
        for src, p in parts_of(inbox):
            txn = p.get("txn")
            if p.kind == "prepare":
                st.clock = max(st.clock, p.get("dep_ts")) + 1
                st.pending[txn] = (st.clock, p.values, src.index)
                out.add(src, part("prepare_ack", txn=txn, stamp=st.clock))
            elif p.kind == "commit":
                ct = p.get("stamp")
                st.clock = max(st.clock, ct)
                _, values, writer = st.pending.pop(txn)
                for o, v in values:
                    st.versions.setdefault(o, []).append((ct, txn, v, writer))
            elif p.kind == "gossip":
                st.known[src.index] = max(st.known.get(src.index, 0), p.get("lst"))
                st.clock = max(st.clock, p.get("lst"))
            elif p.kind == "cutoff_req":
                out.add(src, part("cutoff_resp", txn=txn, cutoff=st.cutoff(me, spec)))
            elif p.kind == "read":
                snap = p.get("snapshot")
                vals, stamps = [], []
                for o in p.get("objs"):
                    hit = st.newest_at(o, snap, p.get("req"))
                    if hit is not None:
                        vals.append((o, hit[2]))
                        stamps.append(hit[0])
                out.add(src, part("read_resp", vals, txn=txn, stamps=tuple(stamps)))
        if not inbox:
            st.ticks += 1
            if st.ticks % self.gossip_period == 0:
                lst = st.local_stable()
                for q in spec.servers:
                    if q != me:
                        out.add(q, part("gossip", lst=lst))
        return StepResult(st, out.sends())


class WrenClientMachine:
    def initial_state(self, pid: ProcessId, spec: SystemSpec) -> WrenClient:
        return WrenClient()

    def step(self, st: WrenClient, ctx: StepContext, invocations, inbox) -> StepResult:
        out = Outbox()
        res = StepResult(st)
        spec = ctx.spec
        for t in invocations:
            st.txn, st.got, st.prepared = t, {}, []
            if t.read_only:
                st.stage = "cutoff"
                first = spec.servers[0]
                st.waiting = {first}
                out.add(first, part("cutoff_req", txn=t.txn_id))
            else:
                st.stage = "prepare"
                targets = servers_for(spec, t.write_set)
                st.waiting = set(targets)
                for s, objs in targets.items():
                    vals = tuple((o, v) for o, v in t.writes if o in objs)
                    out.add(s, part("prepare", vals, txn=t.txn_id, dep_ts=st.dep_ts))
        t = st.txn
        for src, p in parts_of(inbox):
            if t is None or p.get("txn") != t.txn_id or src not in st.waiting:
                continue
            st.waiting.discard(src)
            if p.kind == "cutoff_resp":
                st.snapshot = max(st.snapshot, p.get("cutoff"))
            elif p.kind == "read_resp":
                for (o, v), ts in zip(p.values, p.get("stamps")):
                    st.got[o] = (ts, v)
            elif p.kind == "prepare_ack":
                st.prepared.append(p.get("stamp"))
        if t is None or st.waiting or not (invocations or inbox):
            res.sends = out.sends()
            return res
        if st.stage == "cutoff":
            st.stage = "read"
            targets = servers_for(spec, t.reads)
            st.waiting = set(targets)
            for s, objs in targets.items():
                out.add(s, part("read", txn=t.txn_id, objs=tuple(objs), snapshot=st.snapshot,
                                req=ctx.pid.index))
        elif st.stage == "read":
            results = []
            for o in t.reads:
                theirs = st.got.get(o)
                mine = st.cache.get(o)
                if mine is not None and (theirs is None or theirs[0] <= mine[0]):
                    results.append((o, mine[1]))
                elif theirs is not None:
                    results.append((o, theirs[1]))
                    st.dep_ts = max(st.dep_ts, theirs[0])
                else:
                    results.append((o, UNWRITTEN))
            st.dep_ts = max(st.dep_ts, st.snapshot)
            res.responses.append((t.txn_id, tuple(results)))
            st.txn = None
        elif st.stage == "prepare":
            ct = max(st.prepared)
            for s, objs in servers_for(spec, t.write_set).items():
                out.add(s, part("commit", txn=t.txn_id, stamp=ct))
            for o, v in t.writes:
                st.cache[o] = (st.snapshot, v)
            st.dep_ts = max(st.dep_ts, ct)
            res.responses.append((t.txn_id, ()))
            st.txn = None
        res.sends = out.sends()
        return res


def make_wren_like(gossip_period: int = 2) -> ProtocolSpec:
    if gossip_period < 1:
        raise ValueError("gossip_period must be at least 1")
    return ProtocolSpec(
        name="wren",
        client=WrenClientMachine(),
        server=WrenServerMachine(gossip_period),
        declared=frozenset("NVW"),
        write_arity_limit=None,
        params=(("gossip_period", gossip_period),),
    )
