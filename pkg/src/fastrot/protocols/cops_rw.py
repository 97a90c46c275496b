"""Fat-metadata writes: every version travels with its whole causal past.

A client remembers every version it has ever learned of, as (object, stamp,
value). A write stamps itself above all of them and ships the lot, together
with its sibling values, to each server it touches. A read is one request per
server; each server answers at once with its newest version plus everything
embedded in it. The client orders versions it learns in this read after
everything it knew before (newest stamp first among the newcomers), so its
own sequence of reads never contradicts itself. Answers carry many values,
which is the price paid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..kernel import StepContext, StepResult
from ..model import ProcessId, SystemSpec, Transaction, part
from .base import UNWRITTEN, Outbox, ProtocolSpec, parts_of, servers_for

Stamp = tuple[int, int]  # (lamport time, client index)


@dataclass(frozen=True)
class FatVersion:
    stamp: Stamp
    value: str
    embedded: tuple = ()  # ((obj, stamp, value), ...) in the writer's causal past, plus siblings


@dataclass
class FatServer:
    versions: dict = field(default_factory=dict)  # obj -> newest FatVersion


@dataclass
class FatClient:
    lt: int = 0
    seen: set = field(default_factory=set)  # every (obj, stamp, value) learned so far
    current: dict = field(default_factory=dict)  # obj -> (stamp, value) this client reads now
    txn: Transaction | None = None
    stamp: Stamp | None = None
    waiting: set = field(default_factory=set)
    got: list = field(default_factory=list)


def _entries(p):
    return [(o, s, v) for (o, v), s in zip(p.values, p.get("stamps"))]


def _part(kind, entries, **meta):
    return part(kind, [(o, v) for o, _, v in entries], stamps=tuple(s for _, s, _ in entries), **meta)


class FatServerMachine:
    def initial_state(self, pid: ProcessId, spec: SystemSpec) -> FatServer:
        return FatServer()

    def step(self, st: FatServer, ctx: StepContext, invocations, inbox) -> StepResult:
        out = Outbox()
        for src, p in parts_of(inbox):
            txn = p.get("txn")
            if p.kind == "write":
                entries = _entries(p)
                stamp = p.get("stamp")
                for o in p.get("objs"):
                    own = next(e for e in entries if e[0] == o and e[1] == stamp)
                    emb = tuple(e for e in entries if e != own)
                    cur = st.versions.get(o)
                    if cur is None or cur.stamp < stamp:
                        st.versions[o] = FatVersion(stamp, own[2], emb)
                out.add(src, part("write_ack", txn=txn))
            elif p.kind == "read":
                entries: list = []
                for o in p.get("objs"):
                    v = st.versions.get(o)
                    if v is not None:
                        entries.append((o, v.stamp, v.value))
                        entries.extend(e for e in v.embedded if e not in entries)
                out.add(src, _part("read_resp", entries, txn=txn))
        return StepResult(st, out.sends())


class FatClientMachine:
    def initial_state(self, pid: ProcessId, spec: SystemSpec) -> FatClient:
        return FatClient()

    def _absorb(self, st: FatClient, entries) -> None:
        fresh = sorted({e for e in entries if e not in st.seen}, key=lambda e: e[1])
        for o, s, v in fresh:  # ascending stamp: the newest newcomer per object wins
            st.current[o] = (s, v)
            st.lt = max(st.lt, s[0])
        st.seen.update(fresh)

    def step(self, st: FatClient, ctx: StepContext, invocations, inbox) -> StepResult:
        out = Outbox()
        res = StepResult(st)
        spec = ctx.spec
        for t in invocations:
            st.txn, st.got = t, []
            if t.read_only:
                targets = servers_for(spec, t.reads)
                st.waiting = set(targets)
                for s, objs in targets.items():
                    out.add(s, part("read", txn=t.txn_id, objs=tuple(objs)))
            else:
                st.lt += 1
                st.stamp = (st.lt, ctx.pid.index)
                entries = [(o, st.stamp, v) for o, v in t.writes] + sorted(st.seen, key=lambda e: (e[1], e[0]))
                targets = servers_for(spec, t.write_set)
                st.waiting = set(targets)
                for s, objs in targets.items():
                    out.add(s, _part("write", entries, txn=t.txn_id, objs=tuple(objs), stamp=st.stamp))
        t = st.txn
        for src, p in parts_of(inbox):
            if t is None or p.get("txn") != t.txn_id or src not in st.waiting:
                continue
            st.waiting.discard(src)
            if p.kind == "read_resp":
                st.got.extend(_entries(p))
        if t is not None and not st.waiting and (invocations or inbox):
            if t.read_only:
                self._absorb(st, st.got)
                res.responses.append((t.txn_id, tuple((o, st.current.get(o, (None, UNWRITTEN))[1]) for o in t.reads)))
            else:
                self._absorb(st, [(o, st.stamp, v) for o, v in t.writes])
                res.responses.append((t.txn_id, ()))
            st.txn = None
        res.sends = out.sends()
        return res


def make_cops_rw_like() -> ProtocolSpec:
    return ProtocolSpec(
        name="cops-rw",
        client=FatClientMachine(),
        server=FatServerMachine(),
        declared=frozenset("NRW"),
        write_arity_limit=None,
    )
