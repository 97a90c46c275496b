"""Single-object writes with dependency checks that hide new versions from stale readers.

Every read-only transaction carries an id. Servers remember which transaction
read which version. Before a new version goes live, its server asks the
servers holding the writer's dependencies which transactions saw something
older than those dependencies, and hides the new version from exactly those
transactions. Reads are then answered on the spot with the newest version not
hidden from the asking transaction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..kernel import StepContext, StepResult
from ..model import ProcessId, SystemSpec, Transaction, part
from .base import UNWRITTEN, Outbox, ProtocolSpec, parts_of, servers_for

Stamp = tuple[int, int]  # (origin server index, per-origin sequence)


@dataclass(frozen=True)
class Version:
    stamp: Stamp
    value: str
    hidden: frozenset = frozenset()  # rot ids this version must not be shown to


@dataclass
class PendingWrite:
    client: ProcessId
    obj: str
    value: str
    waiting: set
    stale: set = field(default_factory=set)


@dataclass
class SnowServer:
    seq: int = 0
    versions: dict = field(default_factory=dict)  # obj -> [Version], oldest first
    reads: dict = field(default_factory=dict)  # obj -> [(rot id, stamp)]
    pending: dict = field(default_factory=dict)  # txn -> PendingWrite


@dataclass
class SnowClient:
    deps: dict = field(default_factory=dict)  # obj -> newest stamp this client depends on
    rot_seq: int = 0
    txn: Transaction | None = None
    rot: tuple | None = None
    waiting: set = field(default_factory=set)
    results: dict = field(default_factory=dict)
    stamps: dict = field(default_factory=dict)


def stale_readers(st: SnowServer, obj: str, stamp: Stamp) -> set:
    """Rot ids whose view of ``obj`` here is, or would be, older than ``stamp``."""
    out = {r for r, seen in st.reads.get(obj, ()) if seen < stamp}
    for v in st.versions.get(obj, ()):
        if v.stamp == stamp:
            out |= v.hidden
    return out


def visible_to(st: SnowServer, obj: str, rot) -> Version | None:
    for v in reversed(st.versions.get(obj, ())):
        if rot not in v.hidden:
            return v
    return None


class SnowServerMachine:
    def initial_state(self, pid: ProcessId, spec: SystemSpec) -> SnowServer:
        return SnowServer()

    def step(self, st: SnowServer, ctx: StepContext, invocations, inbox) -> StepResult:
        out = Outbox()
        me, spec = ctx.pid, ctx.spec
        ready = []
        for src, p in parts_of(inbox):
            txn = p.get("txn")
            if p.kind == "read":
                rot = p.get("rot")
                vals, stamps = [], []
                for o in p.get("objs"):
                    v = visible_to(st, o, rot)
                    if v is None:
                        continue
                    st.reads.setdefault(o, []).append((rot, v.stamp))
                    vals.append((o, v.value))
                    stamps.append(v.stamp)
                out.add(src, part("read_resp", vals, txn=txn, rot=rot, stamps=tuple(stamps)))
            elif p.kind == "write":
                (obj, value), = p.values
                pw = PendingWrite(src, obj, value, set())
                remote: dict[ProcessId, list] = {}
                for dep_obj, stamp in p.get("deps"):
                    holder = spec.primary(dep_obj)
                    if holder == me:
                        pw.stale |= stale_readers(st, dep_obj, stamp)
                    else:
                        remote.setdefault(holder, []).append((dep_obj, stamp))
                st.pending[txn] = pw
                for q, deps in sorted(remote.items()):
                    pw.waiting.add(q)
                    out.add(q, part("dep_check", req=txn, deps=tuple(deps)))
                if not pw.waiting:
                    ready.append(txn)
            elif p.kind == "dep_check":
                rots = set()
                for dep_obj, stamp in p.get("deps"):
                    rots |= stale_readers(st, dep_obj, stamp)
                out.add(src, part("dep_reply", req=p.get("req"), rot_ids=tuple(sorted(rots))))
            elif p.kind == "dep_reply":
                pw = st.pending.get(p.get("req"))
                if pw is None or src not in pw.waiting:
                    continue
                pw.waiting.discard(src)
                pw.stale |= set(p.get("rot_ids"))
                if not pw.waiting:
                    ready.append(p.get("req"))
        for txn in ready:
            pw = st.pending.pop(txn)
            st.seq += 1
            stamp = (me.index, st.seq)
            st.versions.setdefault(pw.obj, []).append(Version(stamp, pw.value, frozenset(pw.stale)))
            out.add(pw.client, part("write_ack", txn=txn, stamp=stamp))
        return StepResult(st, out.sends())


class SnowClientMachine:
    def initial_state(self, pid: ProcessId, spec: SystemSpec) -> SnowClient:
        return SnowClient()

    def step(self, st: SnowClient, ctx: StepContext, invocations, inbox) -> StepResult:
        out = Outbox()
        res = StepResult(st)
        spec = ctx.spec
        for t in invocations:
            st.txn, st.results, st.stamps = t, {}, {}
            if t.read_only:
                st.rot_seq += 1
                st.rot = (ctx.pid.index, st.rot_seq)
                targets = servers_for(spec, t.reads)
                st.waiting = set(targets)
                for s, objs in targets.items():
                    out.add(s, part("read", txn=t.txn_id, rot=st.rot, objs=tuple(objs)))
            else:
                (obj, value), = t.writes
                s = spec.primary(obj)
                st.waiting = {s}
                deps = tuple(sorted(st.deps.items()))
                out.add(s, part("write", t.writes, txn=t.txn_id, deps=deps))
        t = st.txn
        for src, p in parts_of(inbox):
            if t is None or p.get("txn") != t.txn_id or src not in st.waiting:
                continue
            st.waiting.discard(src)
            if p.kind == "read_resp":
                for (o, v), stamp in zip(p.values, p.get("stamps")):
                    st.results[o] = v
                    st.stamps[o] = stamp
            elif p.kind == "write_ack":
                st.deps = {t.write_set[0]: p.get("stamp")}
        if t is not None and not st.waiting and (invocations or inbox):
            if t.read_only:
                for o, stamp in st.stamps.items():
                    if o not in st.deps or st.deps[o] < stamp:
                        st.deps[o] = stamp
                res.responses.append((t.txn_id, tuple((o, st.results.get(o, UNWRITTEN)) for o in t.reads)))
            else:
                res.responses.append((t.txn_id, ()))
            st.txn = None
        res.sends = out.sends()
        return res


def make_cops_snow_like() -> ProtocolSpec:
    return ProtocolSpec(
        name="cops-snow",
        client=SnowClientMachine(),
        server=SnowServerMachine(),
        declared=frozenset("NRV"),
        write_arity_limit=1,
    )
