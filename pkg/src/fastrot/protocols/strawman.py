"""Protocols that claim all four properties at once.

``eager`` applies every write the moment it arrives. ``commit_wait`` runs a
prepare phase, ``phases - 1`` further acknowledged rounds, then a commit that
flips visibility. Both answer reads in one round from the object's primary,
in the step that delivers the request, with one value per object. Neither can
be causally consistent, and the adversary module exists to show how.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..kernel import StepContext, StepResult
from ..model import ProcessId, SystemSpec, Transaction, part
from .base import UNWRITTEN, Outbox, ProtocolSpec, parts_of, servers_for


@dataclass
class ClientState:
    txn: Transaction | None = None
    stage: int = 0
    waiting: set = field(default_factory=set)
    results: dict = field(default_factory=dict)


@dataclass
class ServerState:
    store: dict = field(default_factory=dict)  # obj -> visible value
    pending: dict = field(default_factory=dict)  # txn -> ((obj, value), ...)


@dataclass(frozen=True)
class StrawClient:
    variant: str
    phases: int = 1

    def initial_state(self, pid: ProcessId, spec: SystemSpec) -> ClientState:
        return ClientState()

    def _send_stage(self, st: ClientState, ctx: StepContext, out: Outbox) -> None:
        spec, t = ctx.spec, st.txn
        holders = sorted({s for o in t.write_set for s in spec.holders(o)})
        st.waiting = set(holders)
        for s in holders:
            local = tuple((o, v) for o, v in t.writes if s in spec.holders(o))
            if self.variant == "eager":
                out.add(s, part("write", local, txn=t.txn_id))
            elif st.stage == 0:
                out.add(s, part("prepare", local, txn=t.txn_id))
            elif st.stage < self.phases:
                out.add(s, part("phase", txn=t.txn_id, phase=st.stage))
            else:
                out.add(s, part("commit", txn=t.txn_id))

    def step(self, st: ClientState, ctx: StepContext, invocations, inbox) -> StepResult:
        out = Outbox()
        res = StepResult(st)
        for t in invocations:
            st.txn, st.stage, st.results = t, 0, {}
            if t.read_only:
                targets = servers_for(ctx.spec, t.reads)
                st.waiting = set(targets)
                for s, objs in targets.items():
                    out.add(s, part("read", txn=t.txn_id, objs=tuple(objs)))
            else:
                self._send_stage(st, ctx, out)
        t = st.txn
        for src, p in parts_of(inbox):
            if t is None or p.get("txn") != t.txn_id or src not in st.waiting:
                continue
            st.waiting.discard(src)
            if p.kind == "read_resp":
                st.results.update(p.values)
        if t is not None and not st.waiting and (invocations or inbox):
            if t.read_only:
                res.responses.append((t.txn_id, tuple((o, st.results.get(o, UNWRITTEN)) for o in t.reads)))
                st.txn = None
            else:
                last = 0 if self.variant == "eager" else self.phases
                if st.stage >= last:
                    res.responses.append((t.txn_id, ()))
                    st.txn = None
                else:
                    st.stage += 1
                    self._send_stage(st, ctx, out)
        res.sends = out.sends()
        return res


@dataclass(frozen=True)
class StrawServer:
    variant: str

    def initial_state(self, pid: ProcessId, spec: SystemSpec) -> ServerState:
        return ServerState()

    def step(self, st: ServerState, ctx: StepContext, invocations, inbox) -> StepResult:
        out = Outbox()
        for src, p in parts_of(inbox):
            txn = p.get("txn")
            if p.kind == "read":
                vals = tuple((o, st.store[o]) for o in p.get("objs") if o in st.store)
                out.add(src, part("read_resp", vals, txn=txn))
            elif p.kind == "write":
                st.store.update(p.values)
                out.add(src, part("write_ack", txn=txn))
            elif p.kind == "prepare":
                st.pending[txn] = p.values
                out.add(src, part("prepare_ack", txn=txn))
            elif p.kind == "phase":
                out.add(src, part("phase_ack", txn=txn, phase=p.get("phase")))
            elif p.kind == "commit":
                st.store.update(st.pending.pop(txn, ()))
                out.add(src, part("commit_ack", txn=txn))
        return StepResult(st, out.sends())


def make_strawman(variant: str = "eager", phases: int = 3) -> ProtocolSpec:
    if variant not in ("eager", "commit_wait"):
        raise ValueError(f"unknown strawman variant {variant!r}")
    if phases < 1:
        raise ValueError("phases must be at least 1")
    params = (("variant", variant),) + ((("phases", phases),) if variant == "commit_wait" else ())
    return ProtocolSpec(
        name=f"strawman-{variant}",
        client=StrawClient(variant, phases if variant == "commit_wait" else 1),
        server=StrawServer(variant),
        declared=frozenset("RNVW"),
        write_arity_limit=None,
        params=params,
        disjoint_only=False,
    )

