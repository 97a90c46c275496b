"""Adversarial schedules against protocols that claim fast reads and multi-object writes.

Everything here builds concrete executions. A reader's round is scheduled so
that one group of servers answers before the other; the solo run of the write
is cut and spliced so that one server never learns what the other did; and a
bounded search walks the write's schedules looking for a configuration where a
read splits the write in two. Each result is a :class:`Witness` whose trace
replays event for event and whose history is re-checked.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

from .history import (
    ShapeMismatch,
    Verdict,
    check_causal_consistency,
    dumps_history,
    extract_history,
    mixed_read_oracle,
)
from .kernel import (
    Configuration,
    Deliver,
    DeliverNext,
    Invoke,
    Respond,
    Step,
    Trace,
    _freeze,
    _Recorder,
    apply_event,
    full_trace,
    init,
    run,
    state_fingerprint,
)
from .model import InvalidSpec, Message, ProcessId, SimError, SystemSpec, Transaction, server
from .properties import check_fast_rot, default_write, probe_visibility


class AdversaryError(SimError):
    pass


class NotAllFour(AdversaryError):
    """The protocol does not claim R, N, V and W together."""


class PreconditionVisible(AdversaryError):
    pass


class PreconditionNotVisible(AdversaryError):
    pass


class SpliceIllegal(AdversaryError):
    def __init__(self, index: int, event: Any, reason: str):
        super().__init__(f"spliced event #{index} {event}: {reason}")
        self.index = index
        self.event = event
        self.reason = reason


class IndistinguishabilityBroken(AdversaryError):
    pass


class LemmaStructureBroken(AdversaryError):
    """No message chain and no violation: the protocol escaped the argument."""


WITNESS_KINDS = ("MixedRead", "VisibilityStarvation", "BlockingDetected", "ExtraRound", "MultiValue")


# --------------------------------------------------------------------------
# recipes


def template_of(ev: Any) -> Any:
    """Strip message ids so the event can be replayed from a different configuration."""
    if isinstance(ev, Deliver):
        return DeliverNext(ev.src, ev.dst)
    if isinstance(ev, Step):
        return Step(ev.process)
    return ev


def actor_of(ev: Any) -> ProcessId:
    """The process whose buffers or state the event changes."""
    if isinstance(ev, Step):
        return ev.process
    if isinstance(ev, (Deliver, DeliverNext)):
        return ev.dst
    if isinstance(ev, (Invoke, Respond)):
        return ev.client
    raise TypeError(ev)


@dataclass
class ScheduleRecipe:
    name: str
    focus: ProcessId
    reader: ProcessId | None
    segments: list[tuple[str, tuple]]
    anchor: Configuration | None = None
    facts: dict = field(default_factory=dict)
    trace: Trace | None = None

    def events(self, names: Iterable[str] | None = None) -> list:
        wanted = None if names is None else set(names)
        return [e for n, evs in self.segments if wanted is None or n in wanted for e in evs]

    def processes(self, names: Iterable[str] | None = None) -> frozenset[ProcessId]:
        return frozenset(actor_of(e) for e in self.events(names))

    def instantiate(self, c: Configuration | None = None, label: str = "") -> Trace:
        start = c if c is not None else self.anchor
        if start is None:
            raise AdversaryError(f"recipe {self.name} has no anchor configuration")
        return run(start, self.events(), label=label or self.name)

    def describe(self) -> str:
        parts = [f"{n}[{len(evs)}]" for n, evs in self.segments]
        return f"{self.name}({self.focus}): " + " . ".join(parts)


@dataclass
class Witness:
    kind: str
    trace: Trace
    verdicts: dict = field(default_factory=dict)
    narrative: str = ""
    checks: list[tuple[str, bool]] = field(default_factory=list)
    census: list[tuple[int, int, int]] = field(default_factory=list)
    k: int | None = None
    recipe: ScheduleRecipe | None = None

    def __post_init__(self):
        if self.kind not in WITNESS_KINDS:
            raise ValueError(f"unknown witness kind {self.kind!r}")

    @property
    def checks_hold(self) -> bool:
        return all(ok for _, ok in self.checks)


@dataclass
class NoneFound:
    depth: int
    seed: int
    nodes: int
    probes: int
    deepest: int
    note: str = ""


# --------------------------------------------------------------------------
# small helpers


def writer_txn(c: Configuration) -> Transaction | None:
    """The writer's current write, or its last one."""
    w = c.spec.writer
    t = c.active.get(w)
    if t is not None and t.write_only:
        return t
    last = None
    for e in c.history_events():
        if isinstance(e, Invoke) and e.client == w and e.txn.write_only:
            last = e.txn
    return last


def _general(spec: SystemSpec) -> bool:
    return not (spec.server_count == 2 and spec.disjoint)


def _other(p: ProcessId) -> ProcessId:
    return server(1 - p.index)


def _visible(c: Configuration, o: str, v: str, cap: int) -> bool:
    return probe_visibility(c, o, v, cap=cap).visible


def view_of(c: Configuration, p: ProcessId) -> tuple:
    """What ``p`` can tell about ``c``: its state and what sits in its income buffers."""
    return (_freeze(c.state_of(p)), tuple(m.content() for m in c.income_of(p)))


def _reader_txn(c: Configuration, reader: ProcessId, t_w: Transaction | None, txn_id: int | None) -> Transaction:
    if txn_id is None:
        txn_id = max(c.txn_ids | ({t_w.txn_id} if t_w is not None else set()), default=0) + 1
    return Transaction(txn_id, reader, reads=tuple(c.spec.objects))


def _request(c: Configuration, txn: Transaction) -> tuple:
    return (Invoke(txn.client, txn), Step(txn.client))


def _answer(c: Configuration, reader: ProcessId, group: Sequence[ProcessId]) -> tuple:
    evs = []
    for q in group:
        if c.head(reader, q) is not None:
            evs += [DeliverNext(reader, q), Step(q)]
    return tuple(evs)


def collect(c: Configuration, reader: ProcessId, txn_id: int, rounds: int = 4) -> tuple[Trace, str | None]:
    """Hand the reader its answers and let it finish.

    Returns the tail and ``None`` when the read completed on the first answers,
    ``"ExtraRound"`` when the reader asked again, or ``"BlockingDetected"``
    when it was left waiting with nothing in flight.
    """
    rec = _Recorder(c, label="tail")
    trouble = None
    for _ in range(rounds):
        cfg = rec.config
        incoming = sorted(link for link, q in cfg.outcome.items() if q and link[1] == reader)
        if not incoming and not cfg.income_of(reader):
            return rec.trace, trouble or "BlockingDetected"
        for link in incoming:
            for m in cfg.outcome[link]:
                rec.apply(Deliver(m.msg_id))
        recorded = rec.apply(Step(reader))
        if any(isinstance(e, Respond) and e.txn_id == txn_id for e in recorded):
            return rec.trace, trouble
        if recorded[0].emitted:
            trouble = "ExtraRound"
            # let the servers answer the extra requests so the trace ends with the read done
            for q in sorted({rec.trace.messages[i].dst for i in recorded[0].emitted}):
                for m in rec.config.outcome.get((reader, q), ()):
                    rec.apply(Deliver(m.msg_id))
                rec.apply(Step(q))
    return rec.trace, trouble or "BlockingDetected"


def _classify(t_w: Transaction | None, spec: SystemSpec, result: dict | None) -> str:
    """all-new / all-initial / mixed / other, over the objects the write touches."""
    if result is None or t_w is None:
        return "other"
    new = dict(t_w.writes)
    fresh = [o for o in new if result.get(o) == new[o]]
    stale = [o for o in new if result.get(o) == spec.initial_values[o]]
    if len(fresh) + len(stale) != len(new):
        return "other"
    if fresh and stale:
        return "mixed"
    return "all-new" if fresh else "all-initial"


# --------------------------------------------------------------------------
# the reader's two schedules


def _read_in_order(c: Configuration, name: str, segment: str, p: ProcessId, first: list[ProcessId],
                   reader: ProcessId, txn: Transaction) -> tuple[Trace, ScheduleRecipe, Configuration, str | None]:
    req = run(c, _request(c, txn), label=name)
    c_req = req.final
    rest = [q for q in c.spec.servers if q not in first]
    head = _answer(c_req, reader, first)
    mid = run(c_req, head)
    tail_evs = _answer(mid.final, reader, rest)
    after = run(mid.final, tail_evs)
    tail, trouble = collect(after.final, reader, txn.txn_id)
    trace = req.then(mid).then(after).then(tail)
    segs = [("request", _request(c, txn)), (segment, head), ("rest", tail_evs),
            ("tail", tuple(template_of(e) for e in tail.scheduled()))]
    recipe = ScheduleRecipe(name, p, reader, segs, anchor=c, trace=trace)
    return trace, recipe, c_req, trouble


def construct_gamma_old(c: Configuration, p_i: ProcessId, c_r: ProcessId | None = None,
                        t_w: Transaction | None = None, txn_id: int | None = None,
                        cap: int = 64) -> tuple[Trace, ScheduleRecipe]:
    """The read that returns only initial values: ``p_i`` answers first.

    With two servers and disjoint objects, ``p_i`` alone answers first; in the
    general case every server other than ``p_i`` does. The returned recipe's
    ``sigma_old`` prefix is the request plus those first answers.
    """
    spec = c.spec
    t_w = t_w if t_w is not None else writer_txn(c)
    if t_w is not None:
        general = _general(spec)
        mine = [(o, v) for o, v in t_w.writes if general or p_i.index in spec.replication[o]]
        seen = [_visible(c, o, v, cap) for o, v in mine]
        if mine and (all(seen) if general else any(seen)):
            raise PreconditionVisible(f"a value written by T{t_w.txn_id} is already visible")
    reader = c_r if c_r is not None else c.fresh_client()
    txn = _reader_txn(c, reader, t_w, txn_id)
    first = [p_i] if not _general(spec) else [q for q in spec.servers if q != p_i]
    trace, recipe, _, trouble = _read_in_order(c, "gamma_old", "answer", p_i, first, reader, txn)
    result = trace.result_of(txn.txn_id)
    recipe.segments = [("sigma_old", recipe.segments[0][1] + recipe.segments[1][1]), *recipe.segments[2:]]
    recipe.facts.update(result=result, trouble=trouble, txn_id=txn.txn_id,
                        all_initial=result == dict(spec.initial_values),
                        touches=sorted(map(str, recipe.processes(["sigma_old"]))))
    return trace, recipe


def construct_gamma_new(c: Configuration, p_i: ProcessId, c_r: ProcessId | None = None,
                        t_w: Transaction | None = None, txn_id: int | None = None,
                        cap: int = 64) -> tuple[Trace, ScheduleRecipe, Configuration]:
    """The read that returns only new values: the server(s) other than ``p_i`` answer first.

    In the general case ``p_i`` alone answers first. Also returns the
    configuration right after the reader's requests went out.
    """
    spec = c.spec
    t_w = t_w if t_w is not None else writer_txn(c)
    if t_w is None:
        raise PreconditionNotVisible("nothing has been written")
    general = _general(spec)
    mine = [(o, v) for o, v in t_w.writes if general or p_i.index in spec.replication[o]]
    seen = [_visible(c, o, v, cap) for o, v in mine]
    if not mine or not (any(seen) if general else all(seen)):
        raise PreconditionNotVisible(f"the values written by T{t_w.txn_id} are not visible")
    reader = c_r if c_r is not None else c.fresh_client()
    txn = _reader_txn(c, reader, t_w, txn_id)
    first = [p_i] if general else [q for q in spec.servers if q != p_i]
    trace, recipe, c_new, trouble = _read_in_order(c, "gamma_new", "sigma_new", p_i, first, reader, txn)
    result = trace.result_of(txn.txn_id)
    recipe.anchor = c_new
    recipe.segments = recipe.segments[1:]
    recipe.facts.update(result=result, trouble=trouble, txn_id=txn.txn_id,
                        all_new=all(result and result.get(o) == v for o, v in t_w.writes),
                        touches=sorted(map(str, recipe.processes(["sigma_new"]))))
    return trace, recipe, c_new


# --------------------------------------------------------------------------
# splicing the solo write


def splice_beta_new(beta: Trace, focus: ProcessId, excluded_server: ProcessId,
                    writer: ProcessId) -> ScheduleRecipe:
    """Cut ``beta`` after the writer's last message to ``focus``; keep the focus server's part of the rest.

    The prefix loses every step of, and delivery to, ``excluded_server``; the
    suffix keeps only the steps of, and deliveries to, ``focus``. The result is
    replayed from ``beta``'s start and the focus server must end in the same
    state as at the end of ``beta``.
    """
    allowed = set(beta.start.spec.servers) | {writer}
    scheduled = beta.scheduled()
    for i, e in enumerate(scheduled):
        if actor_of(e) not in allowed:
            raise AdversaryError(f"event #{i} {e} is not by the writer or a server")
    cut = 0
    for i, e in enumerate(scheduled):
        if isinstance(e, Step) and e.process == writer and any(beta.messages[m].dst == focus for m in e.emitted):
            cut = i + 1
    prefix = [e for e in scheduled[:cut] if actor_of(e) != excluded_server]
    suffix = [e for e in scheduled[cut:] if actor_of(e) == focus]
    spliced = prefix + suffix

    rec = _Recorder(beta.start, label="beta_new")
    for i, e in enumerate(spliced):
        try:
            recorded = rec.apply(template_of(e))
        except SimError as exc:
            raise SpliceIllegal(i, e, str(exc)) from exc
        if isinstance(e, Deliver):
            got = rec.trace.messages[recorded[0].msg_id]
            if got.content() != beta.messages[e.msg_id].content():
                raise SpliceIllegal(i, e, f"the link now carries {got.content()} instead")
    focus_equal = state_fingerprint(rec.config.state_of(focus)) == state_fingerprint(beta.final.state_of(focus))
    recipe = ScheduleRecipe(
        "beta_new", focus, None,
        [("beta_p", tuple(template_of(e) for e in prefix)), ("beta_s", tuple(template_of(e) for e in suffix))],
        anchor=beta.start, trace=rec.trace,
        facts={"cut": cut, "dropped": cut - len(prefix), "kept_suffix": len(suffix),
               "focus_equal": focus_equal, "excluded": str(excluded_server)},
    )
    if not focus_equal:
        raise IndistinguishabilityBroken(f"{focus} ends the spliced run in a different state")
    return recipe


# --------------------------------------------------------------------------
# the solo write


def _next_solo(cfg: Configuration, t_w: Transaction, procs: set[ProcessId]) -> Any:
    if t_w.txn_id not in cfg.txn_ids:
        return Invoke(t_w.client, t_w)
    heads = [q[0] for link, q in cfg.outcome.items() if q and link[1] in procs]
    if heads:
        return Deliver(min(m.msg_id for m in heads))
    for p in cfg.spec.servers:
        if cfg.income_of(p):
            return Step(p)
    if cfg.income_of(t_w.client) or cfg.invocations.get(t_w.client):
        return Step(t_w.client)
    servers = cfg.spec.servers
    return Step(servers[cfg.event_count % len(servers)])


def solo_run(c: Configuration, t_w: Transaction, until: Callable[[Configuration], bool] | None = None,
             budget: int = 400) -> Trace:
    """Deterministic solo schedule of the write: deliver the oldest message, else step a server, else the writer."""
    procs = set(c.spec.servers) | {t_w.client}
    rec = _Recorder(c, label="solo")
    for _ in range(budget):
        if until is not None and until(rec.config):
            break
        rec.apply(_next_solo(rec.config, t_w, procs))
    return rec.trace


def values_visible(t_w: Transaction, cap: int = 64) -> Callable[[Configuration], bool]:
    def check(cfg: Configuration) -> bool:
        return t_w.txn_id in cfg.txn_ids and all(_visible(cfg, o, v, cap) for o, v in t_w.writes)
    return check


# --------------------------------------------------------------------------
# the message chain


@dataclass
class ChainLink:
    message: Message
    relay: Message | None  # the writer's follow-up to the other server, when the chain goes through it

    def describe(self) -> str:
        m = self.message
        kinds = "+".join(p.kind for p in m.parts)
        text = f"m{m.msg_id} {m.src}->{m.dst} {kinds}"
        if self.relay is not None:
            r = self.relay
            text += f", relayed as m{r.msg_id} {r.src}->{r.dst} {'+'.join(p.kind for p in r.parts)}"
        return text


def find_chain_message(beta: Trace, sender: ProcessId, target: ProcessId, writer: ProcessId) -> tuple[int, ChainLink] | None:
    """First message of ``sender`` in ``beta`` that reaches ``target`` directly or through the writer.

    Returns the index of the sending step and the link.
    """
    consumed_at: dict[int, int] = {}
    for i, e in enumerate(beta.events):
        if isinstance(e, Step) and e.process == writer:
            for m in e.consumed:
                consumed_at[m] = i
    for i, e in enumerate(beta.events):
        if not (isinstance(e, Step) and e.process == sender):
            continue
        for mid in e.emitted:
            m = beta.messages[mid]
            if m.dst == target:
                return i, ChainLink(m, None)
            if m.dst == writer and mid in consumed_at:
                for later in beta.events[consumed_at[mid]:]:
                    if isinstance(later, Step) and later.process == writer:
                        out = [beta.messages[x] for x in later.emitted if beta.messages[x].dst == target]
                        if out:
                            return i, ChainLink(m, out[0])
    return None


@dataclass
class LemmaRow:
    k: int
    link: ChainLink
    probes: dict[str, str]  # object -> Visible/NotVisible/Unknown at C_k
    sent: int  # messages sent since C_0
    in_transit: int

    @property
    def not_visible(self) -> bool:
        return all(v == "NotVisible" for v in self.probes.values())

    def line(self) -> str:
        probes = ",".join(f"{o}={v}" for o, v in sorted(self.probes.items()))
        return f"k={self.k}\tms={self.link.describe()}\tprobes={probes}\tsent={self.sent}\tin_transit={self.in_transit}"


def _guard(protocol) -> None:
    if not protocol.all_four:
        raise NotAllFour(f"{protocol.name} declares {protocol.declared_text()}, not all of R, N, V, W")


def build_contradiction(protocol, spec: SystemSpec, k: int, *, seed: int = 0, cap: int = 64,
                        budget: int = 400, c0: Configuration | None = None) -> Witness:
    """Walk the message chain for ``k`` rounds, or break the protocol on the way.

    Round ``j`` runs the write solo from C_(j-1) until its values are visible.
    If server ``p_(j%2)`` gets a message to ``p_((j-1)%2)`` in that run, either
    directly or through the writer, the run is cut right after it to give C_j,
    whose written values are then probed. Otherwise a read is scheduled around
    the spliced run, and its split answer is the witness.
    """
    _guard(protocol)
    if _general(spec):
        raise InvalidSpec("the message chain is built for two servers with one object each; use hunt")
    c0 = c0 if c0 is not None else init(spec, protocol, seed)
    t_w = default_write(spec, protocol, max(c0.txn_ids) + 1)
    writer = t_w.client
    visible = values_visible(t_w, cap)
    alpha = Trace(c0, label="alpha")
    rows: list[LemmaRow] = []
    checks: list[tuple[str, bool]] = []
    for j in range(1, k + 1):
        c_prev = alpha.final
        p_i = server(j % 2)
        p_o = _other(p_i)
        beta = solo_run(c_prev, t_w, until=visible, budget=budget)
        if not visible(beta.final):
            census = [(r.k, r.sent, r.in_transit) for r in rows]
            return Witness("VisibilityStarvation", alpha.then(beta), {"rows": rows, "reason": "solo write never visible"},
                           checks=checks, census=census, k=j,
                           narrative=_starvation_narrative(protocol, rows, note="the solo write never became visible"))
        found = find_chain_message(beta, p_i, p_o, writer)
        if found is None:
            return _contradiction(protocol, c0, alpha, beta, j, t_w, checks, rows, cap)
        idx, link = found
        prefix = run(c_prev, [e for e in beta.events[:idx + 1] if not isinstance(e, Respond)], label=f"alpha_{j}")
        alpha = alpha.then(prefix)
        c_k = alpha.final
        probes = {o: probe_visibility(c_k, o, v, cap=cap).outcome for o, v in t_w.writes}
        rows.append(LemmaRow(j, link, probes, c_k.next_msg_id - c0.next_msg_id, len(c_k.in_transit())))
        if any(v == "Visible" for v in probes.values()):
            return _contradiction(protocol, c0, alpha_before(alpha, prefix), prefix, j, t_w, checks, rows, cap,
                                  segment="rho_new")
    census = [(r.k, r.sent, r.in_transit) for r in rows]
    return Witness("VisibilityStarvation", alpha, {"rows": rows}, checks=checks, census=census, k=k,
                   narrative=_starvation_narrative(protocol, rows))


def alpha_before(alpha: Trace, last: Trace) -> Trace:
    n = len(alpha.events) - len(last.events)
    return Trace(alpha.start, alpha.events[:n], alpha.messages, last.start, alpha.seed, alpha.label)


def _contradiction(protocol, c0: Configuration, alpha: Trace, beta: Trace, k: int, t_w: Transaction,
                   checks: list, rows: list, cap: int, segment: str = "beta_new") -> Witness:
    """Assemble sigma_old . beta_new . sigma_new . tail from C_(k-1)."""
    c_prev = beta.start
    spec = c_prev.spec
    p_i = server(k % 2)
    p_o = _other(p_i)
    writer = t_w.client
    c_r = c_prev.fresh_client()
    txn_id = max(c_prev.txn_ids | {t_w.txn_id}) + 1
    _, old = construct_gamma_old(c_prev, p_i, c_r, t_w, txn_id, cap)
    sigma_old = ScheduleRecipe("sigma_old", p_i, c_r, old.segments[:1], anchor=c_prev)
    try:
        spliced = splice_beta_new(beta, p_o, p_i, writer)
    except SpliceIllegal as exc:
        raise LemmaStructureBroken(f"k={k}: no chain message found, yet the splice fails: {exc}") from exc
    checks.append((f"k={k} {segment}: {p_o} state matches the unspliced run", spliced.facts["focus_equal"]))

    t1 = sigma_old.instantiate(c_prev)
    checks.append((f"k={k} sigma_old touches only {c_r} and {p_i}", sigma_old.processes() <= {c_r, p_i}))
    checks.append((f"k={k} sigma_old leaves {writer} and {p_o} as they were",
                   all(view_of(t1.final, p) == view_of(c_prev, p) for p in (writer, p_o))))
    t2 = spliced.instantiate(t1.final)
    checks.append((f"k={k} {segment} excludes {p_i} and {c_r}", not (spliced.processes() & {p_i, c_r})))
    swapped = sigma_old.instantiate(spliced.instantiate(c_prev).final)
    checks.append((f"k={k} sigma_old and {segment} commute", swapped.final.fingerprint() == t2.final.fingerprint()))

    _, new, c_new = construct_gamma_new(beta.final, p_i, c_r, t_w, txn_id, cap)
    sigma_new = ScheduleRecipe("sigma_new", p_o, c_r, new.segments[:1], anchor=c_new)
    checks.append((f"k={k} {p_o} cannot tell the spliced run from C_new",
                   view_of(t2.final, p_o) == view_of(c_new, p_o)))
    t3 = sigma_new.instantiate(t2.final)
    tail, trouble = collect(t3.final, c_r, txn_id)
    gamma = t1.then(t2).then(t3).then(tail)
    recipe = ScheduleRecipe("gamma", p_i, c_r,
                            [("sigma_old", sigma_old.events()), (segment, spliced.events()),
                             ("sigma_new", sigma_new.events()),
                             ("tail", tuple(template_of(e) for e in tail.scheduled()))],
                            anchor=c_prev, trace=gamma)
    whole = alpha.then(gamma) if alpha.events else Trace(c0, gamma.events, gamma.messages, gamma.final, label="gamma")
    whole.label = "witness"
    result = gamma.result_of(txn_id)
    shape = _classify(t_w, spec, result)
    verdicts = _verdicts(whole, txn_id, result)
    verdicts["rows"] = rows
    kind = _kind_of(trouble, verdicts, shape)
    if kind is None:
        raise LemmaStructureBroken(
            f"k={k}: no chain message from {p_i} to {p_o}, yet the spliced read returned {result} ({shape})")
    narrative = _gamma_narrative(protocol, k, recipe, spliced, result, shape, verdicts, rows)
    return Witness(kind, whole, verdicts, narrative, checks, [(r.k, r.sent, r.in_transit) for r in rows], k, recipe)


def _verdicts(whole: Trace, txn_id: int, result: dict | None) -> dict:
    h = extract_history(whole)
    out: dict = {"result": result, "fast": check_fast_rot(whole, txn_id)}
    out["checker"] = check_causal_consistency(h, cap=10)
    try:
        out["oracle"] = mixed_read_oracle(h)
    except ShapeMismatch as exc:
        out["oracle"] = None
        out["oracle_note"] = str(exc)
    return out


def _kind_of(trouble: str | None, verdicts: dict, shape: str) -> str | None:
    if trouble is not None:
        return trouble
    fast = verdicts["fast"]
    if not fast.nonblocking:
        return "BlockingDetected"
    if not fast.one_round:
        return "ExtraRound"
    if not fast.one_value:
        return "MultiValue"
    if shape == "mixed" and verdicts["checker"].outcome == "Inconsistent" and verdicts["oracle"] is not None:
        return "MixedRead"
    return None


@dataclass
class LemmaReport:
    rows: list[LemmaRow]
    witness: Witness | None
    k_max: int

    @property
    def census_grows(self) -> bool:
        sent = [r.sent for r in self.rows]
        return all(a < b for a, b in zip(sent, sent[1:]))

    @property
    def complete(self) -> bool:
        return len(self.rows) == self.k_max and all(r.not_visible for r in self.rows)

    def lines(self) -> list[str]:
        out = [r.line() for r in self.rows]
        if self.witness is not None and self.witness.kind != "VisibilityStarvation":
            out.append(f"stopped at k={self.witness.k}: {self.witness.kind}")
        return out


def repro_lemma3(protocol, spec: SystemSpec | None = None, k_max: int = 5, *, seed: int = 0,
                 cap: int = 64) -> LemmaReport:
    """The message chain for k = 1..k_max, stopping early if the protocol breaks first."""
    _guard(protocol)
    if k_max <= 0:
        return LemmaReport([], None, max(k_max, 0))
    spec = spec if spec is not None else SystemSpec.disjoint_spec()
    w = build_contradiction(protocol, spec, k_max, seed=seed, cap=cap)
    return LemmaReport(list(w.verdicts.get("rows", [])), w, k_max)


# --------------------------------------------------------------------------
# search


def probe_orders(spec: SystemSpec) -> list[tuple[str, list[ProcessId]]]:
    """Server answer orders tried at every node: each server alone first, and each server alone last."""
    out: list[tuple[str, list[ProcessId]]] = []
    seen: set[tuple] = set()
    for p in spec.servers:
        others = [q for q in spec.servers if q != p]
        for label, order in ((f"{p} first", [p] + others), (f"{p} last", others + [p])):
            if tuple(order) not in seen:
                seen.add(tuple(order))
                out.append((label, order))
    return out


def _probe(c: Configuration, order: list[ProcessId], t_w: Transaction) -> tuple[Trace, int, str | None]:
    reader = c.fresh_client()
    txn = _reader_txn(c, reader, t_w, None)
    req = run(c, _request(c, txn), label="probe")
    body = run(req.final, _answer(req.final, reader, order))
    tail, trouble = collect(body.final, reader, txn.txn_id)
    return req.then(body).then(tail), txn.txn_id, trouble


def _children(cfg: Configuration, t_w: Transaction, rng: random.Random | None) -> list:
    if t_w.txn_id not in cfg.txn_ids:
        return [Invoke(t_w.client, t_w)]
    procs = set(cfg.spec.servers) | {t_w.client}
    delivers = [Deliver(q[0].msg_id) for link, q in sorted(cfg.outcome.items()) if q and link[1] in procs]
    delivers.sort(key=lambda e: e.msg_id)
    servers = [Step(p) for p in cfg.spec.servers if cfg.income_of(p)]
    clients = [Step(t_w.client)] if cfg.income_of(t_w.client) or cfg.invocations.get(t_w.client) else []
    if rng is not None:
        rng.shuffle(delivers)
        rng.shuffle(servers)
    return delivers + servers + clients


def hunt(protocol, spec: SystemSpec, depth: int, seed: int = 0, *, max_nodes: int = 50_000,
         c0: Configuration | None = None) -> Witness | NoneFound:
    """Depth-first search over solo schedules of one write, probing a fresh read at every node.

    Children are ordered deliveries first, then server steps, then the writer;
    a nonzero seed shuffles within each group. Configurations already seen
    (up to message ids) are not expanded twice.
    """
    if depth <= 0:
        raise ValueError("depth must be positive")
    c0 = c0 if c0 is not None else init(spec, protocol)
    t_w = default_write(spec, protocol, max(c0.txn_ids) + 1)
    rng = random.Random(seed) if seed else None
    orders = probe_orders(spec)
    stack: list[tuple[Configuration, tuple]] = [(c0, ())]
    seen: set = set()
    nodes = probes = deepest = 0
    while stack and nodes < max_nodes:
        cfg, path = stack.pop()
        fp = cfg.fingerprint()
        if fp in seen:
            continue
        seen.add(fp)
        nodes += 1
        deepest = max(deepest, len(path))
        if t_w.txn_id in cfg.txn_ids:
            for label, order in orders:
                probes += 1
                probe, txn_id, trouble = _probe(cfg, order, t_w)
                result = probe.result_of(txn_id)
                shape = _classify(t_w, spec, result)
                if trouble is None and shape != "mixed":
                    fast = check_fast_rot(probe, txn_id, spec)
                    if fast.fast:
                        continue
                prefix = run(c0, path, label="solo")
                whole = prefix.then(probe)
                whole.label = "witness"
                verdicts = _verdicts(whole, txn_id, result)
                verdicts["fast"] = check_fast_rot(whole, txn_id, spec)
                kind = _kind_of(trouble, verdicts, shape)
                if kind is None:
                    continue
                verdicts.update(order=label, nodes=nodes, probes=probes, depth=len(path), seed=seed)
                recipe = ScheduleRecipe("probe", order[0], probe.events[0].client,
                                        [("solo", tuple(template_of(e) for e in prefix.scheduled())),
                                         ("request", tuple(template_of(e) for e in probe.scheduled()[:2])),
                                         ("answers", tuple(template_of(e) for e in probe.scheduled()[2:]))],
                                        anchor=c0, trace=whole)
                narrative = _hunt_narrative(protocol, spec, t_w, prefix, probe, label, order, result, shape, verdicts)
                return Witness(kind, whole, verdicts, narrative, recipe=recipe)
        if len(path) >= depth:
            continue
        kids = _children(cfg, t_w, rng)
        for ev in reversed(kids):
            c2, _, _ = apply_event(cfg, ev)
            stack.append((c2, path + (ev,)))
    note = "node limit reached" if stack else "search space exhausted within depth"
    return NoneFound(depth, seed, nodes, probes, deepest, note)


# --------------------------------------------------------------------------
# narratives and bundles


def frontier(prefix: Trace, t_w: Transaction) -> list[str]:
    """Which of the write's messages each server has taken in, at the end of ``prefix``."""
    cfg = prefix.final
    sent = [prefix.messages[m] for _, e in prefix.steps_of(t_w.client) for m in e.emitted]
    consumed = {m for e in prefix.events if isinstance(e, Step) for m in e.consumed}
    unread = {m.msg_id for m in cfg.delivered_unread()}
    lines = []
    for p in cfg.spec.servers:
        mine = [m for m in sent if m.dst == p]
        took = [m for m in mine if m.msg_id in consumed]
        waiting = [m for m in mine if m.msg_id not in consumed]
        def fmt(ms):
            return ", ".join(f"m{m.msg_id} {'+'.join(x.kind for x in m.parts)}" for m in ms) or "nothing"
        state = "unread" if any(m.msg_id in unread for m in waiting) else "in transit"
        lines.append(f"{p}: took in {fmt(took)}; {state}: {fmt(waiting)}" if waiting else f"{p}: took in {fmt(took)}")
    return lines


def _fmt_result(result: dict | None, t_w: Transaction, spec: SystemSpec) -> str:
    if result is None:
        return "no answer"
    new = dict(t_w.writes)
    parts = []
    for o, v in result.items():
        tag = "new" if new.get(o) == v else "initial" if spec.initial_values.get(o) == v else "other"
        parts.append(f"{o}={v} ({tag})")
    return ", ".join(parts)


def _verdict_lines(verdicts: dict) -> list[str]:
    out = []
    ch: Verdict = verdicts.get("checker")
    if ch is not None:
        out.append(f"causal checker: {ch.outcome}" + (f" ({ch.note})" if ch.note else ""))
    o = verdicts.get("oracle")
    out.append(f"mixed-read oracle: {o.describe() if o is not None else 'no mixed read'}")
    fast = verdicts.get("fast")
    if fast is not None:
        out.append(f"read properties: {fast.line()}")
    return out


def _hunt_narrative(protocol, spec, t_w, prefix, probe, label, order, result, shape, verdicts) -> str:
    writes = ", ".join(f"{o}={v}" for o, v in t_w.writes)
    lines = [
        f"protocol: {protocol.describe()}",
        f"search: seed {verdicts['seed']}, {verdicts['nodes']} nodes, {verdicts['probes']} probes",
        f"solo write T{t_w.txn_id} by {t_w.client}: {writes}",
        f"partial-delivery frontier after {len(prefix.scheduled())} solo events:",
        *[f"  {x}" for x in frontier(prefix, t_w)],
        f"probe read T{probe.events[0].txn.txn_id} by {probe.events[0].client}, {label}",
        f"  segments: request, answers from {' then '.join(map(str, order))}, tail (reader collects)",
        f"result: {_fmt_result(result, t_w, spec)} -> {shape}",
        *_verdict_lines(verdicts),
    ]
    return "\n".join(lines) + "\n"


def _gamma_narrative(protocol, k, recipe, spliced, result, shape, verdicts, rows) -> str:
    t_w_line = f"chain rounds completed before the break: {len(rows)}"
    lines = [
        f"protocol: {protocol.describe()}",
        f"round k={k}: no message from {server(k % 2)} reaches {_other(server(k % 2))} in the solo run",
        t_w_line,
        *[f"  {r.line()}" for r in rows],
        f"assembled read: {recipe.describe()}",
        f"  sigma_old: reader {recipe.reader} asks, {recipe.focus} answers before the write moves on",
        f"  beta_new: solo run cut after event {spliced.facts['cut']}, "
        f"{spliced.facts['dropped']} events of {spliced.facts['excluded']} dropped",
        f"  sigma_new: {_other(recipe.focus)} answers after the spliced run",
        f"result: {result} -> {shape}",
        *_verdict_lines(verdicts),
    ]
    return "\n".join(lines) + "\n"


def _starvation_narrative(protocol, rows, note: str = "") -> str:
    lines = [f"protocol: {protocol.describe()}",
             f"message chain: {len(rows)} rounds, written values not visible after any of them"]
    if note:
        lines.append(note)
    lines += [f"  {r.line()}" for r in rows]
    return "\n".join(lines) + "\n"


def replays(trace: Trace) -> bool:
    """Re-running the scheduled events from the start reproduces the trace line for line."""
    again = run(trace.start, trace.scheduled(), label=trace.label)
    return again.dumps() == trace.dumps()


def write_bundle(w: Witness, out_dir: str) -> dict[str, str]:
    """trace.tsv, history.tsv, verdict.txt and narrative.txt under ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    whole = full_trace(w.trace)
    paths = {name: os.path.join(out_dir, name) for name in ("trace.tsv", "history.tsv", "verdict.txt", "narrative.txt")}
    whole.dump(paths["trace.tsv"])
    with open(paths["history.tsv"], "w") as fh:
        fh.write(dumps_history(extract_history(w.trace)))
    with open(paths["verdict.txt"], "w") as fh:
        fh.write(f"kind\t{w.kind}\n")
        for line in _verdict_lines(w.verdicts):
            fh.write(line + "\n")
        for name, ok in w.checks:
            fh.write(f"check\t{'ok' if ok else 'FAILED'}\t{name}\n")
    with open(paths["narrative.txt"], "w") as fh:
        fh.write(w.narrative)
    return paths
