from dataclasses import dataclass, field

import pytest
from hypothesis import given, strategies as st

from conftest import c0_for
from fastrot.adversary import (
    NoneFound,
    NotAllFour,
    PreconditionNotVisible,
    PreconditionVisible,
    SpliceIllegal,
    Witness,
    build_contradiction,
    construct_gamma_new,
    construct_gamma_old,
    hunt,
    replays,
    repro_lemma3,
    solo_run,
    splice_beta_new,
    values_visible,
    write_bundle,
)
from fastrot.history import check_causal_consistency, extract_history, loads_history, mixed_read_oracle
from fastrot.kernel import StepResult, init, run
from fastrot.model import SystemSpec, part, server
from fastrot.properties import default_write
from fastrot.protocols import ProtocolSpec, make_protocol
from fastrot.protocols.base import Outbox, parts_of
from fastrot.protocols.strawman import StrawClient


def solo_beta(name, **params):
    c0 = c0_for(name, **params)
    t_w = default_write(c0.spec, c0.protocol, max(c0.txn_ids) + 1)
    return solo_run(c0, t_w, until=values_visible(t_w)), t_w


# --------------------------------------------------------------------------
# the reader's two schedules


@pytest.mark.parametrize("name", ["eager", "commit_wait", "wren", "cops-snow"])
def test_gamma_old_at_start_reads_initial_values(name):
    c0 = c0_for(name)
    for p in c0.spec.servers:
        trace, recipe = construct_gamma_old(c0, p)
        assert recipe.facts["all_initial"]
        assert set(recipe.facts["touches"]) <= {str(recipe.reader), str(p)}
        assert replays(trace)


def test_gamma_old_on_the_ring_reads_initial_values():
    c0 = c0_for("eager", ring=3)
    _, recipe = construct_gamma_old(c0, server(0))
    assert recipe.facts["result"] == dict(c0.spec.initial_values)


def test_gamma_old_refuses_visible_values():
    beta, t_w = solo_beta("eager")
    with pytest.raises(PreconditionVisible):
        construct_gamma_old(beta.final, server(0), t_w=t_w)


def test_gamma_new_after_full_delivery_reads_new_values():
    beta, t_w = solo_beta("eager")
    for p in beta.final.spec.servers:
        trace, recipe, c_new = construct_gamma_new(beta.final, p, t_w=t_w)
        assert recipe.facts["all_new"]
        assert trace.result_of(recipe.facts["txn_id"]) == dict(t_w.writes)
        assert recipe.anchor is c_new


def test_gamma_new_on_wren_once_visible():
    beta, t_w = solo_beta("wren")
    assert values_visible(t_w)(beta.final)
    _, recipe, _ = construct_gamma_new(beta.final, server(1), t_w=t_w)
    assert recipe.facts["all_new"]


def test_gamma_new_needs_visible_values():
    c0 = c0_for("eager")
    with pytest.raises(PreconditionNotVisible):
        construct_gamma_new(c0, server(0))
    t_w = default_write(c0.spec, c0.protocol, 99)
    with pytest.raises(PreconditionNotVisible):
        construct_gamma_new(c0, server(0), t_w=t_w)


# --------------------------------------------------------------------------
# splicing


def test_splice_with_nothing_to_drop():
    beta, t_w = solo_beta("eager")
    recipe = splice_beta_new(beta, server(1), server(0), t_w.client)
    assert recipe.facts == {"cut": 2, "dropped": 0, "kept_suffix": 1, "focus_equal": True, "excluded": "p0"}


def test_splice_of_early_commit_wait_run():
    beta, t_w = solo_beta("commit_wait")
    short = run(beta.start, beta.scheduled()[:7])
    recipe = splice_beta_new(short, server(1), server(0), t_w.client)
    assert recipe.facts["focus_equal"]
    assert server(0) not in recipe.processes()


def test_splice_past_the_first_ack_is_illegal():
    beta, t_w = solo_beta("commit_wait")
    with pytest.raises(SpliceIllegal) as err:
        splice_beta_new(beta, server(1), server(0), t_w.client)
    assert err.value.event.src == server(0)


@dataclass
class RelayState:
    store: dict = field(default_factory=dict)


class RelayServer:
    """The primary of the first object takes the whole write and relays the rest."""

    def initial_state(self, pid, spec):
        return RelayState()

    def step(self, st, ctx, invocations, inbox):
        out = Outbox()
        for src, p in parts_of(inbox):
            txn = p.get("txn")
            if p.kind == "read":
                out.add(src, part("read_resp", tuple((o, st.store[o]) for o in p.get("objs") if o in st.store), txn=txn))
            elif p.kind in ("write", "relay"):
                mine = tuple((o, v) for o, v in p.values if ctx.pid in ctx.spec.holders(o))
                st.store.update(mine)
                rest = [(o, v) for o, v in p.values if (o, v) not in mine]
                for q in sorted({q for o, _ in rest for q in ctx.spec.holders(o)}):
                    out.add(q, part("relay", tuple((o, v) for o, v in rest if q in ctx.spec.holders(o)), txn=txn))
                if p.kind == "write":
                    out.add(src, part("write_ack", txn=txn))
        return StepResult(st, out.sends())


class RelayClient(StrawClient):
    def _send_stage(self, st, ctx, out):
        first = ctx.spec.holders(st.txn.writes[0][0])[0]
        st.waiting = {first}
        out.add(first, part("write", st.txn.writes, txn=st.txn.txn_id))


RELAY = ProtocolSpec("relay", RelayClient("eager"), RelayServer(), frozenset("RNVW"))


def test_relayed_write_cannot_be_spliced():
    c0 = init(SystemSpec.disjoint_spec(), RELAY)
    assert c0.state_of(server(1)).store == {"X1": "x1_in"}
    t_w = default_write(c0.spec, RELAY, max(c0.txn_ids) + 1)
    beta = solo_run(c0, t_w, until=values_visible(t_w))
    assert [m.parts[0].kind for m in beta.final.income_of(server(1))] == ["relay"]
    with pytest.raises(SpliceIllegal):
        splice_beta_new(beta, server(1), server(0), t_w.client)


# --------------------------------------------------------------------------
# the message chain


def test_eager_breaks_in_the_first_round():
    w = build_contradiction(make_protocol("eager"), SystemSpec.disjoint_spec(), 1)
    assert w.kind == "MixedRead"
    assert w.verdicts["result"] == {"X0": "x0", "X1": "x1_in"}
    assert w.verdicts["checker"].outcome == "Inconsistent"
    assert w.checks and w.checks_hold
    assert replays(w.trace)


def test_commit_wait_chain_holds_for_five_rounds():
    rep = repro_lemma3(make_protocol("commit_wait"), k_max=5)
    assert [r.k for r in rep.rows] == [1, 2, 3, 4, 5]
    assert rep.complete and rep.census_grows
    assert all(r.link.message.src == server(r.k % 2) for r in rep.rows)
    assert rep.witness.kind == "VisibilityStarvation"


@pytest.mark.parametrize("phases", [1, 2])
def test_short_commit_wait_breaks_with_checks_holding(phases):
    w = build_contradiction(make_protocol("commit_wait", phases=phases), SystemSpec.disjoint_spec(), 2 * phases + 2)
    assert w.kind == "MixedRead"
    assert w.checks_hold
    assert check_causal_consistency(extract_history(w.trace)).outcome == "Inconsistent"
    assert replays(w.trace)


def test_chain_refuses_protocols_without_all_four():
    for name in ("wren", "cops-snow", "cops-rw"):
        with pytest.raises(NotAllFour):
            build_contradiction(make_protocol(name), SystemSpec.disjoint_spec(), 1)


def test_repro_with_no_rounds():
    rep = repro_lemma3(make_protocol("commit_wait"), k_max=0)
    assert rep.rows == [] and rep.witness is None and rep.lines() == []


# --------------------------------------------------------------------------
# search


@pytest.mark.parametrize("name", ["eager", "commit_wait"])
def test_hunt_finds_mixed_read(name, two_servers):
    w = hunt(make_protocol(name), two_servers, 40)
    assert isinstance(w, Witness) and w.kind == "MixedRead"
    assert replays(w.trace)
    assert w.verdicts["checker"].outcome == "Inconsistent"
    assert "frontier" in w.narrative


def test_hunt_on_ring(ring3):
    w = hunt(make_protocol("eager"), ring3, 40)
    assert w.kind == "MixedRead"
    new = {"X0": "x0", "X1": "x1", "X2": "x2"}
    fresh = {o for o, v in w.verdicts["result"].items() if new[o] == v}
    assert fresh and fresh != set(new)


def test_hunt_on_protocols_that_give_something_up(two_servers):
    assert isinstance(hunt(make_protocol("cops-snow"), two_servers, 12), NoneFound)
    assert hunt(make_protocol("wren"), two_servers, 12).kind == "ExtraRound"
    assert hunt(make_protocol("cops-rw"), two_servers, 12).kind == "MultiValue"


def test_hunt_depth_bounds(two_servers):
    res = hunt(make_protocol("eager"), two_servers, 1)
    assert isinstance(res, NoneFound) and res.deepest == 1
    with pytest.raises(ValueError):
        hunt(make_protocol("eager"), two_servers, 0)


def test_bundle_round_trip(tmp_path, two_servers):
    w = hunt(make_protocol("eager"), two_servers, 40)
    paths = write_bundle(w, str(tmp_path))
    h = loads_history(open(paths["history.tsv"]).read())
    assert check_causal_consistency(h).outcome == "Inconsistent"
    assert mixed_read_oracle(h) is not None
    assert open(paths["verdict.txt"]).readline() == "kind\tMixedRead\n"


@given(st.integers(0, 30))
def test_seeded_hunts_self_validate(seed):
    w = hunt(make_protocol("eager"), SystemSpec.disjoint_spec(), 40, seed)
    assert w.kind == "MixedRead" and replays(w.trace)
    assert check_causal_consistency(extract_history(w.trace)).outcome == "Inconsistent"


@given(st.integers(1, 4))
def test_short_commit_wait_contradiction_conforms(phases):
    """Every protocol claiming all four must break: within 2*phases+2 rounds of the chain, with every check holding."""
    w = build_contradiction(make_protocol("commit_wait", phases=phases), SystemSpec.disjoint_spec(), 2 * phases + 2)
    assert w.kind != "VisibilityStarvation" or len(w.verdicts["rows"]) == 2 * phases + 2
    assert w.checks_hold and replays(w.trace)
