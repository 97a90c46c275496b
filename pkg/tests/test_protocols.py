import copy

import pytest

from conftest import c0_for
from fastrot.history import check_causal_consistency, extract_history
from fastrot.kernel import DeliverNext, IllegalEvent, Invoke, Step, StepContext, drain, fair_run, run
from fastrot.model import InvalidSpec, SystemSpec, Transaction, client, server
from fastrot.protocols import PROTOCOLS, ProtocolSpec, WriteArityExceeded, make_protocol
from fastrot.protocols.wren import WrenServer

DECLARED = {
    "cops-snow": "R+N+V",
    "wren": "N+V+W",
    "cops-rw": "R+N+W",
    "strawman-eager": "R+N+V+W",
    "strawman-commit_wait": "R+N+V+W",
}


def serve(c, txn):
    tr = run(c, [Invoke(txn.client, txn)])
    return tr.then(drain(tr.final))


@pytest.mark.parametrize("name", PROTOCOLS)
def test_declarations(name):
    p = make_protocol(name)
    assert p.declared_text() == DECLARED[name]
    assert (p.write_arity_limit == 1) == ("W" not in p.declared)


def test_unknown_names_and_parameters():
    with pytest.raises(ValueError):
        make_protocol("spanner")
    with pytest.raises(ValueError):
        make_protocol("wren", gossip_period=0)
    with pytest.raises(ValueError):
        make_protocol("strawman-commit_wait", phases=0)
    with pytest.raises(ValueError):
        ProtocolSpec("bad", None, None, frozenset("RNV"), write_arity_limit=None)


def test_cops_snow_rejects_multi_object_write():
    c0 = c0_for("cops-snow")
    t_w = Transaction(10, client(2), writes=(("X0", "x0"), ("X1", "x1")))
    with pytest.raises(IllegalEvent) as err:
        run(c0, [Invoke(client(2), t_w)])
    assert isinstance(err.value.__cause__, WriteArityExceeded)


def test_three_property_protocols_are_single_copy():
    with pytest.raises(InvalidSpec):
        make_protocol("wren").check_spec(SystemSpec.ring_spec(3))
    make_protocol("strawman-eager").check_spec(SystemSpec.ring_spec(3))


@pytest.mark.parametrize("name", PROTOCOLS)
def test_machines_are_pure(name):
    """Feeding the same state and input twice gives the same output, step by step."""
    c0 = c0_for(name)
    writes = (("X0", "a"), ("X1", "b"))[:c0.protocol.write_arity_limit or 2]
    work = [Transaction(10, client(2), writes=writes), Transaction(11, client(3), reads=("X0", "X1")),
            Transaction(12, client(4), reads=("X1",))]
    tr = fair_run(c0, 3, 400, workload=work)
    cfg = tr.start
    for ev in tr.scheduled():
        if isinstance(ev, Step):
            p = ev.process
            machine = cfg.protocol.machine_for(p)
            args = (StepContext(p, cfg.spec), cfg.invocations.get(p, ()), cfg.income_of(p))
            first = machine.step(copy.deepcopy(cfg.state_of(p)), *args)
            second = machine.step(copy.deepcopy(cfg.state_of(p)), *args)
            assert repr(first) == repr(second)
        cfg = run(cfg, [ev]).final
    assert run(tr.start, tr.scheduled()).dumps() == tr.dumps()


def test_wren_client_reads_own_write_from_cache():
    c0 = c0_for("wren")
    tr = serve(c0, Transaction(10, client(2), writes=(("X0", "a"),)))
    tr = tr.then(serve(tr.final, Transaction(11, client(2), reads=("X0", "X1"))))
    assert tr.result_of(11) == {"X0": "a", "X1": "x1_in"}
    p0: WrenServer = tr.final.state_of(server(0))
    snapshot = tr.final.state_of(client(2)).snapshot
    # the server holds the version, but above the reader's snapshot: the answer came from the cache
    assert max(ts for ts, *_ in p0.versions["X0"]) > snapshot
    assert check_causal_consistency(extract_history(tr)).outcome == "Consistent"


def test_wren_gossip_advances_the_cutoff():
    c0 = c0_for("wren")
    tr = serve(c0, Transaction(10, client(2), writes=(("X0", "a"), ("X1", "b"))))
    before = tr.final.state_of(server(0)).cutoff(server(0), c0.spec)
    tr = tr.then(fair_run(tr.final, 0, 60))
    after = tr.final.state_of(server(0)).cutoff(server(0), c0.spec)
    assert after > before
    tr = tr.then(serve(tr.final, Transaction(11, client(3), reads=("X0", "X1"))))
    assert tr.result_of(11) == {"X0": "a", "X1": "b"}


def test_cops_snow_hides_new_version_from_reads_that_saw_the_old_one():
    c0 = c0_for("cops-snow")
    r = Transaction(10, client(3), reads=("X0", "X1"))
    # the read reaches p1 first and sees the initial X1
    tr = run(c0, [Invoke(client(3), r), Step(client(3)), DeliverNext(client(3), server(1)), Step(server(1))])
    # the writer, who read the initial values, now writes X0; the dependency check visits p1
    tr = tr.then(serve(tr.final, Transaction(11, client(2), writes=(("X0", "x0"),))))
    tr = tr.then(drain(tr.final))
    assert tr.result_of(10) == {"X0": "x0_in", "X1": "x1_in"}
    assert check_causal_consistency(extract_history(tr)).outcome == "Consistent"


def test_eager_synchronous_schedule_is_consistent():
    c0 = c0_for("eager")
    tr = serve(c0, Transaction(10, client(2), writes=(("X0", "x0"), ("X1", "x1"))))
    tr = tr.then(serve(tr.final, Transaction(11, client(3), reads=("X0", "X1"))))
    assert tr.result_of(11) == {"X0": "x0", "X1": "x1"}
    assert check_causal_consistency(extract_history(tr)).outcome == "Consistent"


def test_commit_wait_round_count():
    c0 = c0_for("commit_wait")
    tr = serve(c0, Transaction(10, client(2), writes=(("X0", "x0"), ("X1", "x1"))))
    kinds = [p.kind for m in tr.sent_by(client(2)) for p in m.parts]
    assert kinds == ["prepare"] * 2 + ["phase"] * 4 + ["commit"] * 2
