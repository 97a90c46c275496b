import itertools
import time

import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES, c0_for
from fastrot.history import (
    History,
    OpEvent,
    Relation,
    ShapeMismatch,
    UnsourcedValue,
    causal_of,
    check_causal_consistency,
    comm_of,
    complete_of,
    dumps_history,
    extract_history,
    is_legal_in,
    loads_history,
    mixed_read_oracle,
    reads_from_of,
    serial_history,
    validate_witness,
)
from fastrot.kernel import Invoke, Step, Trace, run
from fastrot.model import ProcessId, Transaction, client

HISTORIES = sorted((FIXTURES / "histories").glob("*.tsv"))
I2 = {"X0": "x0_in", "X1": "x1_in"}


def expected_of(path):
    return path.read_text().splitlines()[0].split(": ", 1)[1]


def split_read(reader_sees):
    """Initializers, the writer's read, the two-object write, then one read."""
    txns = [(0, "c0", [("w", "X0", "x0_in")]), (1, "c1", [("w", "X1", "x1_in")]),
            (2, "c2", [("r", "X0", "x0_in"), ("r", "X1", "x1_in")]),
            (3, "c2", [("w", "X0", "x0"), ("w", "X1", "x1")]),
            (4, "c3", [("r", o, v) for o, v in reader_sees.items()])]
    return serial_history(txns)


# --------------------------------------------------------------------------
# the labelled corpus


def test_corpus_is_big_enough():
    small = [p for p in HISTORIES if expected_of(p) in ("Consistent", "Inconsistent")]
    assert len(small) >= 20
    assert {"mixed_new_x1.tsv", "twin_all_initial.tsv"} <= {p.name for p in HISTORIES}


@pytest.mark.parametrize("path", HISTORIES, ids=lambda p: p.stem)
def test_corpus_verdicts(path):
    h = loads_history(path.read_text())
    want = expected_of(path)
    if want == "UnsourcedValue":
        with pytest.raises(UnsourcedValue):
            check_causal_consistency(h)
        return
    start = time.perf_counter()
    assert check_causal_consistency(h).outcome == want
    assert time.perf_counter() - start < 1.0


def test_history_files_round_trip():
    for path in HISTORIES:
        h = loads_history(path.read_text())
        assert loads_history(dumps_history(h)) == h


def test_malformed_history_line():
    with pytest.raises(ValueError):
        loads_history("invoke read 1 c0 X0\n")
    with pytest.raises(ValueError):
        loads_history("invoke scan 1 c0 X0 -\n")


# --------------------------------------------------------------------------
# extraction and projections


def test_empty_trace_gives_empty_history():
    c0 = c0_for("eager")
    h = extract_history(Trace(c0), include_bootstrap=False)
    assert h.events == ()


def test_bootstrap_history_has_initializers_and_writer_read():
    c0 = c0_for("eager")
    txns = extract_history(Trace(c0)).transactions()
    assert [t.txn_id for t in txns] == [0, 1, 2]
    assert txns[2].client == client(2)
    assert txns[2].observed == {"X0": "x0_in", "X1": "x1_in"}


def test_unacked_write_appears_without_response():
    c0 = c0_for("eager")
    t = Transaction(9, client(2), writes=(("X0", "a"),))
    h = extract_history(run(c0, [Invoke(client(2), t), Step(client(2))]))
    mine = [e for e in h.events if e.txn == 9]
    assert [e.kind for e in mine] == ["invoke"]


def test_complete_of_identity_and_drop():
    full = serial_history([(1, "c0", [("w", "X0", "a")]), (2, "c1", [("r", "X0", "a")])], I2)
    assert complete_of(full) == full
    partial = serial_history([(1, "c0", [("w", "X0", "a")]), (2, "c1", [("r", "X0", "a")])], I2, unanswered=[2])
    assert [t.txn_id for t in complete_of(partial).transactions()] == [1]


@given(st.lists(st.tuples(st.sampled_from(["c0", "c1", "c2"]), st.booleans(), st.booleans()), max_size=6))
def test_complete_of_matches_per_event_filter(spec):
    txns, skip = [], []
    for i, (cl, is_write, unanswered) in enumerate(spec, 1):
        txns.append((i, cl, [("w" if is_write else "r", "X0", "x0_in")]))
        if unanswered:
            skip.append(i)
    h = serial_history(txns, I2, skip)
    answered = {e.txn for e in h.events if e.kind == "response"}
    expect = tuple(e for e in h.events if e.txn in answered)
    assert complete_of(h).events == expect


def test_comm_of_appends_only_write_acks():
    h = serial_history([(1, "c0", [("w", "X0", "a")]), (2, "c1", [("r", "X0", "a")])], I2)
    assert comm_of(h) == h
    pend = serial_history([(1, "c0", [("w", "X0", "a"), ("w", "X1", "b")])], I2, unanswered=[1])
    extra = comm_of(pend).events[len(pend.events):]
    assert [(e.kind, e.op, e.obj) for e in extra] == [("response", "write", "X0"), ("response", "write", "X1")]
    read = serial_history([(1, "c1", [("r", "X0", "x0_in")])], I2, unanswered=[1])
    assert comm_of(read) == read
    assert complete_of(comm_of(read)).events == ()


# --------------------------------------------------------------------------
# legality and relations


def _seq(h):
    return complete_of(comm_of(h)).transactions()


def test_is_legal_in_last_writer_and_mixed():
    good = _seq(split_read({"X0": "x0", "X1": "x1"}))
    assert is_legal_in(good, 4)
    bad = _seq(split_read({"X0": "x0_in", "X1": "x1"}))
    assert not is_legal_in(bad, 4)


def test_is_legal_in_reads_own_write():
    seq = _seq(serial_history([(1, "c0", [("w", "X0", "a"), ("r", "X0", "a")])], I2))
    assert is_legal_in(seq, 1, I2)


def test_reads_from_examples():
    seq = _seq(serial_history([(1, "c0", [("w", "X0", "a")]), (2, "c1", [("r", "X0", "a")])], I2))
    assert reads_from_of(seq, I2).edges == {(1, 2)}
    boot = _seq(split_read({"X0": "x0", "X1": "x1"}))
    assert (0, 2) in reads_from_of(boot).edges
    assert (1, 2) in reads_from_of(boot).edges
    with pytest.raises(UnsourcedValue):
        reads_from_of(_seq(serial_history([(1, "c1", [("r", "X0", "zz")])], I2)), I2)


@given(st.lists(st.tuples(st.booleans(), st.sampled_from(["a", "b"])), min_size=1, max_size=7))
def test_reads_from_picks_last_preceding_writer(ops):
    txns = [(i, f"c{i % 3}", [("w" if w else "r", "X0", v)]) for i, (w, v) in enumerate(ops, 1)]
    written = set()
    for i, (w, v) in enumerate(ops, 1):
        if not w and v not in written:
            txns[i - 1] = (i, f"c{i % 3}", [("r", "X0", "x0_in")])
        if w:
            written.add(v)
    seq = _seq(serial_history(txns, I2))
    want = set()
    for j, t in enumerate(seq):
        for o, v in t.external_reads():
            for earlier in reversed(seq[:j]):
                if earlier.writes.get(o) == v:
                    want.add((earlier.txn_id, t.txn_id))
                    break
    assert reads_from_of(seq, I2).edges == want


def test_causal_single_client_is_program_order():
    h = serial_history([(1, "c0", [("w", "X0", "a")]), (2, "c0", [("w", "X0", "b")]), (3, "c0", [("r", "X1", "x1_in")])], I2)
    rel = causal_of(_seq(h), Relation("reads_from", frozenset()))
    assert rel.edges == {(1, 2), (2, 3), (1, 3)} and not rel.cyclic


def test_causal_independent_clients_have_no_cross_edges():
    h = serial_history([(1, "c0", [("w", "X0", "a")]), (2, "c1", [("w", "X1", "b")])], I2)
    assert causal_of(_seq(h), Relation("reads_from", frozenset())).edges == set()


def test_causal_reports_cycles():
    h = split_read({"X0": "x0_in", "X1": "x1"})
    # the writer's read pointing at its own later write closes a loop with program order
    rel = causal_of(_seq(h), Relation("reads_from", frozenset({(3, 2)})))
    assert rel.cyclic


def test_split_read_checker_outcomes():
    assert check_causal_consistency(split_read({"X0": "x0", "X1": "x1"})).outcome == "Consistent"
    assert check_causal_consistency(split_read({"X0": "x0_in", "X1": "x1"})).outcome == "Inconsistent"


def test_nine_transactions_exhaust_default_cap():
    h = serial_history([(i, f"c{i % 3}", [("w", "X0", f"v{i}")]) for i in range(1, 10)], I2)
    v = check_causal_consistency(h)
    assert v.outcome == "Exhausted"
    assert check_causal_consistency(h, cap=9).outcome == "Consistent"


# --------------------------------------------------------------------------
# the mixed-read oracle


def test_oracle_examples():
    assert mixed_read_oracle(split_read({"X0": "x0", "X1": "x1"})) is None
    v = mixed_read_oracle(split_read({"X0": "x0_in", "X1": "x1"}))
    assert v is not None and v.new == ("X1",) and v.old == ("X0",)


def test_oracle_three_objects_two_new_one_initial():
    h = loads_history((FIXTURES / "histories" / "three_two_new_one_initial.tsv").read_text())
    v = mixed_read_oracle(h)
    assert v.new == ("X0", "X1") and v.old == ("X2",)


def test_oracle_rejects_non_canonical_shape():
    with pytest.raises(ShapeMismatch):
        mixed_read_oracle(serial_history([(1, "c0", [("w", "X0", "a")])], I2))


def _canonical(n, reader_new):
    objs = [f"X{i}" for i in range(n)]
    txns = [(i, f"c{i}", [("w", o, f"x{i}_in")]) for i, o in enumerate(objs)]
    txns.append((n, f"c{n}", [("r", o, f"x{i}_in") for i, o in enumerate(objs)]))
    txns.append((n + 1, f"c{n}", [("w", o, f"x{i}") for i, o in enumerate(objs)]))
    txns.append((n + 2, f"c{n + 1}", [("r", o, f"x{i}" if new else f"x{i}_in")
                                       for i, (o, new) in enumerate(zip(objs, reader_new))]))
    return serial_history(txns)


@given(st.integers(2, 3).flatmap(lambda n: st.lists(st.booleans(), min_size=n, max_size=n)))
def test_oracle_violation_implies_checker_inconsistent(reader_new):
    h = _canonical(len(reader_new), reader_new)
    v = mixed_read_oracle(h)
    verdict = check_causal_consistency(h)
    assert (v is not None) == (any(reader_new) and not all(reader_new))
    if v is not None:
        assert verdict.outcome == "Inconsistent"
    else:
        assert verdict.outcome == "Consistent"


# --------------------------------------------------------------------------
# invariants against an independent brute-force reading of the definition


def _legal(seq, txn, initial):
    cur = {}
    for t in seq:
        if t.txn_id == txn.txn_id:
            own = {}
            for kind, o, v in t.ops:
                if kind == "write":
                    own[o] = v
                elif v != own.get(o, cur.get(o, initial.get(o))):
                    return False
            return True
        cur.update(t.writes)
    raise AssertionError


def naive_consistent(h):
    """Every equivalent order S, its reads-from, then every sigma_i: no pruning at all."""
    txns = complete_of(comm_of(h)).transactions()
    written = {(o, v) for t in txns for o, v in t.writes.items()}
    initial = {o: v for o, v in h.initial if (o, v) not in written}
    ids = [t.txn_id for t in txns]
    po = set()
    for a, b in itertools.combinations(txns, 2):
        if a.client == b.client:
            po.add((a.txn_id, b.txn_id))

    def respects(order, rel):
        pos = {t.txn_id: i for i, t in enumerate(order)}
        return all(pos[a] < pos[b] for a, b in rel)

    clients = sorted({t.client for t in txns})
    for s in itertools.permutations(txns):
        if not respects(s, po):
            continue
        rf, ok = set(), True
        for j, t in enumerate(s):
            for o, v in t.external_reads():
                src = next((e.txn_id for e in reversed(s[:j]) if e.writes.get(o) == v), None)
                if src is not None:
                    rf.add((src, t.txn_id))
                elif initial.get(o) != v:
                    ok = False
        if not ok:
            continue
        closure = set(po | rf)
        while True:
            more = {(a, d) for a, b in closure for c, d in closure if b == c} - closure
            if not more:
                break
            closure |= more
        if any(a == b for a, b in closure):
            continue
        if all(any(respects(sig, closure) and all(_legal(sig, t, initial) for t in txns if t.client == c)
                   for sig in itertools.permutations(txns))
               for c in clients):
            return True
    return False


@st.composite
def small_histories(draw):
    n = draw(st.integers(1, 4))
    txns, values = [], {"X0": ["x0_in"], "X1": ["x1_in"]}
    for i in range(1, n + 1):
        cl = draw(st.sampled_from(["c0", "c1", "c2"]))
        objs = draw(st.sampled_from([["X0"], ["X1"], ["X0", "X1"]]))
        if draw(st.booleans()):
            ops = [("w", o, draw(st.sampled_from(["a", "b"])) + o[1]) for o in objs]
            for _, o, v in ops:
                values[o].append(v)
        else:
            ops = [("r", o, draw(st.sampled_from(values[o]))) for o in objs]
        txns.append((i, cl, ops))
    return serial_history(txns, I2)


@settings(max_examples=150)
@given(small_histories())
def test_checker_matches_brute_force(h):
    assert (check_causal_consistency(h).outcome == "Consistent") == naive_consistent(h)


@pytest.mark.parametrize("path", [p for p in HISTORIES if expected_of(p) in ("Consistent", "Inconsistent")],
                         ids=lambda p: p.stem)
def test_corpus_labels_agree_with_brute_force(path):
    h = loads_history(path.read_text())
    if len(complete_of(comm_of(h)).transactions()) > 6:
        pytest.skip("too many transactions for the brute force")
    assert naive_consistent(h) == (expected_of(path) == "Consistent")


@given(small_histories())
def test_consistent_witnesses_revalidate(h):
    v = check_causal_consistency(h)
    if v.outcome != "Consistent":
        return
    txns = complete_of(comm_of(h)).transactions()
    written = {(o, x) for t in txns for o, x in t.writes.items()}
    initial = {o: x for o, x in h.initial if (o, x) not in written}
    for c, sigma in v.witness.items():
        assert validate_witness(txns, v.causal, c, sigma, initial) is None


@given(small_histories(), st.integers(0, 3))
def test_acks_never_turn_consistent_into_inconsistent(h, drop):
    writes = [e for e in h.events if e.kind == "response" and e.op == "write"]
    victim = {(e.txn, e.obj) for e in writes[:drop]}
    stripped = History(tuple(e for e in h.events if not (e.kind == "response" and (e.txn, e.obj) in victim)), h.initial)
    before = check_causal_consistency(stripped).outcome
    after = check_causal_consistency(comm_of(stripped)).outcome
    assert not (before == "Consistent" and after == "Inconsistent")
