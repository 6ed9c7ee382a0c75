"""Failure localization on scripted testimony tables."""

import pytest

from slidesim.core import Outcome
from slidesim.endpoints import (
    Entry,
    NoImbalanceFound,
    NoViolatorFound,
    PairOutcome,
    SenderEdgeRecord,
    TransmissionReport,
    detect_f2,
    detect_f3,
    reconcile_pair,
)
from slidesim.endpoints import TestimonyTable as _Table

N = 97
Z3 = (0, 0, 0)


def _entry(phi_out=0, phi_in=0, phi_self=0, psi_self=Z3, psi_out=Z3,
           psi_in=Z3, stamp=1):
    return Entry(phi_out, phi_in, phi_self, psi_self, psi_out, psi_in, stamp)


def _table(entries, sender_edges=None, n=4, participants=None, C=192):
    return _Table(
        n=n, sender=0, receiver=n - 1, N=N, C=C,
        participants=frozenset(participants if participants is not None
                               else range(n)),
        entries=entries, sender_edges=sender_edges or {},
    )


# ---------------------------------------------------------------- reconcile


def test_reconcile_identical_claims():
    out = reconcile_pair((5, 0, 3), 9, (5, 0, 3), 4, N)
    assert out == PairOutcome(agreed=(5, 0, 3))


def test_reconcile_one_coordinate_fresher_a_wins():
    out = reconcile_pair((5, 0, 3), 9, (5, 0, 1), 4, N)
    assert out.agreed == (5, 0, 3)
    assert out.adjust_a is None
    assert out.adjust_b == (0, 0, 2)
    assert out.eliminated == ()


def test_reconcile_one_coordinate_fresher_b_wins():
    out = reconcile_pair((5, 0, 1), 4, (5, 0, 3), 9, N)
    assert out.agreed == (5, 0, 3)
    assert out.adjust_a == (0, 0, 2)
    assert out.adjust_b is None


def test_reconcile_one_coordinate_stamp_tie_eliminates_both():
    # a single-slot gap with equal stamps has no innocent explanation
    out = reconcile_pair((5, 0, 3), 4, (5, 0, 1), 4, N)
    assert out.eliminated == ("a", "b")


def test_reconcile_wide_gap_eliminates_staler():
    out = reconcile_pair((9, 9, 9), 3, (1, 2, 3), 8, N)
    assert out.agreed == (1, 2, 3)
    assert out.eliminated == ("a",)
    out = reconcile_pair((9, 9, 9), 8, (1, 2, 3), 3, N)
    assert out.agreed == (9, 9, 9)
    assert out.eliminated == ("b",)


def test_reconcile_wide_gap_stamp_tie_eliminates_both():
    out = reconcile_pair((9, 9, 9), 5, (1, 2, 3), 5, N)
    assert out.eliminated == ("a", "b")


# ---------------------------------------------------------------- detect_f2


def test_f2_names_duplicator():
    # 0 -> 1 -> 2 -> 3 chain; node 2 booked 200 more drop out than in
    entries = {
        (1, 0): _entry(phi_in=300),
        (1, 2): _entry(phi_out=300),
        (2, 1): _entry(phi_in=300),
        (2, 3): _entry(phi_out=500),
        (3, 2): _entry(phi_in=500),
    }
    t = _table(entries, {1: SenderEdgeRecord(300, Z3, 1)})
    assert detect_f2(t) == 2


def test_f2_names_bounce_extractor():
    # node 2 keeps returning parcels to 1 at inflated drops
    entries = {
        (1, 0): _entry(phi_in=800),
        (1, 2): _entry(phi_out=400, phi_in=300),
        (2, 1): _entry(phi_in=400, phi_out=300),
        (2, 3): _entry(phi_out=250),
        (3, 2): _entry(phi_in=250),
    }
    t = _table(entries, {1: SenderEdgeRecord(800, Z3, 1)})
    assert detect_f2(t) == 2


def test_f2_all_balanced_raises():
    entries = {
        (1, 0): _entry(phi_in=300),
        (1, 2): _entry(phi_out=283),
        (2, 1): _entry(phi_in=283),
        (2, 3): _entry(phi_out=266),
        (3, 2): _entry(phi_in=266),
    }
    t = _table(entries, {1: SenderEdgeRecord(300, Z3, 1)})
    with pytest.raises(NoImbalanceFound):
        detect_f2(t)


def test_f2_uses_fresher_scalar_copy():
    """A forged low outflow claim loses to the counterpart's fresher copy."""
    entries = {
        (1, 0): _entry(phi_in=300),
        # node 2 understates what it sent back to 1 ...
        (2, 1): _entry(phi_in=300, phi_out=10, stamp=2),
        # ... but 1 holds a fresher countersigned record of the real 210
        (1, 2): _entry(phi_out=300, phi_in=210, stamp=5),
        (2, 3): _entry(phi_out=120, stamp=2),
        (3, 2): _entry(phi_in=120, stamp=2),
    }
    t = _table(entries, {1: SenderEdgeRecord(300, Z3, 1)})
    # with the honest copy: out(2) = 210 + 120 = 330 > in(2) = 300
    assert detect_f2(t) == 2


def test_f2_skips_non_participants():
    entries = {
        (1, 0): _entry(phi_in=100),
        (1, 2): _entry(phi_out=50),
    }
    t = _table(entries, {1: SenderEdgeRecord(100, Z3, 1)},
               participants={0, 1, 3})
    # node 2 never took part; its missing books cannot make it the answer
    with pytest.raises(NoImbalanceFound):
        detect_f2(t)


# ---------------------------------------------------------------- detect_f3


def _honest_entries():
    # 0 inserted (3,2,0) to 1; 1 passed (1,1,0) to 2; everyone balances.
    # A node's stored sum rides on every parcel it signs, so each owner
    # carries one psi_self across all its per-edge entries.
    return {
        (1, 0): _entry(psi_self=(2, 1, 0), psi_in=(3, 2, 0)),
        (1, 2): _entry(psi_self=(2, 1, 0), psi_out=(1, 1, 0)),
        (2, 1): _entry(psi_self=(1, 1, 0), psi_in=(1, 1, 0)),
    }


def test_f3_clean_table_raises():
    t = _table(_honest_entries(), {1: SenderEdgeRecord(5, (3, 2, 0), 1)})
    with pytest.raises(NoViolatorFound):
        detect_f3(t)


def test_f3_overload_blamed_before_conservation():
    entries = {
        (1, 0): _entry(psi_self=(1, 0, 0), psi_in=(9, 4, 0)),
        (1, 2): _entry(psi_self=(1, 0, 0), psi_out=(8, 4, 0)),
        (2, 1): _entry(psi_self=(8, 4, 0), psi_in=(8, 4, 0)),
    }
    # stored magnitude 12 exceeds capacity 10 even though flows conserve
    t = _table(entries, {1: SenderEdgeRecord(13, (9, 4, 0), 1)}, C=10)
    assert detect_f3(t) == 2


def test_f3_conservation_violation_blamed():
    entries = {
        (1, 0): _entry(psi_self=(2, 1, 0), psi_in=(3, 2, 0)),
        (1, 2): _entry(psi_self=(2, 1, 0), psi_out=(1, 1, 0)),
        # node 2 took (1,1,0) but its books show nothing stored or passed on
        (2, 1): _entry(psi_self=(0, 0, 0), psi_in=(1, 1, 0)),
    }
    t = _table(entries, {1: SenderEdgeRecord(5, (3, 2, 0), 1)})
    assert detect_f3(t) == 2


def test_f3_wide_vector_gap_eliminates_staler_copy():
    entries = {
        (1, 0): _entry(psi_in=(3, 2, 0)),
        (1, 2): _entry(psi_out=(5, 0, 0), stamp=3),
        (2, 1): _entry(psi_in=(1, 1, 0), stamp=8),
    }
    t = _table(entries, {1: SenderEdgeRecord(5, (3, 2, 0), 1)})
    assert detect_f3(t) == 1


def test_f3_transfer_into_source_is_disqualifying():
    entries = {
        (1, 0): _entry(psi_in=(3, 2, 0), psi_out=(1, 0, 0)),
    }
    t = _table(entries, {1: SenderEdgeRecord(5, (3, 2, 0), 1)})
    assert detect_f3(t) == 1


def test_f3_source_ledger_is_reference_copy():
    # node 1 denies two of the source's recorded inserts outright
    entries = {
        (1, 0): _entry(psi_in=(0, 3, 0), stamp=2),
    }
    t = _table(entries, {1: SenderEdgeRecord(5, (4, 0, 0), 5)})
    assert detect_f3(t) == 1


def test_f3_single_insert_framed_at_close_is_innocent():
    # one extra landed insert with a fresher node stamp reconciles cleanly
    entries = {
        (1, 0): _entry(psi_self=(3, 1, 0), psi_in=(3, 1, 0), stamp=7),
    }
    t = _table(entries, {1: SenderEdgeRecord(4, (3, 0, 0), 5)})
    with pytest.raises(NoViolatorFound):
        detect_f3(t)


def test_f3_framed_transfer_adjustment_keeps_claimant_clean():
    """The stale end of a one-slot gap is shifted, not blamed."""
    entries = {
        (1, 0): _entry(psi_self=(1, 1, 0), psi_in=(3, 2, 0), stamp=9),
        # 1 committed a final send (stamp 9) that 2 never absorbed (stamp 4);
        # the parcel in flight is credited to 2's stored sum, not held against it
        (1, 2): _entry(psi_self=(1, 1, 0), psi_out=(2, 1, 0), stamp=9),
        (2, 1): _entry(psi_self=(1, 1, 0), psi_in=(1, 1, 0), stamp=4),
    }
    t = _table(entries, {1: SenderEdgeRecord(5, (3, 2, 0), 1)})
    with pytest.raises(NoViolatorFound):
        detect_f3(t)


# ---------------------------------------------------------------- reports


def test_report_serializes_outcome_by_name():
    r = TransmissionReport(3, 1, Outcome.F2, 10, 99, 64, eliminated=2,
                           detection="flow-surplus")
    d = r.to_json()
    assert d["outcome"] == "F2"
    assert d["eliminated"] == 2
    assert d["detection"] == "flow-surplus"
