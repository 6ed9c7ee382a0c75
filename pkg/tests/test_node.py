"""Node-level behaviour: transfer gate, ledgers, claim checks, custody."""

import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from slidesim import core
from slidesim.adversary import AdversaryError, Custody
from slidesim.core import CodewordParcel, Packet, StatusParcel
from slidesim.crypto import Signer, make_he_context, signature_scheme
from slidesim.node import ProtocolNode, ProtocolParams


def _params(C=192, n=4, D=64, payload_bits=32, N=997, K=4):
    return ProtocolParams(
        n=n, sender=0, receiver=n - 1, C=C, P_bits=4096, k=4, K=K,
        lam=Fraction(1, 2), D=D, N=N, payload_bits=payload_bits,
        quiescence_horizon=10_000,
    )


# ---------------------------------------------------------------- parameters


def test_gate_worked_example():
    p = _params(C=384)
    # oracle: smallest whole drop clearing 2n*d > C - 4n^2, linear search
    d = 0
    while not 2 * p.n * d > p.C - 4 * p.n * p.n:
        d += 1
    assert d == 41
    assert p.min_transfer_drop() == Fraction(40)
    # a full source can feed any buffer below C - 41, and no higher
    assert p.transfer_allowed(384, 343)
    assert not p.transfer_allowed(384, 344)


def test_derived_constants():
    p = _params()
    assert p.gate_rhs == 192 - 64
    assert p.kCD == 4 * 192 * 64
    assert p.data_count == 32
    assert p.transfer_allowed(17, 0)
    assert not p.transfer_allowed(16, 0)


@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 600), st.integers(0, 600))
def test_gate_matches_exact_fraction(n, mult, h_from, h_to):
    # the integer form never rounds: compare against exact rational gap
    C = 12 * n * n * mult
    p = _params(C=C, n=n)
    want = Fraction(h_from - h_to) > Fraction(C, 2 * n) - 2 * n
    assert p.transfer_allowed(h_from, h_to) == want


# ---------------------------------------------------------------- harness


class _World:
    """Two honest internal nodes on one edge, codewords minted off stage."""

    def __init__(self, params=None, seed=5):
        self.params = params or _params()
        p = self.params
        self.sig = signature_scheme("hmac")
        self.pairs = self.sig.keygen(seed, p.n)
        self.verifiers = [kp.verification_key for kp in self.pairs]
        self.full = make_he_context("transparent", p.K, p.N, seed)
        self.ctx = self.full.public_view()
        self.rng = random.Random(seed)

    def node(self, idx) -> ProtocolNode:
        nd = ProtocolNode(
            idx, self.params, Signer(idx, self.sig, self.pairs[idx].signing_key),
            self.verifiers, self.sig, self.ctx, random.Random(idx * 7 + 1),
        )
        # stand in for a completed alert block of the first transmission
        nd.current_tid = 1
        nd.alert_tid = 1
        nd.alert_total = 0
        return nd

    def mint(self, count, tid=1):
        signer0 = Signer(0, self.sig, self.pairs[0].signing_key)
        out = []
        for i in range(count):
            tag = self.full.encrypt_unit(1 + i % self.params.K, rng=self.rng)
            payload = i.to_bytes(2, "big") * (self.params.payload_bits // 16)
            p = CodewordParcel(tid, i, payload, tag, b"")
            sig = signer0.sign(core.codeword_auth_bytes(p, self.ctx))
            out.append(CodewordParcel(tid, i, payload, tag, sig))
        return out

    def signer(self, idx) -> Signer:
        return Signer(idx, self.sig, self.pairs[idx].signing_key)


def _pump(a, b, cust, rounds, start=1):
    for r in range(start, start + rounds):
        da = cust.deliver(b.idx, a.idx)
        db = cust.deliver(a.idx, b.idx)
        cust.hand(a.idx, b.idx, a.on_activation(b.idx, da, r))
        cust.hand(b.idx, a.idx, b.on_activation(a.idx, db, r))
    return start + rounds


def test_single_transfer_at_exact_threshold():
    w = _World()
    a, b = w.node(1), w.node(2)
    a.buffer = w.mint(17)
    cust = Custody("fifo")
    _pump(a, b, cust, 12)
    # first drop is 17 - 0 = 17 > 16; afterwards the gap is 15 and stays shut
    assert b.height() == 1
    assert a.height() == 16
    assert a.edges[2].phi_out == 17
    assert b.edges[1].phi_in == 17
    assert a.phi_total == b.phi_total == 17


def test_no_transfer_below_threshold():
    w = _World()
    a, b = w.node(1), w.node(2)
    a.buffer = w.mint(16)
    cust = Custody("fifo")
    _pump(a, b, cust, 12)
    assert b.height() == 0
    assert a.phi_total == 0 and b.phi_total == 0


def test_ledgers_mirror_and_flow_conserves():
    w = _World()
    a, b = w.node(1), w.node(2)
    a.buffer = w.mint(40)
    cust = Custody("fifo")
    _pump(a, b, cust, 60)
    ea, eb = a.edges[2], b.edges[1]
    assert ea.phi_out == eb.phi_in and ea.phi_in == eb.phi_out
    assert ea.psi_out == eb.psi_in and ea.psi_in == eb.psi_out
    assert a.height() + b.height() == 40
    assert a.invariant_failures == [] and b.invariant_failures == []
    # gap has relaxed to within one drop of the gate
    assert a.height() - b.height() <= 17
    # the countersign loop closed: each end holds the other's verified claim
    assert ea.peer_status is not None and eb.peer_status is not None
    assert ea.peer_status.phi_ab == ea.phi_in


def test_offer_keeps_height_constant():
    w = _World()
    a, b = w.node(1), w.node(2)
    a.buffer = w.mint(30)
    cust = Custody("fifo")
    _pump(a, b, cust, 2)
    # round 2 put a parcel in flight; it still counts toward a's height
    assert a.edges[2].outstanding is not None
    assert a.outstanding_count == 1
    assert a.height() == 30
    assert len(a.buffer) == 29


def test_replayed_packet_rejected():
    w = _World()
    a, b = w.node(1), w.node(2)
    a.buffer = w.mint(20)
    cust = Custody("fifo")
    _pump(a, b, cust, 4)
    edge = a.edges[2]
    stale = Packet(
        sender_id=2, receiver_id=1, transmission_id=1, seq=edge.seq_in_last,
        height=0, codeword=None, alert=None, status=None, potential=None,
        testimony=None,
    )
    stale.signature = w.signer(2).sign(core.packet_body_bytes(stale, w.ctx))
    assert not a._verify_packet(edge, 2, stale)
    fresh = Packet(
        sender_id=2, receiver_id=1, transmission_id=1, seq=edge.seq_in_last + 5,
        height=0, codeword=None, alert=None, status=None, potential=None,
        testimony=None,
    )
    fresh.signature = w.signer(2).sign(core.packet_body_bytes(fresh, w.ctx))
    assert a._verify_packet(edge, 2, fresh)


def test_bad_signature_rejected():
    w = _World()
    a, b = w.node(1), w.node(2)
    pkt = Packet(
        sender_id=2, receiver_id=1, transmission_id=1, seq=0, height=0,
        codeword=None, alert=None, status=None, potential=None, testimony=None,
    )
    pkt.signature = w.signer(3).sign(core.packet_body_bytes(pkt, w.ctx))
    edge_probe = a.on_activation(2, pkt, 1)
    assert a.edges[2].seq_in_last == -1  # never accepted
    assert edge_probe.sender_id == 1


def test_implausible_height_claim_is_withheld():
    """A claim that outruns one level per round is treated as silence."""
    w = _World()
    a, b = w.node(1), w.node(2)
    a.buffer = w.mint(30)
    cust = Custody("fifo")
    nxt = _pump(a, b, cust, 6)
    edge = a.edges[2]
    base = edge.claim_height
    assert base is not None and base <= 3
    jump = Packet(
        sender_id=2, receiver_id=1, transmission_id=1, seq=edge.seq_in_last + 1,
        height=base + 50, codeword=None, alert=None, status=None,
        potential=None, testimony=None,
    )
    jump.signature = w.signer(2).sign(core.packet_body_bytes(jump, w.ctx))
    a.on_activation(2, jump, nxt)
    assert edge.peer_height is None
    assert edge.claim_height == base


def test_diverged_status_retires_edge():
    """A signed counter claim that contradicts our ledger latches offbook."""
    w = _World()
    a, b = w.node(1), w.node(2)
    a.buffer = w.mint(30)
    cust = Custody("fifo")
    nxt = _pump(a, b, cust, 4)
    zero = w.ctx.zero()
    lie = StatusParcel(
        transmission_id=1, a=2, b=1, phi_ab=7, phi_ba=0,
        psi_ab=zero, psi_ba=zero, stamp=0, signature=b"",
        counter_signature=b"",
    )
    import dataclasses

    lie = dataclasses.replace(
        lie, signature=w.signer(2).sign(core.status_auth_bytes(lie, w.ctx))
    )
    edge = a.edges[2]
    carrier = Packet(
        sender_id=2, receiver_id=1, transmission_id=1, seq=edge.seq_in_last + 1,
        height=None, codeword=None, alert=None, status=lie, potential=None,
        testimony=None,
    )
    carrier.signature = w.signer(2).sign(core.packet_body_bytes(carrier, w.ctx))
    out = a.on_activation(2, carrier, nxt)
    assert edge.offbook
    # a retired edge neither promises heights nor offers parcels
    assert out.height is None
    assert a.on_activation(2, None, nxt + 1).height is None


def test_halted_node_withholds_height():
    w = _World()
    a = w.node(1)
    a.phi_total = a.params.kCD + 1
    a.halt_check()
    assert a.halted
    assert a.on_activation(2, None, 1).height is None


# ---------------------------------------------------------------- custody


def test_custody_fifo_lifo_order():
    f = Custody("fifo")
    for x in (1, 2, 3):
        f.hand(0, 1, x)
    assert [f.deliver(0, 1) for _ in range(3)] == [1, 2, 3]
    l = Custody("lifo")
    for x in (1, 2, 3):
        l.hand(0, 1, x)
    assert [l.deliver(0, 1) for _ in range(3)] == [3, 2, 1]


def test_custody_random_is_seeded_and_complete():
    got = []
    for _ in range(2):
        c = Custody("random", random.Random(9))
        for x in range(6):
            c.hand(0, 1, x)
        got.append([c.deliver(0, 1) for _ in range(6)])
    assert got[0] == got[1]
    assert sorted(got[0]) == list(range(6))


def test_custody_pending_and_empty():
    c = Custody("fifo")
    assert c.deliver(0, 1) is None
    c.hand(0, 1, "x")
    c.hand(1, 0, "y")
    assert c.pending() == 2
    c.deliver(0, 1)
    assert c.pending() == 1


def test_custody_rejects_unknown_policy():
    with pytest.raises(AdversaryError):
        Custody("priority")
