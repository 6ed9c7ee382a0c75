"""Per-node state machine: gradient routing plus the control-parcel plane.

One activation of an edge drives one call of ``on_activation``: the node
absorbs at most one delivered packet, resolves its pending transfer on
that edge, and hands back exactly one new packet.  Transfers commit only
when the advertised-height gap clears the threshold C/2n - 2n; both
endpoints evaluate the same gate on the same advertised pair, so honest
neighbours keep byte-identical transfer ledgers without extra messages.

All height comparisons are done in integers after multiplying through by
2n, so no divisibility of C is ever assumed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from fractions import Fraction

from . import core
from .core import (
    FLAG_BLACKLISTED,
    FLAG_ELIMINATED,
    AlertKind,
    AlertParcel,
    CodewordParcel,
    Packet,
    PotentialParcel,
    StatusParcel,
    TestimonyParcel,
)
from .crypto import HEVector, he_add


class NodeError(Exception):
    pass


class StaleTransmission(NodeError):
    """Testimony requested for a transmission this node has no snapshot of."""


@dataclass(frozen=True)
class ProtocolParams:
    """Frozen per-run constants shared by every node."""

    n: int
    sender: int
    receiver: int
    C: int
    P_bits: int
    k: int
    K: int
    lam: Fraction
    D: int
    N: int
    payload_bits: int
    quiescence_horizon: int

    @property
    def kCD(self) -> int:
        return self.k * self.C * self.D

    @property
    def data_count(self) -> int:
        return self.D - int(self.lam * self.D)

    @property
    def gate_rhs(self) -> int:
        # transfer gate: 2n*(h_from - h_to) > C - 4n^2, i.e. gap > C/2n - 2n
        return self.C - 4 * self.n * self.n

    def transfer_allowed(self, h_from: int, h_to: int) -> bool:
        return 2 * self.n * (h_from - h_to) > self.gate_rhs

    def min_transfer_drop(self) -> Fraction:
        return Fraction(self.C, 2 * self.n) - 2 * self.n


def _zero_psi(ctx) -> HEVector:
    return ctx.zero()


@dataclass
class EdgeState:
    """Everything one node remembers about one incident edge."""

    peer: int
    psi_out: HEVector
    psi_in: HEVector
    activations: int = 0
    seq_out: int = 0
    seq_in_last: int = -1
    adv_height: int | None = None
    peer_height: int | None = None
    peer_seen: bool = False
    outstanding: tuple | None = None  # (parcel, height advertised with it)
    phi_out: int = 0
    phi_in: int = 0
    stamp: int = 0
    prev: tuple | None = None  # counters before the last commit
    alert_cursor: int = 0
    testimony_cursor: dict = field(default_factory=dict)
    status_cache: StatusParcel | None = None
    peer_status: StatusParcel | None = None
    offbook: bool = False  # peer's ledger provably diverged; edge retired
    last_round: int = 0    # round of this edge's previous activation
    claim_height: int | None = None  # last credible height claim, by build round
    claim_round: int = 0

    def counters(self) -> tuple:
        return (self.phi_out, self.phi_in, self.psi_out, self.psi_in, self.stamp)


@dataclass
class FinalSnapshot:
    """Per-transmission state frozen the moment the node leaves it."""

    tid: int
    phi_total: int
    psi_stored: HEVector
    edges: dict  # peer -> (phi_out, phi_in, psi_out, psi_in, stamp)


class ProtocolNode:
    """Honest internal node.  Sender and Receiver subclass this."""

    def __init__(self, idx, params: ProtocolParams, signer, verifiers, sig_scheme,
                 he_ctx, rng: random.Random, trace=None):
        self.idx = idx
        self.params = params
        self.signer = signer
        self.verifiers = verifiers
        self.sig_scheme = sig_scheme
        self.he_ctx = he_ctx
        self.rng = rng
        self.trace = trace

        self.current_tid = 0
        self.buffer: list[CodewordParcel] = []
        self.outstanding_count = 0
        self.edges: dict[int, EdgeState] = {}
        self.phi_total = 0
        self.halted = False
        self.participated = False

        self.alert_store: dict[int, AlertParcel] = {}   # index -> parcel, newest tid
        self.alert_seen: set[int] = set()               # initial indices seen (incl. superseded)
        self.alert_tid = 0
        self.alert_total: int | None = None
        self.removed_flags: set[tuple] = set()          # (node, flag tid) undone this epoch
        self.receiver_alert: AlertParcel | None = None

        self.potential_store: dict[int, PotentialParcel] = {}
        self.testimony_store: dict[tuple, TestimonyParcel] = {}
        self.wanted_failed: set[int] = set()
        self.own_testimony: list[TestimonyParcel] = []
        self.own_testimony_tid = 0

        self.view: dict[int, tuple] = {}  # node -> (flag code, tid)
        self.prev_final: FinalSnapshot | None = None
        self._own_potential_cache: PotentialParcel | None = None
        self._verified_codewords: set = set()
        self.invariant_failures: list[str] = []

    # -- heights ---------------------------------------------------------

    def height(self) -> int:
        return len(self.buffer) + self.outstanding_count

    def advertised_height(self, peer: int) -> int | None:
        return None if self.halted else self.height()

    def _attached_height(self, edge: EdgeState, peer: int) -> int | None:
        """Height carried by the next packet, or None to withhold it.

        An attached height is a standing promise: any well-formed offer
        of the current transmission answered against it is committed,
        whatever else changed in between.  A node that cannot exchange
        (alert block incomplete, flagged, halted) or whose peer's books
        have provably diverged withholds the height, and peers never
        hand a parcel to a silent height.  Keeping the promise
        unconditional is what makes the two ends of a transfer agree
        without an extra acknowledgement trip.
        """
        if not edge.offbook and self._can_exchange(peer):
            return self.advertised_height(peer)
        return None

    def buffer_occupancy(self) -> int:
        return len(self.buffer) + self.outstanding_count

    def psi_stored_sum(self) -> HEVector:
        acc = self.he_ctx.zero()
        for p in self.buffer:
            acc = he_add(self.he_ctx, acc, p.set_tag)
        for e in self.edges.values():
            if e.outstanding is not None:
                acc = he_add(self.he_ctx, acc, e.outstanding[0].set_tag)
        return acc

    def alert_parcels_stored(self):
        return self.alert_store.values()

    # -- main entry ------------------------------------------------------

    def on_activation(self, peer: int, delivered: Packet | None, round_no: int) -> Packet:
        edge = self.edges.get(peer)
        if edge is None:
            z = _zero_psi(self.he_ctx)
            edge = self.edges[peer] = EdgeState(peer, z, z)
        edge.activations += 1
        # anything delivered now was built no later than the edge's
        # previous activation; that bound is what rate checks run on
        built_by = edge.last_round
        edge.last_round = round_no

        if delivered is not None and self._verify_packet(edge, peer, delivered):
            self._absorb(edge, peer, delivered, round_no, built_by)

        self.halt_check()
        return self._send_next_packet(edge, peer, round_no)

    # -- inbound processing ----------------------------------------------

    def _verify_packet(self, edge: EdgeState, peer: int, pkt: Packet) -> bool:
        if pkt.sender_id != peer or pkt.receiver_id != self.idx:
            return False
        if pkt.seq <= edge.seq_in_last:
            return False  # replayed or reordered injection
        if pkt.height is not None and not 0 <= pkt.height <= self.params.C:
            return False
        body = core.packet_body_bytes(pkt, self.he_ctx)
        if not self.sig_scheme.verify(self.verifiers[peer], body, pkt.signature):
            return False
        edge.seq_in_last = pkt.seq
        return True

    def _absorb(self, edge: EdgeState, peer: int, pkt: Packet, round_no: int, built_by: int):
        if pkt.alert is not None:
            self._store_alert(pkt.alert, round_no)
        if pkt.potential is not None:
            self._store_potential(pkt.potential)
        if pkt.testimony is not None:
            self._store_testimony(pkt.testimony)
        if pkt.status is not None:
            self._store_status(edge, peer, pkt.status)
        self._codeword_phase(edge, peer, pkt, round_no, built_by)

    def _store_status(self, edge: EdgeState, peer: int, sp: StatusParcel):
        """Verify the peer's counter claim against this node's own ledger.

        Both ends of an edge commit each transfer at the same activation,
        so between honest neighbours the two ledgers are byte-identical
        every time a status arrives.  Any divergence in a current-epoch
        claim is proof the peer's books have left reality; the edge is
        then retired for the rest of the transmission (no more offers,
        heights withheld), which caps how far a forger can push the two
        records apart at the single transfer already in flight.

        A verified matching claim is kept: the peer's signature over the
        shared canonical body is the countersignature this node attaches
        to its own next status parcel.
        """
        if sp.a != peer or sp.b != self.idx:
            return
        if sp.transmission_id != self.current_tid or self.current_tid == 0:
            return
        if edge.peer_status is not None and sp.signature == edge.peer_status.signature:
            return
        body = core.status_auth_bytes(sp, self.he_ctx)
        if not self.sig_scheme.verify(self.verifiers[peer], body, sp.signature):
            edge.offbook = True
            return
        if (
            sp.phi_ab != edge.phi_in
            or sp.phi_ba != edge.phi_out
            or sp.psi_ab != edge.psi_in
            or sp.psi_ba != edge.psi_out
            or sp.stamp != edge.stamp
        ):
            edge.offbook = True
            return
        edge.peer_status = sp

    def _codeword_phase(self, edge: EdgeState, peer: int, pkt: Packet, round_no: int,
                        built_by: int):
        tid_ok = pkt.transmission_id == self.current_tid and self.current_tid > 0
        h_v = pkt.height
        if tid_ok and h_v is not None:
            # One edge activates per round, so a node's height moves at
            # most one level per round.  Claims are dated by the round
            # they could last have been built (the edge's previous
            # activation); a claim that outruns that pace cannot be
            # truthful and is treated as withheld.  Without this cap a
            # node could alternate low and high claims and burn
            # unbounded potential onto an honest neighbour's books.
            if (
                edge.claim_height is not None
                and abs(h_v - edge.claim_height) > built_by - edge.claim_round
            ):
                h_v = None
            else:
                edge.claim_height = h_v
                edge.claim_round = built_by
        if tid_ok:
            edge.peer_seen = True
            edge.peer_height = h_v

        # A pending offer resolves against the first current-epoch packet;
        # the height in it predates the peer's sight of the offer, so both
        # ends evaluate the same gate on the same pair.
        if edge.outstanding is not None and tid_ok:
            parcel, adv_h = edge.outstanding
            edge.outstanding = None
            self.outstanding_count -= 1
            if h_v is not None and self.params.transfer_allowed(adv_h, h_v):
                self._commit_send(edge, peer, parcel, adv_h, h_v, round_no)
            else:
                self._return_to_buffer(parcel)

        # Offers are honored against the height this node attached in its
        # previous packet on the edge; that is the value the offerer reads
        # when it resolves, so both ends commit on the same pair or not at
        # all.  No attached height, no promise, no commit.
        h_old = edge.adv_height
        if (
            pkt.codeword is not None
            and tid_ok
            and h_v is not None
            and h_old is not None
            and self._accepts_parcel(edge, h_v, h_old)
        ):
            p = pkt.codeword
            if (
                p.transmission_id == self.current_tid
                and 0 <= p.parcel_index < self.params.D
                and len(p.payload) * 8 == self.params.payload_bits
                and self._verify_codeword(p)
            ):
                self._commit_receive(edge, peer, p, h_v, h_old, round_no)

    def _accepts_parcel(self, edge: EdgeState, h_from: int, h_own: int) -> bool:
        return self.params.transfer_allowed(h_from, h_own)

    def _commit_send(self, edge: EdgeState, peer: int, parcel, h_from: int, h_to: int,
                     round_no: int):
        phi = h_from - h_to
        self._assert_drop(phi)
        edge.prev = edge.counters()
        edge.phi_out += phi
        edge.psi_out = he_add(self.he_ctx, edge.psi_out, parcel.set_tag)
        edge.stamp = round_no
        edge.status_cache = None
        self.phi_total += phi
        self._own_potential_cache = None
        if self.trace is not None:
            self.trace.append(
                {"ev": "send", "round": round_no, "from": self.idx, "to": peer,
                 "idx": parcel.parcel_index, "phi": phi}
            )

    def _commit_receive(self, edge: EdgeState, peer: int, parcel, h_from: int, h_own: int,
                        round_no: int):
        phi = h_from - h_own
        self._assert_drop(phi)
        edge.prev = edge.counters()
        edge.phi_in += phi
        edge.psi_in = he_add(self.he_ctx, edge.psi_in, parcel.set_tag)
        edge.stamp = round_no
        edge.status_cache = None
        self.phi_total += phi
        self._own_potential_cache = None
        self._store_received_parcel(parcel)
        if self.trace is not None:
            self.trace.append(
                {"ev": "recv", "round": round_no, "from": peer, "to": self.idx,
                 "idx": parcel.parcel_index, "phi": phi}
            )

    def _assert_drop(self, phi: int):
        # every committed transfer strictly clears the C/2n - 2n floor
        if 2 * self.params.n * phi <= self.params.gate_rhs:
            self.invariant_failures.append(f"transfer drop {phi} at or below floor")

    def _store_received_parcel(self, parcel: CodewordParcel):
        self.buffer.append(parcel)

    def _return_to_buffer(self, parcel: CodewordParcel):
        self.buffer.append(parcel)

    def _verify_codeword(self, p: CodewordParcel) -> bool:
        key = (p.transmission_id, p.parcel_index, p.sender_signature)
        if key in self._verified_codewords:
            return True
        body = core.codeword_auth_bytes(p, self.he_ctx)
        if self.sig_scheme.verify(self.verifiers[self.params.sender], body, p.sender_signature):
            self._verified_codewords.add(key)
            return True
        return False

    def _can_exchange(self, peer: int) -> bool:
        ok = (
            self.current_tid > 0
            and self.alert_complete()
            and not self.halted
            and self.idx not in self.view
            and peer not in self.view
        )
        if ok:
            self.participated = True
        return ok

    def alert_complete(self) -> bool:
        return (
            self.alert_tid == self.current_tid
            and self.alert_total is not None
            and len(self.alert_seen) >= self.alert_total
        )

    def halt_check(self):
        if not self.halted and self.phi_total > self.params.kCD:
            self.halted = True
            if self.trace is not None:
                self.trace.append({"ev": "halt", "node": self.idx, "tid": self.current_tid})

    # -- control-parcel stores -------------------------------------------

    def _store_alert(self, parcel: AlertParcel, round_no: int):
        p = self.params
        if parcel.origin == p.sender:
            body = core.alert_auth_bytes(parcel)
            if not self.sig_scheme.verify(self.verifiers[p.sender], body, parcel.signature):
                return
            tid = parcel.transmission_id
            if tid < self.alert_tid:
                return
            if tid > self.current_tid:
                self._advance_transmission(tid)
            if tid > self.alert_tid:
                self.alert_store = {}
                self.alert_seen = set()
                self.alert_tid = tid
                self.alert_total = None
                self.removed_flags = set()
            self._apply_alert_parcel(parcel)
        elif parcel.origin == p.receiver:
            body = core.alert_auth_bytes(parcel)
            if not self.sig_scheme.verify(self.verifiers[p.receiver], body, parcel.signature):
                return
            if parcel.transmission_id == self.current_tid and parcel.kind in (
                AlertKind.RECEIVER_DECODED,
                AlertKind.RECEIVER_INCONSISTENT,
            ):
                self.receiver_alert = parcel

    def _apply_alert_parcel(self, parcel: AlertParcel):
        was_complete = self.alert_complete()
        self.alert_total = parcel.total_initial
        if parcel.index < parcel.total_initial:
            self.alert_seen.add(parcel.index)
        self.alert_store[parcel.index] = parcel

        kind = parcel.kind
        if kind == AlertKind.FAILED_STAMP:
            self.wanted_failed.add(parcel.payload[0])
        elif kind == AlertKind.NODE_FLAG:
            node, code, flag_tid = parcel.payload
            if (node, flag_tid) in self.removed_flags:
                self.alert_store.pop(parcel.index, None)
            else:
                self.view[node] = (code, flag_tid)
                if node == self.idx and code == FLAG_BLACKLISTED:
                    self._ensure_own_testimony(flag_tid)
        elif kind == AlertKind.REMOVAL:
            node, flag_tid, supersedes = parcel.payload
            self.removed_flags.add((node, flag_tid))
            self.alert_store.pop(supersedes, None)
            if self.view.get(node, (None, None))[1] == flag_tid:
                self.view.pop(node, None)
            if node == self.idx:
                self.participated = True
                if self.own_testimony_tid == flag_tid:
                    self.own_testimony = []
                    self.own_testimony_tid = 0
        if not was_complete and self.alert_complete():
            self._on_alert_complete()

    def _on_alert_complete(self):
        # the initial block is authoritative for which failures still matter
        stamps = {
            q.payload[0]
            for q in self.alert_store.values()
            if q.kind == AlertKind.FAILED_STAMP
        }
        self.wanted_failed = stamps
        for key in [k for k, v in self.testimony_store.items()
                    if v.transmission_id not in stamps]:
            del self.testimony_store[key]
        if self.own_testimony and self.own_testimony_tid not in stamps:
            self.own_testimony = []
            self.own_testimony_tid = 0

    def _ensure_own_testimony(self, flag_tid: int):
        if self.own_testimony_tid == flag_tid and self.own_testimony:
            return
        try:
            self.own_testimony = self.build_testimony(flag_tid)
            self.own_testimony_tid = flag_tid
        except StaleTransmission:
            self.invariant_failures.append(
                f"flagged for still-open transmission {flag_tid}"
            )

    def build_testimony(self, tid: int) -> list[TestimonyParcel]:
        """Freeze the per-edge ledger of transmission `tid` into signed parcels.

        A node flagged for a transmission it never advanced into still
        owes an account; its truthful ledger is all zeros, and filing it
        is the only way the flag can ever clear.
        """
        if tid == self.current_tid and tid != 0:
            raise StaleTransmission(f"transmission {tid} still open")
        snap = self.prev_final
        parcels = []
        zero = self.he_ctx.zero()
        if snap is not None and snap.tid == tid:
            edges, phi_self, psi_self = snap.edges, snap.phi_total, snap.psi_stored
        else:
            edges, phi_self, psi_self = {}, 0, zero
        for cp in range(self.params.n):
            if cp == self.idx:
                continue
            phi_out, phi_in, psi_out, psi_in, stamp = edges.get(
                cp, (0, 0, zero, zero, 0)
            )
            tp = TestimonyParcel(
                owner=self.idx,
                counterpart=cp,
                transmission_id=tid,
                phi_out=phi_out,
                phi_in=phi_in,
                phi_self=phi_self,
                psi_self=psi_self,
                psi_out=psi_out,
                psi_in=psi_in,
                stamp=stamp,
                signature=b"",
            )
            body = core.testimony_auth_bytes(tp, self.he_ctx)
            parcels.append(replace(tp, signature=self.signer.sign(body)))
        return parcels

    def _store_potential(self, parcel: PotentialParcel):
        if parcel.transmission_id != self.current_tid or parcel.owner >= self.params.n:
            return
        held = self.potential_store.get(parcel.owner)
        if held is not None and held.value >= parcel.value:
            return
        body = core.potential_auth_bytes(parcel)
        if not self.sig_scheme.verify(self.verifiers[parcel.owner], body, parcel.signature):
            return
        self.potential_store[parcel.owner] = parcel

    def _store_testimony(self, parcel: TestimonyParcel):
        if parcel.owner == self.idx or parcel.owner >= self.params.n:
            return
        if parcel.transmission_id not in self.wanted_failed:
            return
        key = (parcel.owner, parcel.counterpart)
        held = self.testimony_store.get(key)
        if held is not None and (held.transmission_id, held.stamp) >= (
            parcel.transmission_id,
            parcel.stamp,
        ):
            return
        body = core.testimony_auth_bytes(parcel, self.he_ctx)
        if not self.sig_scheme.verify(self.verifiers[parcel.owner], body, parcel.signature):
            return
        self.testimony_store[key] = parcel

    # -- transmission boundary -------------------------------------------

    def _advance_transmission(self, new_tid: int):
        if self.current_tid > 0 and self.participated:
            self.prev_final = FinalSnapshot(
                tid=self.current_tid,
                phi_total=self.phi_total,
                psi_stored=self.psi_stored_sum(),
                edges={p: e.counters() for p, e in self.edges.items()},
            )
        self.buffer.clear()
        self.outstanding_count = 0
        for e in self.edges.values():
            z = _zero_psi(self.he_ctx)
            e.activations = 0
            e.adv_height = None
            e.peer_height = None
            e.peer_seen = False
            e.outstanding = None
            e.phi_out = 0
            e.phi_in = 0
            e.psi_out = z
            e.psi_in = z
            e.stamp = 0
            e.prev = None
            e.alert_cursor = 0
            e.status_cache = None
            e.peer_status = None
            e.offbook = False
            e.claim_height = None
            e.claim_round = 0
        self.phi_total = 0
        self.halted = False
        self.participated = False
        self.potential_store = {}
        self._own_potential_cache = None
        self.receiver_alert = None
        self.current_tid = new_tid
        if self.trace is not None:
            self.trace.append({"ev": "enter_tid", "node": self.idx, "tid": new_tid})

    # -- outbound construction -------------------------------------------

    def _offer_codeword(self, edge: EdgeState, peer: int) -> CodewordParcel | None:
        if edge.outstanding is not None or edge.offbook or not self._can_exchange(peer):
            return None
        if not edge.peer_seen or edge.peer_height is None:
            return None  # peer halted, or not yet heard from in this transmission
        return self._select_codeword(edge, peer)

    def _select_codeword(self, edge: EdgeState, peer: int) -> CodewordParcel | None:
        if not self.buffer:
            return None
        i = self.rng.randrange(len(self.buffer))
        parcel = self.buffer[i]
        self.buffer[i] = self.buffer[-1]
        self.buffer.pop()
        return parcel

    def _select_alert(self, edge: EdgeState) -> AlertParcel | None:
        if self.receiver_alert is not None:
            return self.receiver_alert
        if not self.alert_store:
            return None
        keys = sorted(self.alert_store)
        parcel = self.alert_store[keys[edge.alert_cursor % len(keys)]]
        edge.alert_cursor += 1
        return parcel

    def _build_status(self, edge: EdgeState, peer: int) -> StatusParcel:
        if edge.status_cache is not None:
            return edge.status_cache
        # the peer's verified signature covers this same canonical body
        # whenever no commit has landed since it was issued
        cosig = b""
        ps = edge.peer_status
        if ps is not None and ps.transmission_id == self.current_tid and ps.stamp == edge.stamp:
            cosig = ps.signature
        sp = StatusParcel(
            transmission_id=self.current_tid,
            a=self.idx,
            b=peer,
            phi_ab=edge.phi_out,
            phi_ba=edge.phi_in,
            psi_ab=edge.psi_out,
            psi_ba=edge.psi_in,
            stamp=edge.stamp,
            signature=b"",
            counter_signature=cosig,
        )
        body = core.status_auth_bytes(sp, self.he_ctx)
        sp = replace(sp, signature=self.signer.sign(body))
        edge.status_cache = sp
        return sp

    def _own_potential(self) -> PotentialParcel:
        if self._own_potential_cache is None:
            pp = PotentialParcel(self.idx, self.current_tid, self.phi_total, b"")
            sig = self.signer.sign(core.potential_auth_bytes(pp))
            self._own_potential_cache = PotentialParcel(
                self.idx, self.current_tid, self.phi_total, sig
            )
        return self._own_potential_cache

    def _select_potential(self, edge: EdgeState) -> PotentialParcel | None:
        target = edge.activations % self.params.n
        if target == self.idx:
            return self._own_potential()
        return self.potential_store.get(target)

    def _select_testimony(self, edge: EdgeState) -> TestimonyParcel | None:
        target = edge.activations % self.params.n
        if target == self.idx:
            pool = self.own_testimony
        else:
            pool = [v for (ow, _), v in sorted(self.testimony_store.items()) if ow == target]
        if not pool:
            return None
        cur = edge.testimony_cursor.get(target, 0)
        parcel = pool[cur % len(pool)]
        edge.testimony_cursor[target] = cur + 1
        return parcel

    def _send_next_packet(self, edge: EdgeState, peer: int, round_no: int) -> Packet:
        height = self._attached_height(edge, peer)
        codeword = None
        if height is not None:
            codeword = self._offer_codeword(edge, peer)
            if codeword is not None:
                edge.outstanding = (codeword, height)
                self.outstanding_count += 1
        pkt = Packet(
            sender_id=self.idx,
            receiver_id=peer,
            transmission_id=self.current_tid,
            seq=edge.seq_out,
            height=height,
            codeword=codeword,
            alert=self._select_alert(edge),
            status=self._build_status(edge, peer),
            potential=self._select_potential(edge),
            testimony=self._select_testimony(edge),
        )
        pkt.signature = self.signer.sign(core.packet_body_bytes(pkt, self.he_ctx))
        edge.seq_out += 1
        edge.adv_height = height
        return pkt
