"""Sender and Receiver behavior, plus post-failure record reconciliation.

The Sender owns the ground truth: the message queue, fresh set tags each
transmission, the alert stream, the blacklist, and the testimony ledger
used to localize a fault after a failed transmission.  The Receiver
decodes, raises its one-parcel alerts, and otherwise runs the shared
node machinery with a pinned height of zero.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from types import SimpleNamespace

from . import coding, core
from .core import (
    FLAG_BLACKLISTED,
    FLAG_ELIMINATED,
    AlertKind,
    AlertParcel,
    CodewordParcel,
    Outcome,
)
from .crypto import he_add
from .node import ProtocolNode, ProtocolParams


class DetectionError(Exception):
    pass


class NoImbalanceFound(DetectionError):
    """Every reconciled flow balance is non-positive."""


class NoViolatorFound(DetectionError):
    """All conservation checks passed; the fault could not be localized."""


# ---------------------------------------------------------------------------
# testimony tables and reconciliation


@dataclass
class Entry:
    """One decrypted testimony parcel."""

    phi_out: int
    phi_in: int
    phi_self: int
    psi_self: tuple
    psi_out: tuple
    psi_in: tuple
    stamp: int


@dataclass
class SenderEdgeRecord:
    """The Sender's own plaintext ledger for one incident edge."""

    phi_out: int
    chi_out: tuple
    stamp: int


@dataclass
class TestimonyTable:
    n: int
    sender: int
    receiver: int
    N: int
    C: int
    participants: frozenset
    entries: dict  # (owner, counterpart) -> Entry
    sender_edges: dict  # peer -> SenderEdgeRecord


def _hamming(a: tuple, b: tuple) -> int:
    return sum(1 for x, y in zip(a, b) if x != y)


def _vec_sub(a: tuple, b: tuple, N: int) -> tuple:
    return tuple((x - y) % N for x, y in zip(a, b))


def _vec_add(a: tuple, b: tuple, N: int) -> tuple:
    return tuple((x + y) % N for x, y in zip(a, b))


def _sym_norm(v: tuple, N: int) -> int:
    return sum(min(x, N - x) for x in v)


@dataclass
class PairOutcome:
    agreed: tuple
    adjust_a: tuple | None = None  # applied to claimant a's stored-sum
    adjust_b: tuple | None = None
    eliminated: tuple = ()


def reconcile_pair(claim_a: tuple, stamp_a: int, claim_b: tuple, stamp_b: int,
                   N: int, a_is_outflow: bool = True) -> PairOutcome:
    """Merge the two co-maintained copies of one directed edge vector.

    `claim_a` is the flow-source copy and `claim_b` the flow-target copy
    of the same transfer sum.  Copies kept honestly can differ in at most
    one coordinate, from a transfer framed at one endpoint while the
    transmission closed.  The fresher stamp wins and the stale claimant's
    stored-parcel sum is shifted so its own conservation identity keeps
    holding; any wider gap proves one endpoint rewrote history, and the
    staler (or both, on a stamp tie) is eliminated.
    """
    d = _hamming(claim_a, claim_b)
    if d == 0:
        return PairOutcome(agreed=claim_a)
    if d == 1 and stamp_a != stamp_b:
        if stamp_a > stamp_b:
            agreed, delta = claim_a, _vec_sub(claim_a, claim_b, N)
            return PairOutcome(agreed=agreed, adjust_b=delta)
        agreed, delta = claim_b, _vec_sub(claim_b, claim_a, N)
        return PairOutcome(agreed=agreed, adjust_a=delta)
    if stamp_a > stamp_b:
        return PairOutcome(agreed=claim_a, eliminated=("b",))
    if stamp_b > stamp_a:
        return PairOutcome(agreed=claim_b, eliminated=("a",))
    return PairOutcome(agreed=claim_a, eliminated=("a", "b"))


def _agreed_phi(table: TestimonyTable, a: int, b: int) -> int:
    """Fresher-stamp merge of the two scalar claims for edge flow a->b."""
    if a == table.sender:
        rec = table.sender_edges.get(b)
        ea = (rec.phi_out, rec.stamp) if rec is not None else (0, -1)
    else:
        e = table.entries.get((a, b))
        ea = (e.phi_out, e.stamp) if e is not None else None
    if b == table.sender:
        eb = (0, -1)
    else:
        e = table.entries.get((b, a))
        eb = (e.phi_in, e.stamp) if e is not None else None
    if ea is None and eb is None:
        return 0
    if ea is None:
        return eb[0]
    if eb is None:
        return ea[0]
    return ea[0] if ea[1] >= eb[1] else eb[0]


def detect_f2(table: TestimonyTable) -> int:
    """Name the node with the largest reconciled outflow surplus.

    A potential-budget failure means someone manufactured transfer
    credit: the recorded drops total more than the actual injected
    potential, and whoever made up the difference recorded more drop
    going out than coming in.  Such a node must exist once the budget
    check trips, so an empty result signals a broken testimony table
    rather than a clean one.  The Sender is exempt; its surplus is the
    legitimate source of all potential.
    """
    others = [u for u in range(table.n) if u != table.sender]
    best, best_u = 0, None
    for u in others:
        if u not in table.participants:
            continue
        out = sum(_agreed_phi(table, u, v) for v in range(table.n) if v != u)
        inc = sum(_agreed_phi(table, v, u) for v in range(table.n) if v != u)
        if out - inc > best:
            best, best_u = out - inc, u
    if best_u is None:
        raise NoImbalanceFound("no node shows a positive flow surplus")
    return best_u


def detect_f3(table: TestimonyTable) -> int:
    """Localize a stalled transmission to a parcel-conserving violation.

    Works over the obfuscated per-set transfer counts: first reconcile
    every pair of co-maintained edge vectors, then look for a node whose
    stored-sum magnitude exceeds its buffer capacity, then for a node
    whose stored + sent - received vector is off zero.
    """
    N, C = table.N, table.C
    internal = sorted(
        u for u in table.participants if u not in (table.sender, table.receiver)
    )
    non_sender = sorted(u for u in table.participants if u != table.sender)

    agreed: dict = {}
    adjust = {u: (0,) * _veclen(table) for u in non_sender}
    eliminated: list[int] = []

    for a in non_sender:
        for b in non_sender:
            if a == b:
                continue
            ea = table.entries.get((a, b))
            eb = table.entries.get((b, a))
            if ea is None and eb is None:
                continue
            if eb is None:
                agreed[(a, b)] = ea.psi_out
                continue
            if ea is None:
                agreed[(a, b)] = eb.psi_in
                continue
            out = reconcile_pair(ea.psi_out, ea.stamp, eb.psi_in, eb.stamp, N)
            agreed[(a, b)] = out.agreed
            if out.adjust_a is not None:
                adjust[a] = _vec_sub(adjust[a], out.adjust_a, N)
            if out.adjust_b is not None:
                adjust[b] = _vec_add(adjust[b], out.adjust_b, N)
            for side, u in (("a", a), ("b", b)):
                if side in out.eliminated:
                    eliminated.append(u)

    # Sender-incident edges: its plaintext ledger is the reference copy.
    for v, rec in table.sender_edges.items():
        if v not in table.participants:
            continue
        ev = table.entries.get((v, table.sender))
        claim = ev.psi_in if ev is not None else (0,) * len(rec.chi_out)
        stamp = ev.stamp if ev is not None else 0
        d = _hamming(rec.chi_out, claim)
        if d == 0:
            agreed[(table.sender, v)] = rec.chi_out
        elif d == 1 and stamp >= rec.stamp:
            agreed[(table.sender, v)] = claim  # framed insert landed after close
        else:
            eliminated.append(v)
            agreed[(table.sender, v)] = rec.chi_out
        if ev is not None and any(x != 0 for x in ev.psi_out):
            eliminated.append(v)  # claims a transfer back into the Sender
    for u in non_sender:
        e = table.entries.get((u, table.sender))
        if u not in table.sender_edges and e is not None:
            if any(e.psi_in) or any(e.psi_out):
                eliminated.append(u)

    if eliminated:
        return min(eliminated)

    for u in internal:
        psi_self = _owner_psi_self(table, u)
        if psi_self is None:
            continue
        psi_self = _vec_add(psi_self, adjust[u], N)
        if _sym_norm(psi_self, N) > C:
            return u

    for u in internal:
        psi_self = _owner_psi_self(table, u)
        if psi_self is None:
            continue
        acc = _vec_add(psi_self, adjust[u], N)
        for v in range(table.n):
            if v == u:
                continue
            if (u, v) in agreed:
                acc = _vec_add(acc, agreed[(u, v)], N)
            if (v, u) in agreed:
                acc = _vec_sub(acc, agreed[(v, u)], N)
        if any(x != 0 for x in acc):
            return u

    raise NoViolatorFound("all reconciled conservation checks passed")


def _veclen(table: TestimonyTable) -> int:
    for e in table.entries.values():
        return len(e.psi_self)
    for rec in table.sender_edges.values():
        return len(rec.chi_out)
    return 1


def _owner_psi_self(table: TestimonyTable, u: int) -> tuple | None:
    for v in range(table.n):
        e = table.entries.get((u, v))
        if e is not None:
            return e.psi_self
    return None


# ---------------------------------------------------------------------------
# transmission bookkeeping


@dataclass
class TransmissionReport:
    transmission_id: int
    message_index: int
    outcome: Outcome
    start_round: int
    end_round: int
    inserted: int
    eliminated: int | None = None
    detection: str | None = None

    def to_json(self) -> dict:
        return {
            "transmission_id": self.transmission_id,
            "message_index": self.message_index,
            "outcome": self.outcome.name,
            "start_round": self.start_round,
            "end_round": self.end_round,
            "inserted": self.inserted,
            "eliminated": self.eliminated,
            "detection": self.detection,
        }


@dataclass
class FailureRecord:
    transmission_id: int
    outcome: Outcome
    participants: frozenset
    sender_edges: dict
    testimonies: dict = field(default_factory=dict)
    complete_owners: set = field(default_factory=set)
    resolved: bool = False
    detection: str | None = None


class SenderNode(ProtocolNode):
    """Message source; also the audit authority for failed transmissions."""

    def __init__(self, idx, params: ProtocolParams, signer, verifiers, sig_scheme,
                 he_ctx, rng: random.Random, messages, coding_params, trace=None):
        super().__init__(idx, params, signer, verifiers, sig_scheme, he_ctx, rng,
                         trace=trace)
        if not he_ctx.has_secret:
            raise ValueError("the Sender needs the secret-key context")
        self.messages = list(messages)
        self.coding_params = coding_params
        self.message_idx = 0
        self.insert_count = 0
        self.last_insert_round = 0
        self.start_round = 0
        self.chi: list[int] = []
        self.edge_chi_out: dict[int, list[int]] = {}
        self.blacklist: dict[int, tuple] = {}
        self.failed: dict[int, FailureRecord] = {}
        self.current_participants: set[int] = set()
        self.alert_next_idx = 0
        self.flag_parcel_idx: dict[int, int] = {}
        self.reports: list[TransmissionReport] = []
        self.pending_elimination: tuple | None = None
        self.prev_outcome = (0, Outcome.START)
        self.finished = False
        self._encoded: dict[int, list[bytes]] = {}
        self.undetected_failures = 0

    # -- role overrides --------------------------------------------------

    def advertised_height(self, peer: int) -> int:
        return self.params.C

    def _accepts_parcel(self, edge, h_from: int, h_own: int) -> bool:
        return False

    def _commit_send(self, edge, peer, parcel, h_from, h_to, round_no):
        super()._commit_send(edge, peer, parcel, h_from, h_to, round_no)
        self.insert_count += 1
        self.last_insert_round = round_no
        self.edge_chi_out.setdefault(peer, [0] * self.params.K)[
            self.chi[parcel.parcel_index] - 1
        ] += 1

    def _select_testimony(self, edge):
        return None  # the Sender consumes testimony, it does not relay it

    # -- lifecycle -------------------------------------------------------

    def begin_transmission(self, round_no: int):
        tid = self.current_tid + 1
        self._advance_transmission(tid)
        self.participated = True
        self.start_round = round_no
        self.insert_count = 0
        self.last_insert_round = round_no
        self.edge_chi_out = {}

        parcels = self._build_codeword_set(tid)
        self.buffer = parcels
        self._build_alert(tid)
        if self.trace is not None:
            self.trace.append({"ev": "begin_tid", "tid": tid, "round": round_no,
                               "message": self.message_idx})

    def _build_codeword_set(self, tid: int) -> list[CodewordParcel]:
        if self.message_idx >= len(self.messages):
            return []
        payloads = self._encoded.get(self.message_idx)
        if payloads is None:
            payloads = coding.encode(self.messages[self.message_idx], self.coding_params)
            self._encoded[self.message_idx] = payloads
        K = self.params.K
        self.chi = [self.rng.randrange(1, K + 1) for _ in range(self.params.D)]
        out = []
        for i, payload in enumerate(payloads):
            tag = self.he_ctx.encrypt_unit(self.chi[i], rng=self.rng)
            p = CodewordParcel(tid, i, payload, tag, b"")
            sig = self.signer.sign(core.codeword_auth_bytes(p, self.he_ctx))
            out.append(replace(p, sender_signature=sig))
        return out

    def _build_alert(self, tid: int):
        specs = [(AlertKind.PREV_STATUS,
                  (self.prev_outcome[0], int(self.prev_outcome[1]), self.message_idx))]
        unresolved = sorted(t for t, r in self.failed.items() if not r.resolved)
        for t in unresolved:
            specs.append((AlertKind.FAILED_STAMP, (t, int(self.failed[t].outcome), 0)))
        flag_order = []
        for node in sorted(self.blacklist):
            code, ftid = self.blacklist[node]
            specs.append((AlertKind.NODE_FLAG, (node, code, ftid)))
            flag_order.append(node)
        total = len(specs)
        self.alert_store = {}
        self.flag_parcel_idx = {}
        for i, (kind, payload) in enumerate(specs):
            p = AlertParcel(self.idx, tid, kind, i, total, payload, b"")
            p = replace(p, signature=self.signer.sign(core.alert_auth_bytes(p)))
            self.alert_store[i] = p
        for i, node in enumerate(flag_order):
            self.flag_parcel_idx[node] = total - len(flag_order) + i
        self.alert_tid = tid
        self.alert_seen = set(range(total))
        self.alert_total = total
        self.alert_next_idx = total
        self.removed_flags = set()
        self.view = dict(self.blacklist)
        self.wanted_failed = set(unresolved)
        self.current_participants = {
            u for u in range(self.params.n) if u != self.idx and u not in self.view
        }

    def close_transmission(self, outcome: Outcome, round_no: int,
                           eliminated: int | None = None, detection: str | None = None):
        tid = self.current_tid
        report = TransmissionReport(
            transmission_id=tid,
            message_index=self.message_idx,
            outcome=outcome,
            start_round=self.start_round,
            end_round=round_no,
            inserted=self.insert_count,
            eliminated=eliminated,
            detection=detection,
        )
        if outcome == Outcome.S1:
            self.message_idx += 1
            if self.message_idx >= len(self.messages):
                self.finished = True
        elif outcome in (Outcome.F2, Outcome.F3):
            participants = frozenset(
                u for u in self.current_participants
                if self.blacklist.get(u, (None, 0))[0] != FLAG_ELIMINATED
            )
            self.failed[tid] = FailureRecord(
                transmission_id=tid,
                outcome=outcome,
                participants=participants,
                sender_edges={
                    peer: SenderEdgeRecord(
                        phi_out=e.phi_out,
                        chi_out=tuple(self.edge_chi_out.get(peer, [0] * self.params.K)),
                        stamp=e.stamp,
                    )
                    for peer, e in self.edges.items()
                    if e.phi_out or peer in self.edge_chi_out
                },
            )
            for u in range(self.params.n):
                if u != self.idx and u not in self.blacklist:
                    self.blacklist[u] = (FLAG_BLACKLISTED, tid)
        elif outcome == Outcome.F4:
            self.blacklist = {
                u: v for u, v in self.blacklist.items() if v[0] == FLAG_ELIMINATED
            }
            self.blacklist[eliminated] = (FLAG_ELIMINATED, tid)
            for rec in self.failed.values():
                rec.resolved = True
        self.prev_outcome = (tid, outcome)
        self.reports.append(report)
        if self.trace is not None:
            self.trace.append({"ev": "close_tid", "tid": tid, "round": round_no,
                               "outcome": outcome.name})

    def lifecycle_step(self, round_no: int) -> list[TransmissionReport]:
        """Poll end-of-transmission conditions; returns any new reports."""
        before = len(self.reports)
        if self.pending_elimination is not None:
            x, via, _ftid = self.pending_elimination
            self.pending_elimination = None
            self.close_transmission(Outcome.F4, round_no, eliminated=x, detection=via)
            self.begin_transmission(round_no)
        elif self.receiver_alert is not None and self.receiver_alert.transmission_id == self.current_tid:
            kind = self.receiver_alert.kind
            if kind == AlertKind.RECEIVER_DECODED:
                self.close_transmission(Outcome.S1, round_no)
                if not self.finished:
                    self.begin_transmission(round_no)
                else:
                    self.receiver_alert = None
            elif kind == AlertKind.RECEIVER_INCONSISTENT:
                self.close_transmission(Outcome.F2, round_no)
                self.begin_transmission(round_no)
        elif (
            self.buffer == []
            and self.outstanding_count == 0
            and self.insert_count >= self.params.D
            and round_no - self.last_insert_round >= self.params.quiescence_horizon
            and self.current_tid > 0
            and not self.finished
        ):
            self.close_transmission(Outcome.F3, round_no)
            self.begin_transmission(round_no)
        return self.reports[before:]

    # -- testimony intake and detection ----------------------------------

    def _store_testimony(self, parcel):
        rec = self.failed.get(parcel.transmission_id)
        if rec is None or rec.resolved:
            return
        if parcel.owner == self.idx or parcel.owner not in rec.participants:
            return
        if not 0 <= parcel.counterpart < self.params.n or parcel.counterpart == parcel.owner:
            return
        key = (parcel.owner, parcel.counterpart)
        held = rec.testimonies.get(key)
        if held is not None and held.stamp >= parcel.stamp:
            return
        body = core.testimony_auth_bytes(parcel, self.he_ctx)
        if not self.sig_scheme.verify(self.verifiers[parcel.owner], body, parcel.signature):
            return
        rec.testimonies[key] = parcel
        self._after_testimony(rec, parcel.owner)

    def _after_testimony(self, rec: FailureRecord, owner: int):
        needed = self.params.n - 1
        have = sum(1 for (ow, _) in rec.testimonies if ow == owner)
        if have >= needed and owner not in rec.complete_owners:
            rec.complete_owners.add(owner)
            if self.blacklist.get(owner) == (FLAG_BLACKLISTED, rec.transmission_id):
                self._remove_from_blacklist(owner, rec.transmission_id)
        if rec.complete_owners >= rec.participants:
            self._run_detection(rec)

    def _remove_from_blacklist(self, node: int, flag_tid: int):
        del self.blacklist[node]
        self.view.pop(node, None)
        self.removed_flags.add((node, flag_tid))
        self.current_participants.add(node)
        supersedes = self.flag_parcel_idx.pop(node, 0xFFFFFFFF)
        p = AlertParcel(
            self.idx,
            self.current_tid,
            AlertKind.REMOVAL,
            self.alert_next_idx,
            self.alert_total,
            (node, flag_tid, supersedes),
            b"",
        )
        p = replace(p, signature=self.signer.sign(core.alert_auth_bytes(p)))
        self.alert_store.pop(supersedes, None)
        self.alert_store[self.alert_next_idx] = p
        self.alert_next_idx += 1
        if self.trace is not None:
            self.trace.append({"ev": "unblacklist", "node": node, "tid": flag_tid})

    def _run_detection(self, rec: FailureRecord):
        rec.resolved = True
        table = self._assemble_table(rec)
        try:
            if rec.outcome == Outcome.F2:
                x = detect_f2(table)
                rec.detection = "flow-surplus"
            else:
                x = detect_f3(table)
                rec.detection = "conservation"
        except DetectionError:
            rec.detection = "none-found"
            self.undetected_failures += 1
            return
        self.pending_elimination = (x, rec.detection, rec.transmission_id)

    def _assemble_table(self, rec: FailureRecord) -> TestimonyTable:
        entries = {}
        for (owner, cp), tp in rec.testimonies.items():
            entries[(owner, cp)] = Entry(
                phi_out=tp.phi_out,
                phi_in=tp.phi_in,
                phi_self=tp.phi_self,
                psi_self=self.he_ctx.decrypt(tp.psi_self),
                psi_out=self.he_ctx.decrypt(tp.psi_out),
                psi_in=self.he_ctx.decrypt(tp.psi_in),
                stamp=tp.stamp,
            )
        return TestimonyTable(
            n=self.params.n,
            sender=self.idx,
            receiver=self.params.receiver,
            N=self.params.N,
            C=self.params.C,
            participants=rec.participants,
            entries=entries,
            sender_edges=dict(rec.sender_edges),
        )


class ReceiverNode(ProtocolNode):
    """Message sink with a pinned advertised height of zero."""

    def __init__(self, idx, params: ProtocolParams, signer, verifiers, sig_scheme,
                 he_ctx, rng: random.Random, coding_params, trace=None):
        super().__init__(idx, params, signer, verifiers, sig_scheme, he_ctx, rng,
                         trace=trace)
        self.coding_params = coding_params
        self.received: dict[int, bytes] = {}
        self.received_tags: dict[int, object] = {}
        self.decoded = False
        self.alert_raised: AlertKind | None = None
        self.delivered_log: list[tuple[int, bytes]] = []

    def advertised_height(self, peer: int) -> int | None:
        return None if self.halted else 0

    def _select_codeword(self, edge, peer):
        return None

    def _store_received_parcel(self, parcel: CodewordParcel):
        if parcel.parcel_index not in self.received:
            self.received[parcel.parcel_index] = parcel.payload
            self.received_tags[parcel.parcel_index] = parcel.set_tag
        if not self.decoded and len(self.received) >= self.coding_params.data_count:
            message = coding.decode(self.received.items(), self.coding_params)
            self.decoded = True
            self.delivered_log.append((self.current_tid, message))
            self._raise_alert(AlertKind.RECEIVER_DECODED)

    def psi_stored_sum(self):
        acc = self.he_ctx.zero()
        for tag in self.received_tags.values():
            acc = he_add(self.he_ctx, acc, tag)
        return acc

    def _raise_alert(self, kind: AlertKind):
        if self.alert_raised is not None:
            return
        self.alert_raised = kind
        p = AlertParcel(self.idx, self.current_tid, kind, 0, 1, (0, 0, 0), b"")
        p = replace(p, signature=self.signer.sign(core.alert_auth_bytes(p)))
        self.receiver_alert = p
        if self.trace is not None:
            self.trace.append({"ev": "receiver_alert", "kind": kind.name,
                               "tid": self.current_tid})

    def _store_potential(self, parcel):
        if parcel.owner == self.idx:
            return
        super()._store_potential(parcel)
        total = self.phi_total + sum(p.value for p in self.potential_store.values())
        if total > self.params.kCD:
            self._raise_alert(AlertKind.RECEIVER_INCONSISTENT)

    def _advance_transmission(self, new_tid: int):
        super()._advance_transmission(new_tid)
        self.received = {}
        self.received_tags = {}
        self.decoded = False
        self.alert_raised = None
