"""Core data model: parcels, packets, wire format, and memory accounting.

Everything a node stores or hands to the scheduler is one of the parcel
types below, bundled into a Packet.  The wire format is versioned and
deterministic: fixed field order, little-endian integers, one flag byte
marking which optional parcels are present.  Signatures are computed over
the same encoding minus the signature field itself, so wire bytes and
authenticated bytes can never drift apart.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

from .crypto import HEContext, HEVector

WIRE_VERSION = 1


class CoreError(Exception):
    pass


class OversizePacket(CoreError):
    """Serialized packet exceeds the scenario's packet bit budget P."""


class MalformedPacket(CoreError):
    pass


class Role(IntEnum):
    SENDER = 0
    INTERNAL = 1
    RECEIVER = 2


@dataclass(frozen=True)
class NodeId:
    index: int
    role: Role


def make_roster(n: int, sender: int = 0, receiver: int | None = None) -> list[NodeId]:
    """Node identities for an n-node network with one sender and one receiver."""
    if n < 3:
        raise CoreError("need n >= 3: sender, receiver, and an internal node")
    if receiver is None:
        receiver = n - 1
    if sender == receiver or not (0 <= sender < n and 0 <= receiver < n):
        raise CoreError("sender/receiver indices invalid")
    roster = []
    for i in range(n):
        role = Role.SENDER if i == sender else Role.RECEIVER if i == receiver else Role.INTERNAL
        roster.append(NodeId(i, role))
    return roster


class Outcome(IntEnum):
    START = 0
    S1 = 1   # receiver decoded
    F2 = 2   # potential inconsistency reported by receiver
    F3 = 3   # all parcels inserted, no decode within the quiescence horizon
    F4 = 4   # a node was eliminated mid-transmission


class AlertKind(IntEnum):
    PREV_STATUS = 0
    FAILED_STAMP = 1
    NODE_FLAG = 2
    REMOVAL = 3
    RECEIVER_DECODED = 4
    RECEIVER_INCONSISTENT = 5


FLAG_BLACKLISTED = 1
FLAG_ELIMINATED = 2


@dataclass(frozen=True)
class CodewordParcel:
    transmission_id: int
    parcel_index: int
    payload: bytes
    set_tag: HEVector
    sender_signature: bytes


@dataclass(frozen=True)
class StatusParcel:
    """Co-maintained per-edge transfer totals, emitted by `a` about edge (a, b).

    `signature` is the emitter's; `counter_signature` is the other
    endpoint's signature over the same canonical body, carried once the
    emitter has received a matching status back (empty until then).
    """

    transmission_id: int
    a: int
    b: int
    phi_ab: int
    phi_ba: int
    psi_ab: HEVector
    psi_ba: HEVector
    stamp: int
    signature: bytes
    counter_signature: bytes = b""


@dataclass(frozen=True)
class AlertParcel:
    origin: int
    transmission_id: int
    kind: AlertKind
    index: int
    total_initial: int
    payload: tuple
    signature: bytes


@dataclass(frozen=True)
class PotentialParcel:
    owner: int
    transmission_id: int
    value: int
    signature: bytes


@dataclass(frozen=True)
class TestimonyParcel:
    """One edge entry of a node's frozen end-of-transmission snapshot."""

    owner: int
    counterpart: int
    transmission_id: int
    phi_out: int
    phi_in: int
    phi_self: int
    psi_self: HEVector
    psi_out: HEVector
    psi_in: HEVector
    stamp: int
    signature: bytes


@dataclass
class Packet:
    sender_id: int
    receiver_id: int
    transmission_id: int
    seq: int
    height: int | None
    codeword: CodewordParcel | None = None
    alert: AlertParcel | None = None
    status: StatusParcel | None = None
    potential: PotentialParcel | None = None
    testimony: TestimonyParcel | None = None
    signature: bytes = b""


# ---------------------------------------------------------------------------
# wire encoding

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def _sig(out: list, sig: bytes):
    out.append(_U8.pack(len(sig)))
    out.append(sig)


def codeword_auth_bytes(p: CodewordParcel, ctx: HEContext) -> bytes:
    return b"".join(
        (
            _U32.pack(p.transmission_id),
            _U32.pack(p.parcel_index),
            _U16.pack(len(p.payload)),
            p.payload,
            ctx.vector_pack(p.set_tag),
        )
    )


def status_auth_bytes(p: StatusParcel, ctx: HEContext) -> bytes:
    """Canonical signed body of a status parcel.

    Counters are laid out in fixed node order (low id first) rather than
    emitter order, so the two endpoints of an edge sign byte-identical
    bodies whenever their ledgers agree.  One node's signature then
    doubles as the countersignature of the other's parcel with no extra
    handshake.
    """
    if p.a < p.b:
        lo, hi = p.a, p.b
        phi_l, phi_h, psi_l, psi_h = p.phi_ab, p.phi_ba, p.psi_ab, p.psi_ba
    else:
        lo, hi = p.b, p.a
        phi_l, phi_h, psi_l, psi_h = p.phi_ba, p.phi_ab, p.psi_ba, p.psi_ab
    return b"".join(
        (
            _U32.pack(p.transmission_id),
            _U8.pack(lo),
            _U8.pack(hi),
            _U64.pack(phi_l),
            _U64.pack(phi_h),
            ctx.vector_pack(psi_l),
            ctx.vector_pack(psi_h),
            _U32.pack(p.stamp),
        )
    )


def _status_wire_bytes(p: StatusParcel, ctx: HEContext) -> bytes:
    # emitter-ordered layout; the canonical ordering lives only in the
    # signed body so the wire keeps the direction of the claims
    return b"".join(
        (
            _U32.pack(p.transmission_id),
            _U8.pack(p.a),
            _U8.pack(p.b),
            _U64.pack(p.phi_ab),
            _U64.pack(p.phi_ba),
            ctx.vector_pack(p.psi_ab),
            ctx.vector_pack(p.psi_ba),
            _U32.pack(p.stamp),
        )
    )


def alert_auth_bytes(p: AlertParcel) -> bytes:
    pay = list(p.payload) + [0] * (3 - len(p.payload))
    return b"".join(
        (
            _U8.pack(p.origin),
            _U32.pack(p.transmission_id),
            _U8.pack(int(p.kind)),
            _U16.pack(p.index),
            _U16.pack(p.total_initial),
            struct.pack("<3I", *pay),
        )
    )


def potential_auth_bytes(p: PotentialParcel) -> bytes:
    return b"".join((_U8.pack(p.owner), _U32.pack(p.transmission_id), _U64.pack(p.value)))


def testimony_auth_bytes(p: TestimonyParcel, ctx: HEContext) -> bytes:
    return b"".join(
        (
            _U8.pack(p.owner),
            _U8.pack(p.counterpart),
            _U32.pack(p.transmission_id),
            _U64.pack(p.phi_out),
            _U64.pack(p.phi_in),
            _U64.pack(p.phi_self),
            ctx.vector_pack(p.psi_self),
            ctx.vector_pack(p.psi_out),
            ctx.vector_pack(p.psi_in),
            _U32.pack(p.stamp),
        )
    )


def packet_body_bytes(pkt: Packet, ctx: HEContext) -> bytes:
    """Everything except the packet signature; this is what gets signed."""
    flags = 0
    if pkt.codeword is not None:
        flags |= 1
    if pkt.alert is not None:
        flags |= 2
    if pkt.status is not None:
        flags |= 4
    if pkt.potential is not None:
        flags |= 8
    if pkt.testimony is not None:
        flags |= 16
    if pkt.height is None:
        flags |= 32
    out = [
        _U8.pack(WIRE_VERSION),
        _U8.pack(flags),
        _U8.pack(pkt.sender_id),
        _U8.pack(pkt.receiver_id),
        _U32.pack(pkt.transmission_id),
        _U32.pack(pkt.seq),
        _U32.pack(pkt.height if pkt.height is not None else 0),
    ]
    if pkt.codeword is not None:
        out.append(codeword_auth_bytes(pkt.codeword, ctx))
        _sig(out, pkt.codeword.sender_signature)
    if pkt.alert is not None:
        out.append(alert_auth_bytes(pkt.alert))
        _sig(out, pkt.alert.signature)
    if pkt.status is not None:
        out.append(_status_wire_bytes(pkt.status, ctx))
        _sig(out, pkt.status.signature)
        _sig(out, pkt.status.counter_signature)
    if pkt.potential is not None:
        out.append(potential_auth_bytes(pkt.potential))
        _sig(out, pkt.potential.signature)
    if pkt.testimony is not None:
        out.append(testimony_auth_bytes(pkt.testimony, ctx))
        _sig(out, pkt.testimony.signature)
    return b"".join(out)


def serialize_packet(pkt: Packet, ctx: HEContext, limit_bits: int | None = None) -> bytes:
    data = packet_body_bytes(pkt, ctx) + _U8.pack(len(pkt.signature)) + pkt.signature
    if limit_bits is not None and len(data) * 8 > limit_bits:
        raise OversizePacket(f"{len(data) * 8} bits exceeds the {limit_bits}-bit budget")
    return data


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def u8(self):
        v = self.data[self.off]
        self.off += 1
        return v

    def u16(self):
        (v,) = _U16.unpack_from(self.data, self.off)
        self.off += 2
        return v

    def u32(self):
        (v,) = _U32.unpack_from(self.data, self.off)
        self.off += 4
        return v

    def u64(self):
        (v,) = _U64.unpack_from(self.data, self.off)
        self.off += 8
        return v

    def raw(self, n):
        v = self.data[self.off : self.off + n]
        if len(v) != n:
            raise MalformedPacket("truncated packet")
        self.off += n
        return v

    def sig(self):
        return self.raw(self.u8())

    def vec(self, ctx):
        v, self.off = ctx.vector_unpack(self.data, self.off)
        return v


def deserialize_packet(data: bytes, ctx: HEContext) -> Packet:
    try:
        r = _Reader(data)
        if r.u8() != WIRE_VERSION:
            raise MalformedPacket("unknown wire version")
        flags = r.u8()
        sender, receiver = r.u8(), r.u8()
        tid, seq, height_raw = r.u32(), r.u32(), r.u32()
        height = None if flags & 32 else height_raw
        pkt = Packet(sender, receiver, tid, seq, height)
        if flags & 1:
            cw_tid, idx = r.u32(), r.u32()
            payload = r.raw(r.u16())
            tag = r.vec(ctx)
            pkt.codeword = CodewordParcel(cw_tid, idx, payload, tag, r.sig())
        if flags & 2:
            origin, a_tid, kind = r.u8(), r.u32(), AlertKind(r.u8())
            index, total = r.u16(), r.u16()
            pay = struct.unpack_from("<3I", r.data, r.off)
            r.off += 12
            pkt.alert = AlertParcel(origin, a_tid, kind, index, total, pay, r.sig())
        if flags & 4:
            s_tid, a, b = r.u32(), r.u8(), r.u8()
            phi_ab, phi_ba = r.u64(), r.u64()
            psi_ab, psi_ba = r.vec(ctx), r.vec(ctx)
            stamp = r.u32()
            pkt.status = StatusParcel(
                s_tid, a, b, phi_ab, phi_ba, psi_ab, psi_ba, stamp, r.sig(), r.sig()
            )
        if flags & 8:
            owner, p_tid, value = r.u8(), r.u32(), r.u64()
            pkt.potential = PotentialParcel(owner, p_tid, value, r.sig())
        if flags & 16:
            owner, cp, t_tid = r.u8(), r.u8(), r.u32()
            phi_out, phi_in, phi_self = r.u64(), r.u64(), r.u64()
            psi_self, psi_out, psi_in = r.vec(ctx), r.vec(ctx), r.vec(ctx)
            stamp = r.u32()
            pkt.testimony = TestimonyParcel(
                owner, cp, t_tid, phi_out, phi_in, phi_self, psi_self, psi_out, psi_in, stamp, r.sig()
            )
        pkt.signature = r.sig()
        if r.off != len(data):
            raise MalformedPacket("trailing bytes")
        return pkt
    except (struct.error, IndexError, ValueError) as exc:
        raise MalformedPacket(str(exc)) from exc


# ---------------------------------------------------------------------------
# per-parcel wire sizes (bits), used for budgets and memory accounting


def codeword_wire_bits(payload_bytes: int, ctx: HEContext, sig_bytes: int) -> int:
    return 8 * (4 + 4 + 2 + payload_bytes + ctx.vector_wire_bytes() + 1 + sig_bytes)


def status_wire_bits(ctx: HEContext, sig_bytes: int) -> int:
    # two signature slots: emitter plus countersignature
    return 8 * (4 + 1 + 1 + 8 + 8 + 2 * ctx.vector_wire_bytes() + 4 + 2 * (1 + sig_bytes))


def alert_wire_bits(sig_bytes: int) -> int:
    return 8 * (1 + 4 + 1 + 2 + 2 + 12 + 1 + sig_bytes)


def potential_wire_bits(sig_bytes: int) -> int:
    return 8 * (1 + 4 + 8 + 1 + sig_bytes)


def testimony_wire_bits(ctx: HEContext, sig_bytes: int) -> int:
    return 8 * (1 + 1 + 4 + 24 + 3 * ctx.vector_wire_bytes() + 4 + 1 + sig_bytes)


def packet_header_bits(sig_bytes: int) -> int:
    return 8 * (1 + 1 + 1 + 1 + 4 + 4 + 4 + 1 + sig_bytes)


def control_overhead_bits(ctx: HEContext, sig_bytes: int) -> int:
    """Worst-case bits of one packet beyond the codeword payload.

    Reserved up front so scenario validation can reject payload sizes that
    could ever produce an oversize honest packet.
    """
    return (
        packet_header_bits(sig_bytes)
        + codeword_wire_bits(0, ctx, sig_bytes)
        + alert_wire_bits(sig_bytes)
        + status_wire_bits(ctx, sig_bytes)
        + potential_wire_bits(sig_bytes)
        + testimony_wire_bits(ctx, sig_bytes)
    )


# ---------------------------------------------------------------------------
# memory accounting


@dataclass
class MemoryLedger:
    """Snapshot of everything one node currently stores, in parcels and bits."""

    node: int
    codeword_parcels: int = 0
    codeword_bits: int = 0
    alert_parcels: int = 0
    alert_bits: int = 0
    status_entries: int = 0
    status_bits: int = 0
    potential_parcels: int = 0
    potential_bits: int = 0
    testimony_parcels: int = 0
    testimony_bits: int = 0

    @property
    def total_bits(self) -> int:
        return (
            self.codeword_bits
            + self.alert_bits
            + self.status_bits
            + self.potential_bits
            + self.testimony_bits
        )

    @property
    def total_parcels(self) -> int:
        return (
            self.codeword_parcels
            + self.alert_parcels
            + self.status_entries
            + self.potential_parcels
            + self.testimony_parcels
        )


@dataclass
class MemoryCaps:
    """Structural storage caps for one internal node on an n-node network."""

    C: int
    n: int

    def check(self, ledger: MemoryLedger) -> list[str]:
        n = self.n
        problems = []
        if ledger.codeword_parcels > self.C:
            problems.append(f"codeword parcels {ledger.codeword_parcels} > C={self.C}")
        if ledger.alert_parcels > 2 * n:
            problems.append(f"alert parcels {ledger.alert_parcels} > 2n={2 * n}")
        if ledger.status_entries > n:
            problems.append(f"status entries {ledger.status_entries} > n={n}")
        if ledger.potential_parcels > n:
            problems.append(f"potential parcels {ledger.potential_parcels} > n={n}")
        if ledger.testimony_parcels > n * n:
            problems.append(f"testimony parcels {ledger.testimony_parcels} > n^2={n * n}")
        return problems


def audit_memory(node) -> MemoryLedger:
    """Walk a node's stored state and price it with wire sizes.

    Works on any object exposing the storage attributes of the node state
    machine (buffer, alert/potential/testimony stores, edge records).
    """
    ctx = node.he_ctx
    sig_bytes = node.sig_scheme.sig_bytes
    led = MemoryLedger(node.idx)

    payload_bytes = node.params.payload_bits // 8
    cw_bits = codeword_wire_bits(payload_bytes, ctx, sig_bytes)
    count = node.buffer_occupancy()
    led.codeword_parcels = count
    led.codeword_bits = count * cw_bits

    a_bits = alert_wire_bits(sig_bytes)
    for store in node.alert_parcels_stored():
        led.alert_parcels += 1
        led.alert_bits += a_bits
    if node.receiver_alert is not None:
        led.alert_parcels += 1
        led.alert_bits += a_bits

    s_bits = status_wire_bits(ctx, sig_bytes)
    led.status_entries = len(node.edges)
    led.status_bits = led.status_entries * s_bits

    p_bits = potential_wire_bits(sig_bytes)
    led.potential_parcels = len(node.potential_store)
    led.potential_bits = led.potential_parcels * p_bits

    t_bits = testimony_wire_bits(ctx, sig_bytes)
    own = len(node.own_testimony)
    led.testimony_parcels = len(node.testimony_store) + own
    led.testimony_bits = led.testimony_parcels * t_bits
    return led
