"""Edge scheduling, packet custody, and misbehaving-node strategies.

The environment controls which single edge is live each round and how
long handed packets sit in custody.  Strategy nodes subclass the honest
state machine and bend exactly the knobs a real deviating device could:
the height it advertises, which parcel it offers, and what it does with
parcels it accepted.  Their transfer counters stay truthful, so the
co-maintained edge records they share with honest neighbours never
diverge by more than the usual in-flight tail.
"""

from __future__ import annotations

import random
from collections import deque

from .node import ProtocolNode


class AdversaryError(Exception):
    pass


class UnknownStrategy(AdversaryError):
    pass


class UnknownSchedule(AdversaryError):
    pass


# ---------------------------------------------------------------------------
# topology


def build_edges(n: int, topology: dict) -> list[tuple[int, int]]:
    kind = topology.get("kind", "complete")
    if kind == "complete":
        return [(a, b) for a in range(n) for b in range(a + 1, n)]
    if kind == "path":
        order = topology.get("order") or list(range(n))
        if sorted(order) != list(range(n)):
            raise AdversaryError("path order must visit every node exactly once")
        return [tuple(sorted((order[i], order[i + 1]))) for i in range(n - 1)]
    if kind == "explicit":
        edges = [tuple(sorted(e)) for e in topology["edges"]]
        if len(set(edges)) != len(edges):
            raise AdversaryError("duplicate edge in explicit topology")
        for a, b in edges:
            if a == b or not (0 <= a < n and 0 <= b < n):
                raise AdversaryError(f"bad edge ({a}, {b})")
        return edges
    raise AdversaryError(f"unknown topology kind {kind!r}")


# ---------------------------------------------------------------------------
# schedules


class Schedule:
    kind = "abstract"

    def pick(self, round_no: int) -> tuple[int, int]:
        raise NotImplementedError


class UniformSchedule(Schedule):
    kind = "uniform"

    def __init__(self, edges, rng: random.Random):
        self.edges = list(edges)
        self.rng = rng

    def pick(self, round_no: int) -> tuple[int, int]:
        return self.edges[self.rng.randrange(len(self.edges))]


class WeightedSchedule(Schedule):
    """Uniform pick skewed by per-edge weights, e.g. to favor one node's edges."""

    kind = "weighted"

    def __init__(self, edges, weights, rng: random.Random):
        self.edges = list(edges)
        if len(weights) != len(self.edges):
            raise AdversaryError("need one weight per edge")
        if min(weights) <= 0:
            raise AdversaryError("weights must be positive")
        self.cum = []
        acc = 0.0
        for w in weights:
            acc += w
            self.cum.append(acc)
        self.rng = rng

    def pick(self, round_no: int) -> tuple[int, int]:
        x = self.rng.random() * self.cum[-1]
        lo, hi = 0, len(self.cum) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if self.cum[mid] < x:
                lo = mid + 1
            else:
                hi = mid
        return self.edges[lo]


class PathSweepSchedule(Schedule):
    """Deterministic repeated sweep along a node order; a drain-friendly worst case."""

    kind = "path_sweep"

    def __init__(self, order):
        self.seq = [tuple(sorted((order[i], order[i + 1]))) for i in range(len(order) - 1)]

    def pick(self, round_no: int) -> tuple[int, int]:
        return self.seq[round_no % len(self.seq)]


class PartitionHealSchedule(Schedule):
    """Alternate between activating only intra-side edges and the full edge set."""

    kind = "partition_then_heal"

    def __init__(self, edges, side, phase_len: int, rng: random.Random):
        self.edges = list(edges)
        side = set(side)
        self.separated = [
            e for e in self.edges
            if (e[0] in side) == (e[1] in side)
        ] or list(self.edges)
        self.phase_len = max(1, phase_len)
        self.rng = rng

    def pick(self, round_no: int) -> tuple[int, int]:
        pool = (
            self.separated
            if (round_no // self.phase_len) % 2 == 0
            else self.edges
        )
        return pool[self.rng.randrange(len(pool))]


class ReplaySchedule(Schedule):
    kind = "replay"

    def __init__(self, seq):
        self.seq = [tuple(e) for e in seq]

    def pick(self, round_no: int) -> tuple[int, int]:
        if round_no - 1 >= len(self.seq):
            raise AdversaryError("replay schedule exhausted")
        return self.seq[round_no - 1]


def make_schedule(edges, rng: random.Random, spec: dict) -> Schedule:
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return UniformSchedule(edges, rng)
    if kind == "weighted":
        if "weights" in spec:
            weights = list(spec["weights"])
        else:
            node = spec["bias_node"]
            factor = float(spec.get("bias_factor", 4.0))
            weights = [factor if node in e else 1.0 for e in edges]
        return WeightedSchedule(edges, weights, rng)
    if kind == "path_sweep":
        return PathSweepSchedule(spec["order"])
    if kind == "partition_then_heal":
        return PartitionHealSchedule(edges, spec["side"], int(spec.get("phase_len", 64)), rng)
    if kind == "replay":
        return ReplaySchedule(spec["seq"])
    raise UnknownSchedule(f"unknown schedule kind {kind!r}")


# ---------------------------------------------------------------------------
# custody


class Custody:
    """Handed-but-undelivered packets, one queue per directed edge."""

    def __init__(self, policy: str = "fifo", rng: random.Random | None = None):
        if policy not in ("fifo", "lifo", "random"):
            raise AdversaryError(f"unknown custody policy {policy!r}")
        self.policy = policy
        self.rng = rng
        self.queues: dict[tuple[int, int], deque] = {}
        self.handed = 0
        self.delivered = 0

    def hand(self, u: int, v: int, pkt):
        self.queues.setdefault((u, v), deque()).append(pkt)
        self.handed += 1

    def deliver(self, u: int, v: int):
        q = self.queues.get((u, v))
        if not q:
            return None
        if self.policy == "fifo":
            pkt = q.popleft()
        elif self.policy == "lifo":
            pkt = q.pop()
        else:
            i = self.rng.randrange(len(q))
            q.rotate(-i)
            pkt = q.popleft()
            q.rotate(i)
        self.delivered += 1
        return pkt

    def pending(self) -> int:
        return self.handed - self.delivered


# ---------------------------------------------------------------------------
# strategies


def resolve_height_token(token, params) -> int | str:
    """Map a config token to a concrete advertised height."""
    if token == "honest":
        return "honest"
    if token == "cap":
        return params.C
    if token == "floor":
        return 0
    if token == "gate1":
        # smallest height whose drop to a zero-height peer clears the gate
        return params.gate_rhs // (2 * params.n) + 1
    if isinstance(token, int):
        if not 0 <= token <= params.C:
            raise AdversaryError(f"advertised height {token} outside 0..C")
        return token
    raise AdversaryError(f"unknown height token {token!r}")


class CorruptNode(ProtocolNode):
    """Shared plumbing: activation trigger, advert map, round bookkeeping."""

    strategy = "corrupt-base"

    def __init__(self, *args, config=None, leaked=None, **kwargs):
        super().__init__(*args, **kwargs)
        self.config = dict(config or {})
        self.leaked = leaked or {}
        self.commit_receives = 0
        self._round = 0
        self._advert = {
            int(k): resolve_height_token(v, self.params)
            for k, v in self.config.get("advert", {}).items()
        }
        trig = self.config.get("trigger") or {}
        self._trigger_round = int(trig.get("round", 0))
        self._trigger_receives = int(trig.get("receives", 0))
        self.targets = {int(t) for t in self.config.get("targets", [])}

    def corrupt_active(self) -> bool:
        return (
            self._round >= self._trigger_round
            and self.commit_receives >= self._trigger_receives
        )

    def on_activation(self, peer, delivered, round_no):
        self._round = round_no
        return super().on_activation(peer, delivered, round_no)

    def _commit_receive(self, edge, peer, parcel, h_from, h_own, round_no):
        self.commit_receives += 1
        super()._commit_receive(edge, peer, parcel, h_from, h_own, round_no)

    def advertised_height(self, peer):
        if self.corrupt_active():
            h = self._advert.get(peer, "honest")
            if h != "honest":
                return h
        h = super().advertised_height(peer)
        if h is not None and self.corrupt_active():
            h = min(h, self.params.C)  # a hoard above C would be rejected outright
        return h

    def halt_check(self):
        pass  # a deviating node has no reason to silence itself

    def _can_exchange(self, peer: int) -> bool:
        if self.corrupt_active():
            # ignores its own flag, but peers enforce theirs regardless
            ok = self.current_tid > 0 and self.alert_complete() and peer not in self.view
            if ok:
                self.participated = True
            return ok
        return super()._can_exchange(peer)


class HeightLyingNode(CorruptNode):
    """Misreports height per the advert map; otherwise runs the honest logic."""

    strategy = "height_lying"


class DuplicationNode(CorruptNode):
    """Interleaves many copies of a small stock between real forwards.

    Every copy is a fully valid transfer on both ends, so the potential
    books inflate at the duplicator while the distinct-parcel count at
    the Receiver crawls.  dup_ratio copies per real forward; with a high
    enough ratio the potential budget blows before decoding succeeds.
    """

    strategy = "duplication"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.stock_size = int(self.config.get("stock_size", self.params.K))
        self.dup_ratio = int(self.config.get("dup_ratio", 16))
        self.pool: list = []
        self._pool_tids: set = set()
        self._serve_count: dict[int, int] = {}

    def _store_received_parcel(self, parcel):
        super()._store_received_parcel(parcel)
        if self.corrupt_active():
            if parcel.transmission_id not in self._pool_tids:
                self.pool.clear()
                self._pool_tids = {parcel.transmission_id}
            if len(self.pool) < self.stock_size:
                self.pool.append(parcel)

    def _select_codeword(self, edge, peer):
        if not self.corrupt_active():
            return super()._select_codeword(edge, peer)
        if self.targets and peer not in self.targets:
            if self.config.get("suppress_others", False):
                return None
            return super()._select_codeword(edge, peer)
        pool = [p for p in self.pool if p.transmission_id == self.current_tid]
        c = self._serve_count.get(peer, 0)
        self._serve_count[peer] = c + 1
        if pool and c % (self.dup_ratio + 1) != 0:
            return pool[c % len(pool)]  # a copy; the stored one stays put
        return super()._select_codeword(edge, peer)

    def _return_to_buffer(self, parcel):
        if any(p is parcel for p in self.pool):
            return  # refused copy; the original never left
        super()._return_to_buffer(parcel)


class UphillBounceNode(CorruptNode):
    """Walks its claimed height up and down to pump parcels back upstream.

    Honest peers discount any height claim that moves faster than one
    level per round, so the claim is walked patiently: drift just below
    the victim to collect parcels cheaply, then climb and push them back
    at an outsized recorded drop.  Every bounce is a real transfer that
    both ends commit identically; the damage is circular flow that burns
    the potential budget while nothing new reaches the Receiver.
    """

    strategy = "uphill"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        p = self.params
        self.gate1 = p.gate_rhs // (2 * p.n) + 1
        # drops below min_drop barely outrun the return-trip cost (about
        # one gate each way), leaving a flow surplus too small to stand
        # out; gather sets how much stock a climb should be worth
        self.min_drop = int(self.config.get("min_drop", p.C // 4))
        self.gather = int(self.config.get("gather", max(4, p.C // 24)))
        # the claim climbs one level per round while the victim refills
        # from upstream at roughly a third of that, so a climb only pays
        # off when it starts well below the ceiling gap it is after
        self.flip_up_at = p.C - (3 * self.min_drop + self.gate1) // 2
        self._claim: dict[int, tuple[int, int]] = {}  # peer -> (value, round sent)
        self._mode: dict[int, str] = {}

    def _walk_claim(self, peer) -> int:
        """Next claim for a victim edge, kept inside the movement budget
        the victim grants since the last claim it saw from us."""
        C = self.params.C
        edge = self.edges.get(peer)
        vict = edge.peer_height if edge is not None else None
        last = self._claim.get(peer)
        if last is None:
            lo, hi = 0, C
        else:
            v, r = last
            lo = max(0, v - (self._round - r))
            hi = min(C, v + (self._round - r))
        if vict is None:
            return lo if last is None else max(lo, min(hi, last[0]))
        stock = len(self.buffer)
        mode = self._mode.get(peer, "down")
        if (
            mode == "down"
            and stock > 0
            and vict <= self.flip_up_at
            and (stock >= self.gather or vict <= self.gate1)
        ):
            mode = "up"
        elif mode == "up" and (stock == 0 or (hi >= C and C - vict < self.min_drop)):
            mode = "down"
        self._mode[peer] = mode
        if mode == "up":
            return hi  # climb; bounces fire along the way once the gap is worth it
        return max(lo, min(hi, max(0, vict - self.gate1)))  # drift under the victim

    def advertised_height(self, peer):
        if self.corrupt_active() and peer in self.targets:
            h = self._walk_claim(peer)
        else:
            h = super().advertised_height(peer)
        if h is not None:
            # every claim actually sent moves the victim's baseline;
            # track them all so the walk never outruns it
            self._claim[peer] = (h, self._round)
        return h

    def _select_codeword(self, edge, peer):
        if not self.corrupt_active():
            return super()._select_codeword(edge, peer)
        if peer in self.targets:
            claim = self._claim.get(peer)
            if (
                claim is not None
                and claim[1] == self._round
                and edge.peer_height is not None
                and claim[0] - edge.peer_height >= self.min_drop
                and self.params.transfer_allowed(claim[0], edge.peer_height)
            ):
                return super()._select_codeword(edge, peer)  # real pop
            return None
        if self.config.get("suppress_others", True):
            return None
        return super()._select_codeword(edge, peer)

    def _advance_transmission(self, new_tid):
        super()._advance_transmission(new_tid)
        self._claim = {}
        self._mode = {}


class ReplacementNode(CorruptNode):
    """Keeps a small stock, swallows everything else, re-offers stock copies.

    Downstream sees an endless drip of the same few parcels; upstream
    sees an always-hungry zero height.  Delivery stalls with every
    transfer honestly counted.
    """

    strategy = "replacement"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.stock_size = int(self.config.get("stock_size", 2 * self.params.K))

    def _store_received_parcel(self, parcel):
        if not self.corrupt_active() or len(self.buffer) < self.stock_size:
            super()._store_received_parcel(parcel)

    def _select_codeword(self, edge, peer):
        if not self.corrupt_active():
            return super()._select_codeword(edge, peer)
        if peer in self.targets and self.buffer:
            return self.buffer[self.rng.randrange(len(self.buffer))]  # copy kept
        return None

    def _return_to_buffer(self, parcel):
        if not self.corrupt_active():
            super()._return_to_buffer(parcel)


class DroppingNode(CorruptNode):
    """Accepts, records, and deletes; never offers anything onward."""

    strategy = "dropping"

    def _store_received_parcel(self, parcel):
        if not self.corrupt_active():
            super()._store_received_parcel(parcel)

    def _select_codeword(self, edge, peer):
        if self.corrupt_active():
            return None
        return super()._select_codeword(edge, peer)


class SetMatchedSwapNode(CorruptNode):
    """White-box strategy: stalls delivery with conservation kept exactly.

    Needs the leaked parcel-to-set map.  The first parcel of each set is
    retained as stock; every further arrival of set j is swallowed and
    answered by one more copy of stock[j].  Per set, copies out equal
    swallowed arrivals in, so the stored + sent - received vector stays
    zero and the conservation audit comes back empty-handed.
    """

    strategy = "set_matched_swap"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        if "chi" not in self.leaked and "sender" not in self.leaked:
            raise AdversaryError("set_matched_swap needs the leaked set map")
        self.stock: dict[int, object] = {}
        self.owed: dict[int, int] = {}

    def _set_of(self, parcel) -> int:
        if "sender" in self.leaked:
            return self.leaked["sender"].chi[parcel.parcel_index]
        return self.leaked["chi"][parcel.parcel_index]

    def _store_received_parcel(self, parcel):
        if not self.corrupt_active():
            super()._store_received_parcel(parcel)
            return
        j = self._set_of(parcel)
        if j not in self.stock:
            self.stock[j] = parcel
            self.buffer.append(parcel)
        else:
            self.owed[j] = self.owed.get(j, 0) + 1

    def _select_codeword(self, edge, peer):
        if not self.corrupt_active():
            return super()._select_codeword(edge, peer)
        if peer not in self.targets:
            return None
        for j, count in sorted(self.owed.items()):
            if count > 0 and j in self.stock:
                return self.stock[j]  # copy; the stored original never leaves
        return None

    def _commit_send(self, edge, peer, parcel, h_from, h_to, round_no):
        super()._commit_send(edge, peer, parcel, h_from, h_to, round_no)
        if self.corrupt_active():
            j = self._set_of(parcel)
            if self.owed.get(j, 0) > 0:
                self.owed[j] -= 1

    def _return_to_buffer(self, parcel):
        if self.corrupt_active() and any(parcel is p for p in self.stock.values()):
            return  # unaccepted copy; the original is still stored
        super()._return_to_buffer(parcel)

    def _advance_transmission(self, new_tid):
        super()._advance_transmission(new_tid)
        self.stock = {}
        self.owed = {}


STRATEGIES = {
    cls.strategy: cls
    for cls in (
        HeightLyingNode,
        DuplicationNode,
        UphillBounceNode,
        ReplacementNode,
        DroppingNode,
        SetMatchedSwapNode,
    )
}


def strategy_class(name: str):
    if name == "honest":
        return ProtocolNode
    try:
        return STRATEGIES[name]
    except KeyError:
        raise UnknownStrategy(
            f"unknown strategy {name!r}; have {sorted(STRATEGIES)}"
        ) from None
