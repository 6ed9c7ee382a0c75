"""Scenario model and the round-by-round network simulation.

A scenario pins every free parameter of a run: network size and shape,
buffer capacity, coding rate, budget multiplier, backends, who is
corrupt and how, and the edge-activation schedule.  Runs are
deterministic functions of the scenario (including its seed): replaying
the same scenario reproduces the same transfers, reports, and metrics
bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from . import adversary, coding, core
from .adversary import Custody, build_edges, make_schedule, strategy_class
from .coding import CodingParams
from .core import Outcome, audit_memory, serialize_packet
from .crypto import (
    Signer,
    _is_prime,
    derive_seed,
    make_he_context,
    next_prime,
    signature_scheme,
)
from .endpoints import ReceiverNode, SenderNode
from .node import ProtocolParams


class SimError(Exception):
    pass


class ScenarioInvalid(SimError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


_RUN_UNTIL = ("messages", "elimination", "first_failure", "max_rounds")


@dataclass
class Scenario:
    name: str = "run"
    seed: int = 0
    n: int = 4
    sender: int = 0
    receiver: int = -1  # -1 means n - 1
    C: int = -1         # -1 means 12 n^2
    k: int = 4
    K: int = -1         # -1 means k
    lam: Fraction = Fraction(1, 2)
    D: int = -1         # -1 means k n C / lam
    N: int = -1         # -1 means first prime above 6 n D
    payload_bits: int = 512
    P_bits: int = 4096
    he_backend: str = "transparent"
    sig_backend: str = "hmac"
    topology: dict = field(default_factory=lambda: {"kind": "complete"})
    schedule: dict = field(default_factory=lambda: {"kind": "uniform"})
    custody: str = "fifo"
    corruption: dict = field(default_factory=dict)
    leak_sets: bool = False
    messages: int = 1
    quiescence_horizon: int = -1  # -1 means 4 n D
    max_rounds: int = -1          # -1 means 400 n D
    run_until: str = "messages"
    check_every: int = 0

    def __post_init__(self):
        if isinstance(self.lam, str):
            self.lam = Fraction(self.lam)
        self.corruption = {int(k): v for k, v in self.corruption.items()}
        if self.receiver == -1:
            self.receiver = self.n - 1
        if self.C == -1:
            self.C = 12 * self.n * self.n
        if self.K == -1:
            self.K = self.k
        if self.D == -1:
            self.D = coding.derive_parcel_count(self.k, self.n, self.C, self.lam)
        if self.N == -1:
            self.N = next_prime(6 * self.n * self.D)
        if self.quiescence_horizon == -1:
            self.quiescence_horizon = 4 * self.n * self.D
        if self.max_rounds == -1:
            self.max_rounds = 400 * self.n * self.D

    # -- validation ------------------------------------------------------

    def validate(self) -> list[str]:
        p = []
        n = self.n
        if n < 3:
            p.append(f"network size: need n >= 3, got {n}")
        ids_ok = 0 <= self.sender < n and 0 <= self.receiver < n
        if not ids_ok or self.sender == self.receiver:
            p.append("endpoints: Sender and Receiver must be distinct in-range nodes")
        if self.C < 12 * n * n:
            p.append(f"capacity: need C >= 12 n^2 = {12 * n * n}, got {self.C}")
        if self.k < 3:
            p.append(f"budget multiplier: need k >= 3, got {self.k}")
        if self.K != self.k:
            p.append(f"set count: K must equal k, got K={self.K} k={self.k}")
        if not 0 < self.lam < 1:
            p.append(f"loss fraction: need 0 < lam < 1, got {self.lam}")
        else:
            if (self.lam * self.D).denominator != 1:
                p.append(f"loss fraction: lam*D must be integral (lam={self.lam}, D={self.D})")
            elif self.D - int(self.lam * self.D) < 1:
                p.append("loss fraction: need at least one data parcel")
        if not 2 <= self.D <= 65535:
            p.append(f"parcel count: need 2 <= D <= 65535, got {self.D}")
        if self.N <= 3 * n * self.D:
            p.append(f"modulus: need N > 3 n D = {3 * n * self.D}, got {self.N}")
        elif not _is_prime(self.N):
            p.append(f"modulus: N={self.N} is not prime")
        if self.payload_bits <= 0 or self.payload_bits % 16:
            p.append(f"payload: need a positive multiple of 16 bits, got {self.payload_bits}")
        if self.he_backend not in ("transparent", "exp-elgamal"):
            p.append(f"backend: unknown homomorphic backend {self.he_backend!r}")
        if self.sig_backend not in ("hmac", "ed25519"):
            p.append(f"backend: unknown signature backend {self.sig_backend!r}")
        if self.custody not in ("fifo", "lifo", "random"):
            p.append(f"custody: unknown policy {self.custody!r}")
        if self.run_until not in _RUN_UNTIL:
            p.append(f"run-until: unknown stop rule {self.run_until!r}")
        if self.messages < 1:
            p.append("messages: need at least one")
        if self.max_rounds < 1 or self.quiescence_horizon < 1:
            p.append("rounds: max_rounds and quiescence_horizon must be positive")

        try:
            edges = build_edges(n, self.topology)
        except adversary.AdversaryError as e:
            p.append(f"topology: {e}")
            edges = []
        if edges and ids_ok:
            seen, frontier = {self.sender}, [self.sender]
            adj = {}
            for a, b in edges:
                adj.setdefault(a, []).append(b)
                adj.setdefault(b, []).append(a)
            while frontier:
                x = frontier.pop()
                for y in adj.get(x, ()):
                    if y not in seen:
                        seen.add(y)
                        frontier.append(y)
            if len(seen) != n:
                p.append("topology: the graph must connect every node")
        if self.schedule.get("kind", "uniform") not in (
            "uniform", "weighted", "path_sweep", "partition_then_heal", "replay"
        ):
            p.append(f"schedule: unknown kind {self.schedule.get('kind')!r}")

        for node, spec in self.corruption.items():
            if not 0 <= node < n or node in (self.sender, self.receiver):
                p.append(f"corruption: node {node} is not an internal node")
            try:
                strategy_class(spec.get("strategy", "honest"))
            except adversary.UnknownStrategy as e:
                p.append(f"corruption: {e}")
        return p

    # -- serialization ---------------------------------------------------

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["lam"] = str(self.lam)
        d["corruption"] = {str(k): v for k, v in self.corruption.items()}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Scenario":
        return cls(**d)


def make_scenario(**kwargs) -> Scenario:
    sc = Scenario(**kwargs)
    problems = sc.validate()
    if problems:
        raise ScenarioInvalid(problems)
    return sc


def load_scenario(path) -> Scenario:
    with open(path) as f:
        sc = Scenario.from_json(json.load(f))
    problems = sc.validate()
    if problems:
        raise ScenarioInvalid(problems)
    return sc


# ---------------------------------------------------------------------------
# system assembly


@dataclass
class System:
    scenario: Scenario
    params: ProtocolParams
    coding: CodingParams
    nodes: list
    edges: list
    schedule: object
    custody: Custody
    he_full: object
    sig_scheme: object
    messages: list
    corrupt_ids: frozenset
    trace: list | None


def build_system(scenario: Scenario, trace: list | None = None,
                 schedule_override=None) -> System:
    sc = scenario
    he_full = make_he_context(sc.he_backend, sc.K, sc.N, derive_seed(sc.seed, "he"))
    he_pub = he_full.public_view()
    sig = signature_scheme(sc.sig_backend)
    pairs = sig.keygen(derive_seed(sc.seed, "keys"), sc.n)
    verifiers = [kp.verification_key for kp in pairs]

    cp = CodingParams(sc.D, sc.lam, sc.payload_bits)
    msg_rng = random.Random(derive_seed(sc.seed, "messages"))
    messages = [msg_rng.randbytes(cp.message_bits // 8) for _ in range(sc.messages)]

    params = ProtocolParams(
        n=sc.n, sender=sc.sender, receiver=sc.receiver, C=sc.C, P_bits=sc.P_bits,
        k=sc.k, K=sc.K, lam=sc.lam, D=sc.D, N=sc.N, payload_bits=sc.payload_bits,
        quiescence_horizon=sc.quiescence_horizon,
    )

    overhead = core.control_overhead_bits(he_full, sig.sig_bytes)
    if sc.payload_bits + overhead > sc.P_bits:
        raise ScenarioInvalid(
            [f"packet budget: payload {sc.payload_bits} + control {overhead} "
             f"exceeds P = {sc.P_bits} bits"]
        )

    nodes: list = [None] * sc.n
    sender = SenderNode(
        sc.sender, params, Signer(sc.sender, sig, pairs[sc.sender].signing_key),
        verifiers, sig, he_full, random.Random(derive_seed(sc.seed, f"node{sc.sender}")),
        messages, cp, trace=trace,
    )
    nodes[sc.sender] = sender
    for i in range(sc.n):
        if i == sc.sender:
            continue
        rng_i = random.Random(derive_seed(sc.seed, f"node{i}"))
        signer = Signer(i, sig, pairs[i].signing_key)
        if i == sc.receiver:
            nodes[i] = ReceiverNode(i, params, signer, verifiers, sig, he_pub,
                                    rng_i, cp, trace=trace)
        elif i in sc.corruption:
            spec = sc.corruption[i]
            cls = strategy_class(spec.get("strategy", "honest"))
            leaked = {"sender": sender} if sc.leak_sets else {}
            kw = {}
            if cls is not adversary.ProtocolNode:
                kw = {"config": spec.get("config", {}), "leaked": leaked}
            nodes[i] = cls(i, params, signer, verifiers, sig, he_pub, rng_i,
                           trace=trace, **kw)
        else:
            nodes[i] = adversary.ProtocolNode(i, params, signer, verifiers, sig,
                                              he_pub, rng_i, trace=trace)

    edges = build_edges(sc.n, sc.topology)
    schedule = schedule_override or make_schedule(
        edges, random.Random(derive_seed(sc.seed, "schedule")), sc.schedule
    )
    custody = Custody(sc.custody, random.Random(derive_seed(sc.seed, "custody")))
    return System(
        scenario=sc, params=params, coding=cp, nodes=nodes, edges=edges,
        schedule=schedule, custody=custody, he_full=he_full, sig_scheme=sig,
        messages=messages, corrupt_ids=frozenset(sc.corruption), trace=trace,
    )


# ---------------------------------------------------------------------------
# run loop


@dataclass
class RunResult:
    scenario: dict
    rounds: int
    stop_reason: str
    reports: list
    outcome_counts: dict
    delivered_messages: int
    delivered_ok: bool
    eliminations: list
    undetected_failures: int
    invariant_failures: list
    max_memory_bits: dict
    memory_by_category: dict
    receiver_distinct: int
    potentials: dict
    custody_pending: int
    max_psi_coord: int = 0
    schedule_record: list | None = None
    events: list | None = None

    def to_json(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("events",)}
        d["max_memory_bits"] = {str(k): v for k, v in self.max_memory_bits.items()}
        d["memory_by_category"] = {
            str(k): v for k, v in self.memory_by_category.items()
        }
        d["potentials"] = {str(k): v for k, v in self.potentials.items()}
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _conservation_failures(system: System, round_no: int) -> list[str]:
    """Exact per-node identity: stored + sent - received == 0 (honest nodes)."""
    sc = system.scenario
    ctx = system.he_full
    out = []
    for i, node in enumerate(system.nodes):
        if i in (sc.sender, sc.receiver) or i in system.corrupt_ids:
            continue
        total = list(ctx.decrypt(node.psi_stored_sum()))
        for e in node.edges.values():
            vo = ctx.decrypt(e.psi_out)
            vi = ctx.decrypt(e.psi_in)
            for j in range(sc.K):
                total[j] = (total[j] + vo[j] - vi[j]) % sc.N
        if any(total):
            out.append(
                f"round {round_no}: node {i} conservation residue {tuple(total)}"
            )
    return out


def _audit(system: System, round_no: int, caps: core.MemoryCaps,
           max_bits: dict, by_cat: dict, failures: list,
           extremes: dict | None = None):
    failures.extend(_conservation_failures(system, round_no))
    sc = system.scenario
    if extremes is not None:
        # largest decrypted counter coordinate on any honest node's books;
        # staying short of N - 1 is what rules out a silent wrap
        top = extremes.get("psi_coord", 0)
        ctx = system.he_full
        for i, node in enumerate(system.nodes):
            if i in system.corrupt_ids:
                continue
            vecs = [node.psi_stored_sum()]
            for e in node.edges.values():
                vecs.append(e.psi_out)
                vecs.append(e.psi_in)
            for v in vecs:
                top = max(top, max(ctx.decrypt(v)))
        extremes["psi_coord"] = top
    for i, node in enumerate(system.nodes):
        if i in system.corrupt_ids:
            continue
        led = audit_memory(node)
        if i not in (sc.sender, sc.receiver):
            for problem in caps.check(led):
                failures.append(f"round {round_no}: node {i} memory: {problem}")
        max_bits[i] = max(max_bits.get(i, 0), led.total_bits)
        cats = by_cat.setdefault(i, {})
        for cat in ("codeword", "alert", "status", "potential", "testimony"):
            bits = getattr(led, f"{cat}_bits" if cat != "status" else "status_bits")
            cats[cat] = max(cats.get(cat, 0), bits)


def run(scenario: Scenario, collect_trace: bool = False,
        record_schedule: bool = False, schedule_override=None) -> RunResult:
    trace: list | None = [] if collect_trace else None
    system = build_system(scenario, trace=trace, schedule_override=schedule_override)
    sc = scenario
    nodes, custody, schedule = system.nodes, system.custody, system.schedule
    sender: SenderNode = nodes[sc.sender]
    receiver: ReceiverNode = nodes[sc.receiver]
    caps = core.MemoryCaps(sc.C, sc.n)

    failures: list[str] = []
    max_bits: dict = {}
    by_cat: dict = {}
    extremes: dict = {"psi_coord": 0}
    reports = []
    eliminations = []
    schedule_record = [] if record_schedule else None

    sender.begin_transmission(0)
    stop_reason = "max-rounds"
    round_no = 0
    for round_no in range(1, sc.max_rounds + 1):
        try:
            u, v = schedule.pick(round_no)
        except adversary.AdversaryError:
            stop_reason = "schedule-exhausted"
            round_no -= 1
            break
        if schedule_record is not None:
            schedule_record.append((u, v))
        pkt_u = custody.deliver(v, u)
        pkt_v = custody.deliver(u, v)
        out_u = nodes[u].on_activation(v, pkt_u, round_no)
        out_v = nodes[v].on_activation(u, pkt_v, round_no)
        custody.hand(u, v, out_u)
        custody.hand(v, u, out_v)

        new_reports = sender.lifecycle_step(round_no)
        for r in new_reports:
            reports.append(r)
            if r.outcome == Outcome.F4:
                eliminations.append(
                    {"round": round_no, "node": r.eliminated, "via": r.detection,
                     "transmission_id": r.transmission_id}
                )
        audited = False
        if new_reports:
            # every transmission boundary gets a full invariant audit
            _audit(system, round_no, caps, max_bits, by_cat, failures, extremes)
            audited = True

        if sc.check_every and round_no % sc.check_every == 0:
            if not audited:
                _audit(system, round_no, caps, max_bits, by_cat, failures, extremes)
            for pkt in (out_u, out_v):
                data = serialize_packet(pkt, system.he_full)
                if len(data) * 8 > sc.P_bits:
                    failures.append(
                        f"round {round_no}: packet of {len(data) * 8} bits exceeds P"
                    )

        if sender.finished:
            stop_reason = "messages-delivered"
            break
        if sc.run_until == "elimination" and eliminations:
            stop_reason = "elimination"
            break
        if sc.run_until == "first_failure" and any(
            r.outcome in (Outcome.F2, Outcome.F3, Outcome.F4) for r in reports
        ):
            stop_reason = "failure"
            break

    _audit(system, round_no, caps, max_bits, by_cat, failures, extremes)
    for node in nodes:
        failures.extend(
            f"node {node.idx}: {msg}" for msg in node.invariant_failures
        )

    delivered = [m for _, m in receiver.delivered_log]
    delivered_ok = delivered == system.messages[: len(delivered)]
    counts: dict = {}
    for r in reports:
        counts[r.outcome.name] = counts.get(r.outcome.name, 0) + 1

    return RunResult(
        scenario=sc.to_json(),
        rounds=round_no,
        stop_reason=stop_reason,
        reports=[r.to_json() for r in reports],
        outcome_counts=counts,
        delivered_messages=len(delivered),
        delivered_ok=delivered_ok,
        eliminations=eliminations,
        undetected_failures=sender.undetected_failures,
        invariant_failures=failures,
        max_memory_bits=max_bits,
        memory_by_category=by_cat,
        receiver_distinct=len(receiver.received),
        potentials={i: nodes[i].phi_total for i in range(sc.n)},
        custody_pending=custody.pending(),
        max_psi_coord=extremes["psi_coord"],
        schedule_record=schedule_record,
        events=trace,
    )


def replay(scenario: Scenario, schedule_record) -> RunResult:
    """Re-run a recorded activation sequence; byte-identical when honest."""
    return run(
        scenario,
        record_schedule=True,
        schedule_override=adversary.ReplaySchedule(schedule_record),
    )


# ---------------------------------------------------------------------------
# persistence


def save_run(outdir, scenario: Scenario, result: RunResult):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scenario.json", "w") as f:
        json.dump(scenario.to_json(), f, indent=2, default=str)
        f.write("\n")
    report = result.to_json()
    report["fingerprint"] = result.fingerprint()
    with open(out / "report.json", "w") as f:
        json.dump(report, f, indent=2, default=str)
        f.write("\n")
    with open(out / "transmissions.jsonl", "w") as f:
        for r in result.reports:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    if result.events is not None:
        with open(out / "trace.jsonl", "w") as f:
            for ev in result.events:
                f.write(json.dumps(ev, sort_keys=True, default=str) + "\n")
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["transmission_id", "message_index", "outcome", "start_round",
             "end_round", "inserted", "eliminated", "detection"]
        )
        for r in result.reports:
            w.writerow(
                [r["transmission_id"], r["message_index"], r["outcome"],
                 r["start_round"], r["end_round"], r["inserted"],
                 r["eliminated"], r["detection"]]
            )
    return out
