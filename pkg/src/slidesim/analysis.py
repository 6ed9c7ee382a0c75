"""Probability facts and the ideal-throughput comparison harness.

Two independent pieces of supporting math live here.  The first is the
balls-into-buckets argument behind the replacement detector: exact
multinomial probabilities, the balanced-occupancy extremes, and the
closed-form ceiling on how often a forger's pre-committed spill pattern
can come true.  The second is an omniscient-router oracle: max flow on
a time-expanded copy of a recorded schedule, giving the delivery count
no protocol could beat, plus a descriptive report of how a simulated
run compares against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterator, Sequence

import networkx as nx
import numpy as np


class AnalysisError(Exception):
    pass


class InvalidInstance(AnalysisError):
    pass


# ---------------------------------------------------------------- multinomial


@dataclass(frozen=True)
class BallsBucketsInstance:
    """m unlabelled balls thrown uniformly into k labelled buckets,
    asked to land exactly on the target occupancy vector."""

    m: int
    k: int
    target: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "target", tuple(self.target))
        if self.k < 1 or self.m < self.k:
            raise InvalidInstance("need m >= k >= 1")
        if len(self.target) != self.k:
            raise InvalidInstance("target length must equal the bucket count")
        if any(c < 0 for c in self.target):
            raise InvalidInstance("negative bucket occupancy")
        if sum(self.target) != self.m:
            raise InvalidInstance("target does not place every ball")


def multinomial_prob(inst: BallsBucketsInstance) -> Fraction:
    """Exact chance that uniform throws land on the target occupancies."""
    denom = math.prod(math.factorial(c) for c in inst.target)
    return Fraction(math.factorial(inst.m), denom * inst.k**inst.m)


def max_prob_bound(k: int) -> float:
    """Ceiling on the probability of the likeliest occupancy vector.

    sqrt(e*k) / sqrt(2*pi)^(k-1).  Exceeds 1 below three buckets, so it
    only starts to bite once the counters are split a few ways; by k=8
    it is under one percent.
    """
    if k < 1:
        raise InvalidInstance("need at least one bucket")
    return math.sqrt(math.e * k) / (2.0 * math.pi) ** ((k - 1) / 2.0)


def compositions(m: int, k: int) -> Iterator[tuple[int, ...]]:
    """Every ordered split of m into k nonnegative parts."""
    if k == 1:
        yield (m,)
        return
    for first in range(m + 1):
        for rest in compositions(m - first, k - 1):
            yield (first,) + rest


def balanced_targets(m: int, k: int) -> list[tuple[int, ...]]:
    """All occupancy vectors whose parts differ pairwise by at most one."""
    q, r = divmod(m, k)
    out = set()
    for hot in combinations(range(k), r):
        v = [q] * k
        for i in hot:
            v[i] += 1
        out.add(tuple(v))
    return sorted(out)


def most_likely_targets(m: int, k: int) -> list[tuple[int, ...]]:
    """Exhaustive argmax of the occupancy probability; small m only."""
    best: Fraction | None = None
    arg: list[tuple[int, ...]] = []
    for v in compositions(m, k):
        p = multinomial_prob(BallsBucketsInstance(m, k, v))
        if best is None or p > best:
            best, arg = p, [v]
        elif p == best:
            arg.append(v)
    return sorted(arg)


def concealment_hits(k: int, m: int, trials: int, seed: int = 0) -> int:
    """How often uniform throws hit one pre-committed likeliest vector.

    Models a packet forger who must guess, before the books are opened,
    how its substitutions spill across the hidden counter sets; the
    stalled-transmission audit misses it only when the guess is exact.
    The hit fraction stays below max_prob_bound(k) up to sampling noise.
    """
    if trials < 1:
        raise InvalidInstance("need at least one trial")
    guess = np.zeros(k, dtype=np.int64)
    q, r = divmod(m, k)
    guess[:] = q
    guess[:r] += 1
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(m, [1.0 / k] * k, size=trials)
    return int((draws == guess).all(axis=1).sum())


def detection_frequency(k: int, m: int, trials: int, seed: int = 0) -> float:
    """Fraction of trials in which the forger's concealment guess fails."""
    return 1.0 - concealment_hits(k, m, trials, seed) / trials


# ------------------------------------------------------------- ideal routing


@dataclass(frozen=True)
class OfflineOracleResult:
    """Upper bound on delivery over a recorded schedule."""

    packets: int
    messages: int
    parcels_per_message: int
    window_packets: tuple[int, ...] = ()


def _flow_bound(schedule: Sequence[tuple[int, int]], n: int, sender: int,
                receiver: int, C: int, corrupt: frozenset[int]) -> int:
    """Max packets from sender to receiver across the activation list.

    One graph copy of a node per round it touches, unit capacity per
    activated direction, storage arcs of capacity C between consecutive
    copies of internal nodes.  Corrupt nodes get no copies at all: a
    router that knows the schedule also knows whom never to trust.
    """
    T = len(schedule)
    if T == 0:
        return 0
    big = T + 1
    times: dict[int, set[int]] = {sender: {0}, receiver: {T}}
    arcs = []
    for t, (u, v) in enumerate(schedule, start=1):
        if u in corrupt or v in corrupt or u == v:
            continue
        for a, b in ((u, v), (v, u)):
            times.setdefault(a, set()).add(t - 1)
            times.setdefault(b, set()).add(t)
            arcs.append(((a, t - 1), (b, t), 1))
    g = nx.DiGraph()
    for i, ts in times.items():
        cap = big if i in (sender, receiver) else C
        ordered = sorted(ts)
        for t0, t1 in zip(ordered, ordered[1:]):
            arcs.append(((i, t0), (i, t1), cap))
    g.add_nodes_from([(sender, 0), (receiver, T)])
    for a, b, cap in arcs:
        if g.has_edge(a, b):
            g[a][b]["capacity"] += cap
        else:
            g.add_edge(a, b, capacity=cap)
    if (sender, 0) not in g or (receiver, T) not in g:
        return 0
    value, _ = nx.maximum_flow(g, (sender, 0), (receiver, T))
    return int(value)


def offline_optimal(schedule: Sequence[tuple[int, int]], scenario,
                    windows: Sequence[tuple[int, int]] | None = None
                    ) -> OfflineOracleResult:
    """Best possible delivery for an omniscient router on this schedule.

    Messages are packets divided by the per-message parcel count such a
    router would need; clairvoyance has no use for parity parcels, so
    that count is the data-parcel share only.  When transmission
    windows are supplied, each also gets its isolated packet bound (a
    fresh flow problem over just that slice of rounds).
    """
    corrupt = frozenset(scenario.corruption)
    ppm = scenario.D - int(scenario.lam * scenario.D)
    packets = _flow_bound(schedule, scenario.n, scenario.sender,
                          scenario.receiver, scenario.C, corrupt)
    per_window = []
    for start, end in windows or ():
        lo = max(start - 1, 0)
        per_window.append(
            _flow_bound(schedule[lo:end], scenario.n, scenario.sender,
                        scenario.receiver, scenario.C, corrupt)
        )
    return OfflineOracleResult(
        packets=packets,
        messages=packets // ppm,
        parcels_per_message=ppm,
        window_packets=tuple(per_window),
    )


def competitive_report(metrics: Sequence[tuple[int, int]],
                       oracle: Sequence[tuple[int, int]],
                       n: int, slack_cap: int | None = None) -> dict:
    """Descriptive comparison of simulated against ideal delivery.

    `metrics` and `oracle` list (round, cumulative messages) checkpoints
    over the same schedule.  Emits the per-checkpoint ratio plus the
    smallest factor c for which oracle <= c*n*protocol + slack holds
    everywhere, slack capped at the allowance for transmissions an
    adversary can force to fail outright before plausibility runs dry.
    Nothing here passes or fails; ideal-gap claims are asymptotic and
    desk-scale runs only measure them.
    """
    if slack_cap is None:
        slack_cap = (n - 1) ** 2
    by_round = dict(oracle)
    rows = []
    c_fit = 0.0
    min_slack = 0
    for rnd, proto in metrics:
        ideal = by_round.get(rnd)
        if ideal is None:
            continue
        ratio = 1.0 if ideal == proto == 0 else ideal / max(1, proto)
        rows.append({"round": rnd, "protocol": proto, "oracle": ideal,
                     "ratio": ratio})
        min_slack = max(min_slack, ideal - n * proto)
        over = ideal - slack_cap
        if over > 0:
            c_fit = math.inf if proto == 0 else max(c_fit, over / (n * proto))
    return {
        "checkpoints": rows,
        "n": n,
        "slack_cap": slack_cap,
        "c_fit": c_fit,
        "min_slack_at_c1": min_slack,
    }
