"""Topologies, activation schedules, and corrupt-strategy plumbing."""

import random
from fractions import Fraction

import pytest

from slidesim.adversary import (
    AdversaryError,
    Custody,
    PathSweepSchedule,
    ReplaySchedule,
    STRATEGIES,
    UnknownSchedule,
    UnknownStrategy,
    build_edges,
    make_schedule,
    resolve_height_token,
    strategy_class,
)
from slidesim.node import ProtocolNode, ProtocolParams


def _params(C=192, n=4):
    return ProtocolParams(
        n=n, sender=0, receiver=n - 1, C=C, P_bits=4096, k=4, K=4,
        lam=Fraction(1, 2), D=64, N=997, payload_bits=32,
        quiescence_horizon=10_000,
    )


# ---------------------------------------------------------------- topologies


def test_complete_topology():
    edges = build_edges(4, {"kind": "complete"})
    assert edges == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def test_path_topology_default_and_custom_order():
    assert build_edges(4, {"kind": "path"}) == [(0, 1), (1, 2), (2, 3)]
    got = build_edges(4, {"kind": "path", "order": [2, 0, 3, 1]})
    assert got == [(0, 2), (0, 3), (1, 3)]
    with pytest.raises(AdversaryError):
        build_edges(4, {"kind": "path", "order": [0, 1, 2, 2]})


def test_explicit_topology_validation():
    assert build_edges(3, {"kind": "explicit", "edges": [[1, 0], [1, 2]]}) == [
        (0, 1),
        (1, 2),
    ]
    with pytest.raises(AdversaryError):
        build_edges(3, {"kind": "explicit", "edges": [[0, 1], [1, 0]]})
    with pytest.raises(AdversaryError):
        build_edges(3, {"kind": "explicit", "edges": [[0, 3]]})
    with pytest.raises(AdversaryError):
        build_edges(3, {"kind": "explicit", "edges": [[1, 1]]})
    with pytest.raises(AdversaryError):
        build_edges(3, {"kind": "ring"})


# ---------------------------------------------------------------- schedules


def _edges4():
    return build_edges(4, {"kind": "complete"})


def test_uniform_schedule_is_seed_deterministic():
    runs = []
    for _ in range(2):
        s = make_schedule(_edges4(), random.Random(3), {"kind": "uniform"})
        runs.append([s.pick(r) for r in range(1, 50)])
    assert runs[0] == runs[1]
    assert set(runs[0]) <= set(_edges4())


def test_weighted_schedule_biases_chosen_node():
    s = make_schedule(
        _edges4(), random.Random(4),
        {"kind": "weighted", "bias_node": 2, "bias_factor": 50.0},
    )
    picks = [s.pick(r) for r in range(1, 2000)]
    hot = sum(1 for e in picks if 2 in e)
    assert hot / len(picks) > 0.9
    with pytest.raises(AdversaryError):
        make_schedule(_edges4(), random.Random(1),
                      {"kind": "weighted", "weights": [1.0]})
    with pytest.raises(AdversaryError):
        make_schedule(_edges4(), random.Random(1),
                      {"kind": "weighted", "weights": [1.0, 1.0, 0.0, 1.0, 1.0, 1.0]})


def test_path_sweep_cycles_in_order():
    s = PathSweepSchedule([0, 1, 2, 3])
    got = [s.pick(r) for r in range(6)]
    assert got == [(0, 1), (1, 2), (2, 3), (0, 1), (1, 2), (2, 3)]


def test_partition_then_heal_phases():
    s = make_schedule(
        _edges4(), random.Random(5),
        {"kind": "partition_then_heal", "side": [0, 1], "phase_len": 10},
    )
    separated = {(0, 1), (2, 3)}
    for r in range(10):
        assert s.pick(r) in separated
    healed = [s.pick(r) for r in range(10, 20)]
    assert any(e not in separated for e in healed)


def test_replay_schedule_exact_and_exhausts():
    s = ReplaySchedule([(0, 1), (1, 2)])
    assert s.pick(1) == (0, 1)
    assert s.pick(2) == (1, 2)
    with pytest.raises(AdversaryError):
        s.pick(3)


def test_unknown_schedule_kind():
    with pytest.raises(UnknownSchedule):
        make_schedule(_edges4(), random.Random(1), {"kind": "tidal"})


# ---------------------------------------------------------------- strategies


def test_strategy_registry():
    assert set(STRATEGIES) == {
        "height_lying",
        "duplication",
        "uphill",
        "replacement",
        "dropping",
        "set_matched_swap",
    }
    assert strategy_class("honest") is ProtocolNode
    for name, cls in STRATEGIES.items():
        assert strategy_class(name) is cls
    with pytest.raises(UnknownStrategy):
        strategy_class("teleport")


def test_height_tokens():
    p = _params()
    assert resolve_height_token("honest", p) == "honest"
    assert resolve_height_token("cap", p) == 192
    assert resolve_height_token("floor", p) == 0
    # oracle: smallest h with 2n*h > C - 4n^2 is 17 when C=192, n=4
    assert resolve_height_token("gate1", p) == 17
    assert resolve_height_token(42, p) == 42
    with pytest.raises(AdversaryError):
        resolve_height_token(193, p)
    with pytest.raises(AdversaryError):
        resolve_height_token("summit", p)


def _corrupt(name, config, params=None):
    import random as _r

    from slidesim.crypto import Signer, make_he_context, signature_scheme

    p = params or _params()
    sig = signature_scheme("hmac")
    pairs = sig.keygen(31, p.n)
    ctx = make_he_context("transparent", p.K, p.N, 31).public_view()
    cls = strategy_class(name)
    return cls(
        1, p, Signer(1, sig, pairs[1].signing_key),
        [kp.verification_key for kp in pairs], sig, ctx, _r.Random(1),
        config=config,
    )


def test_trigger_gates_deviation():
    nd = _corrupt("height_lying", {"advert": {"2": "cap"},
                                   "trigger": {"round": 5, "receives": 2}})
    assert not nd.corrupt_active()
    nd._round = 5
    assert not nd.corrupt_active()
    nd.commit_receives = 2
    assert nd.corrupt_active()
    assert nd.advertised_height(2) == nd.params.C
    assert nd.advertised_height(3) == 0  # unmapped peer gets the honest answer


def test_advert_map_resolves_tokens():
    nd = _corrupt("height_lying", {"advert": {"2": "gate1", "3": 100}})
    assert nd.advertised_height(2) == 17
    assert nd.advertised_height(3) == 100


def test_corrupt_node_never_halts():
    nd = _corrupt("height_lying", {})
    nd.phi_total = nd.params.kCD + 10
    nd.halt_check()
    assert not nd.halted


def test_uphill_walk_moves_one_level_per_round():
    """The claim sequence itself obeys the rate cap honest peers enforce."""
    nd = _corrupt("uphill", {"targets": [2]})
    nd.current_tid = 1
    nd.alert_tid = 1
    nd.alert_total = 0
    nd.buffer = []
    rng = random.Random(8)
    vict = 30
    prev = None
    for r in range(1, 400):
        nd._round = r
        edge = nd.edges.get(2)
        if edge is None:
            nd.on_activation(2, None, r)
            edge = nd.edges[2]
        edge.peer_height = vict
        edge.peer_seen = True
        h = nd.advertised_height(2)
        if h is not None and prev is not None:
            assert abs(h - prev[0]) <= r - prev[1]
        if h is not None:
            prev = (h, r)
        # the victim meanwhile drifts like a refilled relay would
        vict = max(0, min(nd.params.C, vict + rng.choice((-1, 0, 1))))


def test_uphill_defaults_derived_from_geometry():
    nd = _corrupt("uphill", {"targets": [2]})
    p = nd.params
    assert nd.gate1 == 17
    assert nd.min_drop == p.C // 4
    assert nd.flip_up_at == p.C - (3 * nd.min_drop + nd.gate1) // 2
