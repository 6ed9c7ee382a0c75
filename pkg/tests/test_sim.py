"""Scenario plumbing, deterministic execution, and run artifacts."""

import json
from fractions import Fraction

import pytest

from slidesim.adversary import ReplaySchedule
from slidesim.sim import (
    Scenario,
    ScenarioInvalid,
    load_scenario,
    make_scenario,
    run,
    save_run,
)


def _honest(**kw):
    base = dict(name="t", seed=3, n=4, C=192, k=4, lam=Fraction(1, 2), D=64,
                messages=1)
    base.update(kw)
    return make_scenario(**base)


# ---------------------------------------------------------------- scenarios


def test_defaults_fill_in():
    sc = Scenario(n=4, k=4)
    assert sc.receiver == 3
    assert sc.C == 12 * 16
    assert sc.K == 4
    assert sc.D == 4 * 4 * 192 * 2  # k n C / lam
    assert sc.N > 6 * sc.n * sc.D
    assert sc.quiescence_horizon == 4 * sc.n * sc.D
    assert sc.max_rounds == 400 * sc.n * sc.D


def test_lam_accepts_string_and_corruption_keys_coerce():
    sc = Scenario(lam="1/3", D=66, corruption={"1": {"strategy": "dropping"}})
    assert sc.lam == Fraction(1, 3)
    assert 1 in sc.corruption


def _problems(**kw):
    with pytest.raises(ScenarioInvalid) as e:
        make_scenario(**kw)
    return e.value.problems


def test_rejects_small_network():
    assert any("network size" in m for m in _problems(n=2))


def test_rejects_capacity_below_floor():
    assert any("capacity" in m for m in _problems(n=4, C=191))


def test_rejects_set_count_mismatch():
    assert any("set count" in m for m in _problems(n=4, k=4, K=5))


def test_rejects_fractional_redundancy_split():
    assert any("integral" in m for m in _problems(n=4, C=192, D=65))


def test_rejects_small_or_composite_modulus():
    # 761 is prime but sits at or below three parcels per node
    msgs = _problems(n=4, C=192, D=64, N=761)
    assert any("modulus" in m and "N > 3 n D" in m for m in msgs)
    msgs = _problems(n=4, C=192, D=64, N=1537)  # 29 * 53
    assert any("not prime" in m for m in msgs)


def test_rejects_corrupt_endpoint_and_unknown_strategy():
    msgs = _problems(n=4, C=192, D=64,
                     corruption={0: {"strategy": "dropping"}})
    assert any("internal node" in m for m in msgs)
    msgs = _problems(n=4, C=192, D=64,
                     corruption={1: {"strategy": "teleport"}})
    assert any("unknown strategy" in m for m in msgs)


def test_rejects_disconnected_topology():
    msgs = _problems(n=4, C=192, D=64,
                     topology={"kind": "explicit", "edges": [[0, 1], [2, 3]]})
    assert any("connect every node" in m for m in msgs)


def test_rejects_bad_policies():
    assert any("custody" in m for m in _problems(n=4, C=192, D=64, custody="teleport"))
    assert any("run-until" in m for m in _problems(n=4, C=192, D=64, run_until="dawn"))
    assert any("schedule" in m
               for m in _problems(n=4, C=192, D=64, schedule={"kind": "tidal"}))


def test_collects_every_problem_at_once():
    msgs = _problems(n=2, k=2, C=5, D=64, custody="x")
    assert len(msgs) >= 4


def test_json_round_trip(tmp_path):
    sc = _honest(corruption={1: {"strategy": "dropping", "config": {}}})
    d = json.loads(json.dumps(sc.to_json()))
    back = Scenario.from_json(d)
    assert back == sc
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc.to_json()))
    assert load_scenario(path) == sc


def test_load_scenario_validates(tmp_path):
    path = tmp_path / "bad.json"
    bad = Scenario(n=4, C=192, D=64).to_json()
    bad["C"] = 5
    path.write_text(json.dumps(bad))
    with pytest.raises(ScenarioInvalid):
        load_scenario(path)


# ---------------------------------------------------------------- execution


def test_honest_run_completes_and_audits_clean():
    res = run(_honest())
    assert res.delivered_messages == 1
    assert res.delivered_ok
    assert res.outcome_counts == {"S1": 1}
    assert res.invariant_failures == []
    assert res.undetected_failures == 0
    assert res.eliminations == []
    assert all(v > 0 for v in res.max_memory_bits.values())


def test_runs_are_seed_deterministic():
    a = run(_honest())
    b = run(_honest())
    c = run(_honest(seed=4))
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()


def test_per_round_audit_passes_on_honest_run():
    res = run(_honest(check_every=1))
    assert res.invariant_failures == []


def test_recorded_schedule_replays_identically():
    sc = _honest()
    first = run(sc, record_schedule=True)
    again = run(sc, record_schedule=True,
                schedule_override=ReplaySchedule(first.schedule_record))
    assert first.schedule_record == again.schedule_record
    assert first.fingerprint() == again.fingerprint()


def test_elimination_lifecycle_replacement():
    sc = make_scenario(
        name="repl", seed=13, n=3, C=108, D=218, N=-1,
        quiescence_horizon=400, topology={"kind": "path"},
        run_until="elimination",
        corruption={1: {"strategy": "replacement",
                        "config": {"targets": [2], "advert": {"0": "floor"}}}},
    )
    res = run(sc)
    assert res.eliminations and res.eliminations[0]["node"] == 1
    assert res.invariant_failures == []
    assert res.undetected_failures == 0


def test_save_run_writes_artifacts(tmp_path):
    sc = _honest()
    res = run(sc, collect_trace=True)
    out = save_run(tmp_path / "r", sc, res)
    names = {p.name for p in out.iterdir()}
    assert {"scenario.json", "report.json", "transmissions.jsonl",
            "trace.jsonl", "summary.csv"} <= names
    report = json.loads((out / "report.json").read_text())
    assert report["fingerprint"] == res.fingerprint()
    lines = (out / "transmissions.jsonl").read_text().splitlines()
    assert len(lines) == len(res.reports)
    assert json.loads(lines[0])["outcome"] == "S1"


def test_save_run_skips_trace_when_not_collected(tmp_path):
    sc = _honest()
    res = run(sc)
    out = save_run(tmp_path / "r", sc, res)
    assert not (out / "trace.jsonl").exists()
