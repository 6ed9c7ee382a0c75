"""Command-line front end.

`run` executes a scenario file and persists the report, `replay`
re-executes a saved run and verifies the fingerprint matches, `sweep`
fans one scenario across a seed range on a worker pool, and `report`
compares recorded runs against the omniscient-router delivery bound.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis, sim

# --check-every choices; transmission boundaries are always audited, so
# "transmission" just turns the per-round sweep off
_CHECK = {"round": 1, "transmission": 0}


def _outdir(args) -> Path:
    return Path(args.out or os.environ.get("SLIDE_SIM_OUT") or "runs")


def _apply_overrides(sc: sim.Scenario, args) -> sim.Scenario:
    if getattr(args, "he_backend", None):
        sc.he_backend = args.he_backend
    if getattr(args, "check_every", None):
        sc.check_every = _CHECK[args.check_every]
    problems = sc.validate()
    if problems:
        raise sim.ScenarioInvalid(problems)
    return sc


def _cmd_run(args) -> int:
    sc = _apply_overrides(sim.load_scenario(args.scenario), args)
    res = sim.run(sc, collect_trace=args.trace, record_schedule=True)
    out = _outdir(args) / sc.name
    sim.save_run(out, sc, res)
    if not args.quiet:
        print(
            f"{sc.name}: rounds={res.rounds} stop={res.stop_reason} "
            f"delivered={res.delivered_messages} outcomes={res.outcome_counts}"
        )
        print(f"written: {out}")
    if res.invariant_failures:
        print(
            f"{len(res.invariant_failures)} invariant failures; first: "
            f"{res.invariant_failures[0]}",
            file=sys.stderr,
        )
        return 1
    return 0


def _cmd_replay(args) -> int:
    d = Path(args.run)
    sc = sim.load_scenario(d / "scenario.json")
    with open(d / "report.json") as f:
        stored = json.load(f)
    res = sim.run(sc, record_schedule=stored.get("schedule_record") is not None)
    got, want = res.fingerprint(), stored.get("fingerprint")
    if got == want:
        if not args.quiet:
            print(f"replay identical: {got}")
        return 0
    print(f"replay mismatch: stored {want} recomputed {got}", file=sys.stderr)
    return 1


def _sweep_worker(path: str, seed: int, he_backend: str | None,
                  check_every: str | None) -> dict:
    sc = sim.load_scenario(path)
    sc.seed = seed
    if he_backend:
        sc.he_backend = he_backend
    if check_every:
        sc.check_every = _CHECK[check_every]
    res = sim.run(sc)
    return {
        "seed": seed,
        "rounds": res.rounds,
        "stop": res.stop_reason,
        "delivered": res.delivered_messages,
        "outcomes": json.dumps(res.outcome_counts, sort_keys=True),
        "eliminations": json.dumps(res.eliminations, sort_keys=True),
        "invariant_failures": len(res.invariant_failures),
        "fingerprint": res.fingerprint(),
    }


def _parse_seeds(text: str) -> range:
    lo, _, hi = text.partition("..")
    if not hi:
        return range(int(lo), int(lo) + 1)
    return range(int(lo), int(hi) + 1)


def _cmd_sweep(args) -> int:
    sim.load_scenario(args.scenario)  # fail early on a bad file
    seeds = _parse_seeds(args.seeds)
    jobs = args.jobs or min(len(seeds), os.cpu_count() or 1)
    rows = []
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futs = [
            pool.submit(_sweep_worker, args.scenario, s, args.he_backend,
                        args.check_every)
            for s in seeds
        ]
        rows = [f.result() for f in futs]
    rows.sort(key=lambda r: r["seed"])
    out = _outdir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    bad = sum(1 for r in rows if r["invariant_failures"])
    if not args.quiet:
        for r in rows:
            print(
                f"seed {r['seed']}: rounds={r['rounds']} stop={r['stop']} "
                f"delivered={r['delivered']} outcomes={r['outcomes']}"
            )
        print(f"written: {path}")
    if bad:
        print(f"{bad} runs with invariant failures", file=sys.stderr)
        return 1
    return 0


def _cmd_report(args) -> int:
    rows = []
    for rd in args.runs:
        d = Path(rd)
        sc = sim.load_scenario(d / "scenario.json")
        with open(d / "report.json") as f:
            stored = json.load(f)
        schedule = stored.get("schedule_record")
        if schedule is None:
            print(f"{rd}: no recorded schedule; re-run with `run`",
                  file=sys.stderr)
            return 1
        schedule = [tuple(e) for e in schedule]
        checkpoints = [
            (r["end_round"], i + 1)
            for i, r in enumerate(
                r for r in stored["reports"] if r["outcome"] == "S1"
            )
        ]
        if not checkpoints:
            checkpoints = [(len(schedule), stored["delivered_messages"])]
        oracle_pts = [
            (rnd, analysis.offline_optimal(schedule[:rnd], sc).messages)
            for rnd, _ in checkpoints
        ]
        rep = analysis.competitive_report(checkpoints, oracle_pts, sc.n)
        for row in rep["checkpoints"]:
            rows.append({"run": d.name, **row, "c_fit": rep["c_fit"]})
    out = _outdir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "competitive.csv"
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(
            f, fieldnames=["run", "round", "protocol", "oracle", "ratio", "c_fit"]
        )
        w.writeheader()
        w.writerows(rows)
    if not args.quiet:
        for r in rows:
            print(
                f"{r['run']} round {r['round']}: protocol={r['protocol']} "
                f"oracle={r['oracle']} ratio={r['ratio']:.2f}"
            )
        print(f"written: {path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slidesim")
    p.add_argument("--out", help="output directory (default $SLIDE_SIM_OUT or ./runs)")
    p.add_argument("--quiet", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="execute a scenario file")
    run.add_argument("scenario")
    run.add_argument("--trace", action="store_true", help="persist a full trace")
    run.add_argument("--check-every", choices=sorted(_CHECK))
    run.add_argument("--he-backend", choices=["transparent", "exp-elgamal"])
    run.set_defaults(fn=_cmd_run)

    rep = sub.add_parser("replay", help="re-run a saved run and verify")
    rep.add_argument("run")
    rep.set_defaults(fn=_cmd_replay)

    sw = sub.add_parser("sweep", help="run one scenario across seeds")
    sw.add_argument("scenario")
    sw.add_argument("--seeds", required=True, help="a..b inclusive, or a single seed")
    sw.add_argument("--jobs", type=int)
    sw.add_argument("--check-every", choices=sorted(_CHECK))
    sw.add_argument("--he-backend", choices=["transparent", "exp-elgamal"])
    sw.set_defaults(fn=_cmd_sweep)

    cmp_ = sub.add_parser("report", help="compare runs against the ideal bound")
    cmp_.add_argument("runs", nargs="+")
    cmp_.set_defaults(fn=_cmd_report)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"missing file: {e.filename or e}", file=sys.stderr)
        return 2
    except sim.ScenarioInvalid as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
