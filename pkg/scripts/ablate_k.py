#!/usr/bin/env python3
"""Fold-interval sweep: memory budgets and scripted-adapter scores for several K.

For each K the budget (dense, sparse, memory) is simulated at the probe times
and checked against the closed form; a session with the tagged scripted
adapter is then run on one toy scene to show how the number of fold calls and
layout sizes scale with K.

  python3 scripts/ablate_k.py --K 2,5,10,15 --seed 3
"""
import argparse
import statistics

from s3forge.adapters import ScriptedAdapter
from s3forge.pipeline import build_config, plan_stage, qa_stage, scene_stage, vis_stage
from s3forge.stream import StreamConfig, expected_budget, run_session, simulate_budget, trajectory_frames


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", default="2,5,10,15", help="comma-separated fold intervals in seconds")
    ap.add_argument("--probe-times", default="5,35,600,3600")
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()
    Ks = [float(x) for x in args.K.split(",")]
    probes = [float(x) for x in args.probe_times.split(",")]

    cfg = build_config(seed=args.seed)
    scene = scene_stage(cfg)
    traj, _, _ = plan_stage(scene, cfg)
    table = vis_stage(scene, traj, cfg)
    qas = qa_stage(scene, traj, table, cfg)
    print(f"scene {scene.id}: {len(traj.poses)} frames, {traj.poses[-1].t:.1f} s, {len(qas)} questions\n")

    print(f"{'K':>5}  {'t':>6}  {'(dense, sparse, memory)':>24}  closed form")
    for K in Ks:
        stream = StreamConfig(K=K)
        for t in probes:
            got = simulate_budget(t, stream)
            ok = got == expected_budget(t, stream)
            print(f"{K:5g}  {t:6g}  {str(tuple(got.values())):>24}  {'ok' if ok else 'MISMATCH'}")
    print()

    print(f"{'K':>5}  {'fold calls':>10}  {'mean layout items':>17}")
    for K in Ks:
        adapter = ScriptedAdapter(lambda layout, i: f"pick-{i}")
        tr = run_session(trajectory_frames(traj), qas, adapter, None, StreamConfig(K=K), record_layouts=True)
        sizes = [len(r["layouts"][-1]) for r in tr.records if r.get("layouts")]
        print(f"{K:5g}  {adapter.fold_calls:10d}  {statistics.mean(sizes):17.1f}")


if __name__ == "__main__":
    main()
