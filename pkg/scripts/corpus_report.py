#!/usr/bin/env python3
"""Generate a seeded toy corpus and report its structure and chance baselines.

Prints per-task item counts, the answer-position histogram for 4-choice items,
and the random, frequent and blind always-"A" scores. Writes the same numbers
as JSON when --out is given.

  python3 scripts/corpus_report.py --scenes 20 --seed0 1000 --out corpus_report.json
"""
import argparse
import json
import time
from collections import Counter

from s3forge.adapters import const_adapter
from s3forge.evaluator import aggregate, baseline_frequent, baseline_random, mc_accuracy
from s3forge.pipeline import toy_corpus
from s3forge.qa import MC
from s3forge.stream import StreamConfig, predictions_from_transcript, run_session, trajectory_frames


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--seed0", type=int, default=1000)
    ap.add_argument("--max-rooms", type=int, default=6)
    ap.add_argument("--max-objects", type=int, default=30)
    ap.add_argument("--out")
    args = ap.parse_args()

    t0 = time.perf_counter()
    corpus = toy_corpus(args.scenes, args.seed0, max_rooms=args.max_rooms, max_objects=args.max_objects)
    build_s = time.perf_counter() - t0
    qas = [p for it in corpus for p in it.qa]
    four = [p for p in qas if p.format == MC and len(p.choices) == 4]

    blind = []
    for it in corpus:
        tr = run_session(trajectory_frames(it.trajectory), it.qa, const_adapter("A"), None, StreamConfig(blind=True))
        blind += predictions_from_transcript(tr)

    report = {
        "scenes": len(corpus),
        "build_s": round(build_s, 1),
        "items": len(qas),
        "per_task": dict(sorted(Counter(p.task for p in qas).items())),
        "answer_position_4choice": {k: v for k, v in sorted(Counter(int(p.answer) for p in four).items())},
        "random_mc4_accuracy": mc_accuracy(baseline_random(qas, 0), qas)[0],
        "blind_always_A_mc4_accuracy": mc_accuracy(blind, qas)[0],
        "frequent_overall": aggregate(baseline_frequent(qas), qas)["overall"],
    }
    print(json.dumps(report, indent=1))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")


if __name__ == "__main__":
    main()
