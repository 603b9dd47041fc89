"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 data error, 3 adapter or transport error.
Set S3FORGE_LOG (DEBUG, INFO, WARNING, ...) for verbosity; logs go to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .adapters import make_adapter
from .artifacts import make_header, trajectory_from_jsonl
from .errors import AdapterError, S3Error
from .evaluator import aggregate, baseline_frequent, baseline_random, load_predictions
from .exploration import episodes_from_jsonl, episodes_to_jsonl
from .pipeline import (RunConfig, episodes_stage, load_config, plan_stage, qa_stage, run_many, scene_stage,
                       trajectory_bytes, vis_stage)
from .planner import planning_grid
from .qa import qa_from_jsonl, qa_to_jsonl
from .rewriter import make_rewriter
from .scene import load_scene, save_scene
from .stream import (SimExplorationEnv, StreamConfig, expected_budget, predictions_from_transcript, run_session,
                     simulate_budget, trajectory_frames)
from .visibility import table_from_jsonl, table_to_jsonl

log = logging.getLogger("s3forge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ADAPTER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML run config")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="global seed (default from config, else 0)")
    common.add_argument("--rooms", type=int, help="toy scene room count")
    common.add_argument("--objects", type=int, help="toy scene object count")

    upstream = _Parser(add_help=False)
    upstream.add_argument("--scene", help="scene JSON (generated from the seed if absent)")
    upstream.add_argument("--traj", help="trajectory JSONL (planned if absent)")
    upstream.add_argument("--vis", help="visibility JSONL (computed if absent)")

    p = _Parser(prog="s3forge", description="Streaming spatial QA benchmark engine.")
    p.add_argument("--version", action="version", version=f"s3forge {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("scene", parents=[common], help="generate a toy scene or validate one")
    s.add_argument("--validate", metavar="PATH", help="validate an existing scene document")
    s.add_argument("--out", help="output path (default stdout)")

    s = sub.add_parser("plan", parents=[common], help="choose keypoints and plan a trajectory")
    s.add_argument("--scene")
    s.add_argument("--out")

    s = sub.add_parser("vis", parents=[common], help="per-frame visibility table")
    s.add_argument("--scene")
    s.add_argument("--traj")
    s.add_argument("--out")

    s = sub.add_parser("genqa", parents=[common, upstream], help="generate QA pairs")
    s.add_argument("--rewriter", default="passthrough", help="passthrough | stdio:<cmd> | http:<url>")
    s.add_argument("--out")

    s = sub.add_parser("episodes", parents=[common, upstream], help="synthesize exploration episodes")
    s.add_argument("--out")

    s = sub.add_parser("pipeline", parents=[common], help="scene -> plan -> vis -> genqa -> episodes")
    s.add_argument("--n-scenes", type=int, default=1, help="consecutive seeds starting at --seed")
    s.add_argument("--workers", type=int, help="parallel scenes (output order is by seed)")
    s.add_argument("--outdir", required=True)

    def session_args(s):
        s.add_argument("--qa", help="QA JSONL (generated if absent)")
        s.add_argument("--episodes", help="episodes JSONL whose questions join the schedule")
        s.add_argument("--adapter", help="stdio:<cmd> | http:<url> | const:<text>")
        s.add_argument("--env", choices=("sim", "none"), default="sim")
        s.add_argument("--blind", action="store_true")
        s.add_argument("--timeout", type=float, help="per-call adapter timeout in seconds")

    s = sub.add_parser("run", parents=[common, upstream], help="stream sessions against an adapter")
    session_args(s)
    s.add_argument("--K", type=float, help="fold interval in seconds")
    s.add_argument("--out", help="transcript JSONL (default stdout)")
    s.add_argument("--report", help="also score the transcript into this JSON report")

    s = sub.add_parser("eval", parents=[common], help="score predictions or transcripts")
    s.add_argument("--qa", action="append", required=True, help="QA or episodes JSONL (repeatable)")
    s.add_argument("--pred", action="append", default=[], help="predictions or transcript JSONL (repeatable)")
    s.add_argument("--baselines", action="store_true", help="add random and frequent baseline rows")
    s.add_argument("--out", help="report JSON (default stdout)")

    s = sub.add_parser("ablate-k", parents=[common, upstream], help="budgets and scores across fold intervals")
    session_args(s)
    s.add_argument("--K", type=_csv_floats, default=[2.0, 5.0, 10.0, 15.0], help="comma-separated intervals")
    s.add_argument("--probe-times", type=_csv_floats, default=[5.0, 35.0, 600.0, 3600.0])
    s.add_argument("--outdir", required=True)
    return p


# --------------------------------------------------------------------------
# helpers


def _config(args) -> RunConfig:
    overrides = list(args.set)
    if getattr(args, "rooms", None) is not None:
        overrides.append(f"scene.rooms={args.rooms}")
    if getattr(args, "objects", None) is not None:
        overrides.append(f"scene.objects={args.objects}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"workers={args.workers}")
    if getattr(args, "timeout", None) is not None:
        overrides.append(f"stream.timeout_s={args.timeout}")
    if getattr(args, "blind", False):
        overrides += ["stream.blind=true", "metric.blind=true"]
    k = getattr(args, "K", None)
    if isinstance(k, float):
        overrides.append(f"stream.K={k}")
    return load_config(args.config, overrides, args.seed)


def _emit(data: bytes | str, path: Optional[str]) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(data)
        log.info("wrote %s", path)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


class _Upstream:
    """Lazily loads given artifacts or regenerates them from the config."""

    def __init__(self, args, cfg: RunConfig):
        self.args, self.cfg = args, cfg
        self._scene = self._traj = self._table = self._grid = None

    @property
    def scene(self):
        if self._scene is None:
            path = getattr(self.args, "scene", None)
            self._scene = load_scene(Path(path).read_bytes()) if path else scene_stage(self.cfg)
        return self._scene

    @property
    def traj(self):
        if self._traj is None:
            path = getattr(self.args, "traj", None)
            if path:
                self._traj = trajectory_from_jsonl(Path(path).read_bytes())
            else:
                self._traj, self._grid, _ = plan_stage(self.scene, self.cfg)
        return self._traj

    @property
    def table(self):
        if self._table is None:
            path = getattr(self.args, "vis", None)
            self._table = (table_from_jsonl(Path(path).read_bytes()) if path
                           else vis_stage(self.scene, self.traj, self.cfg))
        return self._table

    @property
    def grid(self):
        if self._grid is None:
            self._grid = planning_grid(self.scene, self.cfg.plan)
        return self._grid


def _schedule(args, up: _Upstream, cfg: RunConfig):
    if args.qa:
        _, qas = qa_from_jsonl(Path(args.qa).read_bytes())
    else:
        qas = qa_stage(up.scene, up.traj, up.table, cfg)
    if args.episodes:
        _, eps = episodes_from_jsonl(Path(args.episodes).read_bytes())
        qas = qas + [e.qa for e in eps]
    return qas


def _session(args, up: _Upstream, cfg: RunConfig, stream: StreamConfig, qas):
    if not args.adapter:
        raise UsageError("--adapter is required")
    env = None
    if args.env == "sim":
        explore = dataclasses.replace(cfg.explore, fps=up.traj.fps)
        env = SimExplorationEnv(up.scene, up.traj, explore, stream.dense_fps)
    try:
        adapter = make_adapter(args.adapter, stream.timeout_s)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        transcript = run_session(trajectory_frames(up.traj), qas, adapter, env, stream)
    finally:
        adapter.close()
    failed = [r for r in transcript.records if r["error"] and r["error"].startswith("adapter")]
    if transcript.records and len(failed) == len(transcript.records):
        raise AdapterError(f"every query failed: {failed[0]['error']}")
    return transcript


# --------------------------------------------------------------------------
# subcommands


def cmd_scene(args, cfg):
    if args.validate:
        scene = load_scene(Path(args.validate).read_bytes())
        print(f"ok {scene.id}: {len(scene.rooms)} rooms, {len(scene.objects)} objects, "
              f"{len(scene.occluders)} occluders", file=sys.stderr)
        return EXIT_OK
    scene = scene_stage(cfg)
    _emit(save_scene(scene, make_header("scene", cfg.seed, cfg.scene)), args.out)
    return EXIT_OK


def cmd_plan(args, cfg):
    up = _Upstream(args, cfg)
    traj, _, kps = plan_stage(up.scene, cfg)
    _emit(trajectory_bytes(traj, kps, cfg), args.out)
    return EXIT_OK


def cmd_vis(args, cfg):
    up = _Upstream(args, cfg)
    _emit(table_to_jsonl(up.table, make_header("visibility", cfg.seed, cfg.vis)), args.out)
    return EXIT_OK


def cmd_genqa(args, cfg):
    up = _Upstream(args, cfg)
    rewriter = make_rewriter(args.rewriter, cfg.stream.timeout_s)
    try:
        pairs = qa_stage(up.scene, up.traj, up.table, cfg, rewriter)
    finally:
        rewriter.close()
    _emit(qa_to_jsonl(pairs, cfg.qa, {"seed_root": cfg.seed}), args.out)
    return EXIT_OK


def cmd_episodes(args, cfg):
    up = _Upstream(args, cfg)
    eps = episodes_stage(up.scene, up.traj, up.table, cfg, up.grid)
    _emit(episodes_to_jsonl(eps, cfg.explore, {"seed_root": cfg.seed}), args.out)
    return EXIT_OK


def cmd_pipeline(args, cfg):
    results = run_many(cfg, range(cfg.seed, cfg.seed + args.n_scenes), args.outdir)
    for seed, paths in results:
        print(f"seed {seed}: " + ", ".join(sorted(paths)), file=sys.stderr)
    return EXIT_OK


def cmd_run(args, cfg):
    up = _Upstream(args, cfg)
    qas = _schedule(args, up, cfg)
    transcript = _session(args, up, cfg, cfg.stream, qas)
    head = make_header("transcript", cfg.seed, cfg.stream, adapter=args.adapter, env=args.env,
                       trajectory_id=up.traj.id, fold_errors=transcript.fold_errors)
    _emit(transcript.to_jsonl(head), args.out)
    if args.report:
        report = aggregate(predictions_from_transcript(transcript), qas, cfg.metric,
                           meta={"adapter": args.adapter, "env": args.env, "K": cfg.stream.K,
                                 "blind": cfg.stream.blind})
        _emit(json.dumps(report, sort_keys=True, indent=1) + "\n", args.report)
    return EXIT_OK


def cmd_eval(args, cfg):
    qas = []
    for path in args.qa:
        data = Path(path).read_bytes()
        if _kind(data) == "episodes":
            qas.extend(e.qa for e in episodes_from_jsonl(data)[1])
        else:
            qas.extend(qa_from_jsonl(data)[1])
    preds = []
    for path in args.pred:
        preds.extend(load_predictions(Path(path).read_bytes()))
    baselines = None
    if args.baselines:
        baselines = {"random": baseline_random(qas, cfg.seed), "frequent": baseline_frequent(qas)}
    report = aggregate(preds, qas, cfg.metric, baselines=baselines)
    _emit(json.dumps(report, sort_keys=True, indent=1) + "\n", args.out)
    return EXIT_OK


def _kind(data: bytes) -> str:
    first = data.split(b"\n", 1)[0]
    try:
        return json.loads(first).get("_header", {}).get("kind", "")
    except (json.JSONDecodeError, AttributeError):
        return ""


def cmd_ablate_k(args, cfg):
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    up = _Upstream(args, cfg) if args.adapter else None
    qas = _schedule(args, up, cfg) if up else None
    for K in args.K:
        stream = dataclasses.replace(cfg.stream, K=K)
        budgets = {f"{t:g}": simulate_budget(t, stream) for t in args.probe_times}
        expected = {f"{t:g}": expected_budget(t, stream) for t in args.probe_times}
        doc = {"K": K, "budgets": budgets, "expected": expected, "budgets_match": budgets == expected,
               "header": make_header("ablate_k", cfg.seed, stream)}
        if up is not None:
            transcript = _session(args, up, cfg, stream, qas)
            doc["report"] = aggregate(predictions_from_transcript(transcript), qas, cfg.metric,
                                      meta={"adapter": args.adapter, "env": args.env, "K": K})
        path = out / f"ablate_K{K:g}.json"
        path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
        print(f"K={K:g}: " + "  ".join(f"t={t}:{tuple(b.values())}" for t, b in budgets.items()), file=sys.stderr)
    return EXIT_OK


COMMANDS = {"scene": cmd_scene, "plan": cmd_plan, "vis": cmd_vis, "genqa": cmd_genqa, "episodes": cmd_episodes,
            "pipeline": cmd_pipeline, "run": cmd_run, "eval": cmd_eval, "ablate-k": cmd_ablate_k}


def _setup_logging():
    level = os.environ.get("S3FORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
        return COMMANDS[args.cmd](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AdapterError as exc:
        print(f"adapter error: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except (S3Error, ValueError, OSError, KeyError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
