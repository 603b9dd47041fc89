"""Run configuration and the scene -> plan -> vis -> genqa -> episodes stages."""
from __future__ import annotations

import dataclasses
import logging
import os
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .artifacts import make_header, trajectory_to_jsonl
from .errors import CapacityError
from .evaluator import MetricConfig
from .exploration import ExploreConfig, episodes_to_jsonl, synthesize_episodes
from .planner import PlanConfig, plan_scene
from .qa import GenConfig, QAContext, generate_all, qa_to_jsonl
from .rewriter import RewriterClient, rewrite
from .scene import CameraIntrinsics, Scene, gen_toy_scene, save_scene
from .seeds import derive_seed
from .stream import StreamConfig
from .visibility import VisParams, compute_table, table_to_jsonl

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

SEED_MASK = 0x7FFFFFFF


@dataclass(frozen=True)
class SceneGenConfig:
    rooms: int = 3
    objects: int = 12
    room_size: Optional[tuple] = None
    pillars: bool = True


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    plan: PlanConfig = field(default_factory=PlanConfig)
    vis: VisParams = field(default_factory=VisParams)
    qa: GenConfig = field(default_factory=GenConfig)
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)
    workers: int = 1


SECTIONS = ("scene", "camera", "plan", "vis", "qa", "explore", "stream", "metric")
SEEDED = ("plan", "qa", "explore")


def _coerce(cls, values: dict):
    """Build a frozen config dataclass from TOML values, turning lists into tuples."""
    names = {f.name: f for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in values.items():
        if k not in names:
            raise ValueError(f"unknown key {k!r} for {cls.__name__}")
        kw[k] = tuple(v) if isinstance(v, list) else v
    return cls(**kw)


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def build_config(doc: Optional[dict] = None, overrides=(), seed: Optional[int] = None) -> RunConfig:
    """Merge a TOML document with ``section.key=value`` overrides; stage seeds fan out from ``seed``."""
    doc = {k: (dict(v) if isinstance(v, dict) else v) for k, v in (doc or {}).items()}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override must look like section.key=value, got {item!r}")
        section, dot, name = key.strip().partition(".")
        if dot:
            doc.setdefault(section, {})[name] = _parse_value(value.strip())
        else:
            doc[section] = _parse_value(value.strip())
    unknown = set(doc) - set(SECTIONS) - {"seed", "workers"}
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")
    root = int(doc.get("seed", 0) if seed is None else seed)
    parts = {}
    defaults = RunConfig()
    for name in SECTIONS:
        values = dict(doc.get(name, {}))
        if name in SEEDED and "seed" not in values:
            values["seed"] = derive_seed(root, name) & SEED_MASK
        parts[name] = _coerce(type(getattr(defaults, name)), values) if values else getattr(defaults, name)
    return RunConfig(seed=root, workers=int(doc.get("workers", 1)), **parts)


def load_config(path: Optional[str], overrides=(), seed: Optional[int] = None) -> RunConfig:
    doc = {}
    if path:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    return build_config(doc, overrides, seed)


# --------------------------------------------------------------------------
# stages


def scene_stage(cfg: RunConfig) -> Scene:
    s = cfg.scene
    return gen_toy_scene(cfg.seed, s.rooms, s.objects, s.room_size, s.pillars)


def plan_stage(scene: Scene, cfg: RunConfig):
    return plan_scene(scene, cfg.plan, cfg.camera)


def vis_stage(scene, traj, cfg: RunConfig):
    return compute_table(scene, traj, cfg.camera, cfg.vis)


def qa_stage(scene, traj, table, cfg: RunConfig, rewriter: Optional[RewriterClient] = None):
    pairs = generate_all(QAContext(scene, traj, table, cfg.qa))
    return rewrite(pairs, rewriter) if rewriter is not None else pairs


def episodes_stage(scene, traj, table, cfg: RunConfig, grid=None):
    explore = dataclasses.replace(cfg.explore, fps=traj.fps)
    return synthesize_episodes(scene, traj, table, explore, cfg.camera, grid)


ARTIFACTS = ("scene.json", "trajectory.jsonl", "visibility.jsonl", "qa.jsonl", "episodes.jsonl")


def stage_headers(cfg: RunConfig, kind: str, config, **extra) -> dict:
    return make_header(kind, cfg.seed, config, **extra)


def trajectory_bytes(traj, keypoints, cfg: RunConfig) -> bytes:
    kps = [{"position": list(k.position), "kind": k.kind, "sweep_deg": k.sweep_deg, "facing": k.facing,
            "room_id": k.room_id, "target_id": k.target_id} for k in keypoints]
    return trajectory_to_jsonl(traj, stage_headers(cfg, "trajectory", cfg.plan, keypoints=kps))


def run_pipeline(cfg: RunConfig, outdir: str | Path, rewriter: Optional[RewriterClient] = None) -> dict:
    """All stages for one scene; returns artifact name -> path."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    scene = scene_stage(cfg)
    traj, grid, kps = plan_stage(scene, cfg)
    table = vis_stage(scene, traj, cfg)
    pairs = qa_stage(scene, traj, table, cfg, rewriter)
    episodes = episodes_stage(scene, traj, table, cfg, grid)
    blobs = {
        "scene.json": save_scene(scene, stage_headers(cfg, "scene", cfg.scene)),
        "trajectory.jsonl": trajectory_bytes(traj, kps, cfg),
        "visibility.jsonl": table_to_jsonl(table, stage_headers(cfg, "visibility", cfg.vis)),
        "qa.jsonl": qa_to_jsonl(pairs, cfg.qa, {"seed_root": cfg.seed}),
        "episodes.jsonl": episodes_to_jsonl(episodes, cfg.explore, {"seed_root": cfg.seed}),
    }
    paths = {}
    for name, data in blobs.items():
        (out / name).write_bytes(data)
        paths[name] = str(out / name)
    return paths


def _one(args):
    cfg, outdir = args
    return cfg.seed, run_pipeline(cfg, outdir)


def run_many(cfg: RunConfig, seeds, outdir: str | Path, workers: Optional[int] = None) -> list[tuple[int, dict]]:
    """One pipeline per seed, written to ``outdir/seed_<n>``; results sorted by seed."""
    jobs = [(build_config(_as_doc(cfg), seed=s), Path(outdir) / f"seed_{s:06d}")
            for s in sorted(seeds)]
    workers = workers or cfg.workers
    if workers <= 1 or len(jobs) <= 1:
        results = [_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1)) as ex:
            results = list(ex.map(_one, jobs))
    return sorted(results, key=lambda r: r[0])


def _as_doc(cfg: RunConfig) -> dict:
    """The explicit (non-seed) settings of ``cfg`` as a TOML-like document."""
    doc = {"workers": cfg.workers}
    for name in SECTIONS:
        values = dataclasses.asdict(getattr(cfg, name))
        if name in SEEDED:
            values.pop("seed")
        doc[name] = values
    return doc


# --------------------------------------------------------------------------
# toy corpora


@dataclass
class CorpusItem:
    config: RunConfig
    scene: Scene
    trajectory: object
    grid: object
    table: object
    qa: list
    episodes: list = field(default_factory=list)
    build_s: float = 0.0


def corpus_shapes(n: int, seed0: int = 0, max_rooms: int = 6, max_objects: int = 30) -> list[tuple[int, int, int]]:
    """Deterministic (seed, rooms, objects) triples with roughly 4 objects per room."""
    rng = random.Random(derive_seed(seed0, "corpus"))
    out = []
    for k in range(n):
        rooms = rng.randint(1, max_rooms)
        lo = max(4, 3 * rooms)
        objects = rng.randint(min(lo, max_objects), min(max_objects, 5 * rooms + 4))
        out.append((seed0 + k, rooms, objects))
    return out


def toy_corpus(n: int, seed0: int = 0, base: Optional[RunConfig] = None, with_episodes: bool = False,
               max_rooms: int = 6, max_objects: int = 30, max_skips: Optional[int] = None) -> list[CorpusItem]:
    """``n`` scenes through plan, vis and genqa; seeds whose layout does not fit are skipped."""
    base = base or RunConfig()
    doc = _as_doc(base)
    items: list[CorpusItem] = []
    k = 0
    skips = 0
    max_skips = n if max_skips is None else max_skips
    while len(items) < n:
        seed, rooms, objects = corpus_shapes(1, seed0 + k, max_rooms, max_objects)[0]
        k += 1
        doc["scene"] = {**doc.get("scene", {}), "rooms": rooms, "objects": objects}
        cfg = build_config(doc, seed=seed)
        t0 = time.perf_counter()
        try:
            scene = scene_stage(cfg)
        except CapacityError:
            skips += 1
            if skips > max_skips:
                raise
            log.info("seed %d: layout does not fit, skipped", seed)
            continue
        traj, grid, _ = plan_stage(scene, cfg)
        table = vis_stage(scene, traj, cfg)
        pairs = qa_stage(scene, traj, table, cfg)
        eps = episodes_stage(scene, traj, table, cfg, grid) if with_episodes else []
        items.append(CorpusItem(cfg, scene, traj, grid, table, pairs, eps, time.perf_counter() - t0))
    return items
