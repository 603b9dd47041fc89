"""Bounded-memory streaming sessions with periodic memory folding.

A session keeps a 1 FPS ring of recent frames, folds it every K seconds
into one retained frame plus a text memory produced by the adapter, and lays
out each query as

    [sink, (sparse_1, memory_1), ..., (sparse_n, memory_n), dense..., query]
"""
from __future__ import annotations

import hashlib
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .adapters import ModelAdapter
from .artifacts import canonical_json, dump_jsonl, load_jsonl
from .errors import AdapterError, ClockError, S3Error
from .exploration import ExploreConfig, execute, try_parse_action
from .qa import LETTERS, MC, QAPair
from .scene import Scene, Trajectory

log = logging.getLogger(__name__)

PRIOR_TEMPLATE = 'In the previous turn you answered: "{}".'
DEFAULT_SINK = ("You are watching an indoor camera stream. Earlier footage is summarized in memories; "
                "answer each question using only what has been observed.")
_EPS = 1e-9


@dataclass(frozen=True)
class StreamConfig:
    K: float = 10.0
    dense_window_s: float = 10.0
    dense_fps: float = 1.0
    sink_prefix: str = DEFAULT_SINK
    max_explore_rounds: int = 3
    blind: bool = False
    timeout_s: float = 30.0

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be positive")
        if not self.dense_window_s > 0 or not self.dense_fps > 0:
            raise ValueError("dense window and rate must be positive")
        if self.max_explore_rounds < 0:
            raise ValueError("max_explore_rounds must be >= 0")


@dataclass(frozen=True)
class FrameRef:
    ref: str
    t: float


@dataclass
class FoldState:
    config: StreamConfig
    dense: deque = field(default_factory=deque)
    sparse: list[FrameRef] = field(default_factory=list)
    memories: list[dict] = field(default_factory=list)
    global_summary: str = ""
    last_t: float = -math.inf
    last_tick: int = 0
    latest: Optional[FrameRef] = None
    explore: list[FrameRef] = field(default_factory=list)


def new_state(config: StreamConfig) -> FoldState:
    return FoldState(config)


def ingest(state: FoldState, frame: FrameRef, t: Optional[float] = None) -> FoldState:
    """Admit ``frame`` if it opens a new dense tick; evict frames older than the window."""
    t = frame.t if t is None else t
    if t < state.last_t - _EPS:
        raise ClockError(f"time went backwards: {t} after {state.last_t}")
    cfg = state.config
    state.last_t = t
    state.latest = frame
    tick = math.floor(t * cfg.dense_fps + _EPS)
    if tick > state.last_tick:
        state.dense.append(FrameRef(frame.ref, t))
        state.last_tick = tick
    while state.dense and state.dense[0].t <= t - cfg.dense_window_s + _EPS:
        state.dense.popleft()
    return state


def folds_due(t: float, K: float) -> int:
    return math.floor(t / K + _EPS)


def maybe_fold(state: FoldState, adapter: ModelAdapter, t: float) -> FoldState:
    """Run every fold whose K-grid time has passed. AdapterError leaves that fold for the next call."""
    cfg = state.config
    if cfg.blind:
        return state
    while len(state.memories) < folds_due(t, cfg.K):
        t_fold = (len(state.memories) + 1) * cfg.K
        window = [f for f in state.dense if f.t <= t_fold + _EPS] or list(state.dense)
        if window:
            keep = window[-1]
        elif state.latest is not None:
            keep = FrameRef(state.latest.ref, state.last_t)
        else:
            keep = FrameRef("none", t_fold)
        text, merged = adapter.summarize([f.ref for f in window], state.global_summary)
        state.sparse.append(keep)
        state.memories.append({"t_fold": t_fold, "text": text})
        state.global_summary = merged
    return state


def blind_filter(layout: Sequence[dict], blind: bool) -> list[dict]:
    """Drop every frame item when ``blind`` is set."""
    if not blind:
        return list(layout)
    return [it for it in layout if it["kind"] != "frame"]


def assemble(state: FoldState, query_text: str, t: Optional[float] = None) -> list[dict]:
    t = state.last_t if t is None else t
    t = max(t, 0.0)
    items = [{"kind": "sink", "t": 0.0, "text": state.config.sink_prefix}]
    last_fold = -math.inf
    for s, m in zip(state.sparse, state.memories):
        items.append({"kind": "frame", "role": "sparse", "t": s.t, "ref": s.ref})
        last_fold = max(m["t_fold"], s.t)
        items.append({"kind": "memory", "t": last_fold, "text": m["text"]})
    for d in state.dense:
        if d.t > last_fold:
            items.append({"kind": "frame", "role": "dense", "t": d.t, "ref": d.ref})
    for e in state.explore:
        items.append({"kind": "frame", "role": "explore", "t": max(e.t, t), "ref": e.ref})
    items.append({"kind": "query", "t": t, "text": query_text})
    return blind_filter(items, state.config.blind)


def budget(state: FoldState, t: Optional[float] = None) -> dict:
    return {"dense_count": len(state.dense), "sparse_count": len(state.sparse),
            "memory_count": len(state.memories)}


def expected_budget(t: float, config: StreamConfig) -> dict:
    dense = min(math.floor(t * config.dense_fps + _EPS), int(round(config.dense_window_s * config.dense_fps)))
    folds = 0 if config.blind else folds_due(t, config.K)
    return {"dense_count": dense, "sparse_count": folds, "memory_count": folds}


def simulate_budget(t_end: float, config: StreamConfig, fps: float = 1.0,
                    adapter: Optional[ModelAdapter] = None) -> dict:
    """Drive a synthetic stream up to ``t_end`` and report the resulting budget."""
    from .adapters import ScriptedAdapter
    adapter = adapter or ScriptedAdapter(lambda layout, i: "")
    state = new_state(config)
    n = int(round(t_end * fps))
    for k in range(n + 1):
        t = k / fps
        ingest(state, FrameRef(f"sim/{k:07d}", t))
        maybe_fold(state, adapter, t)
    return budget(state)


# --------------------------------------------------------------------------
# exploration environments


class ExplorationEnv:
    def reset(self, qa: QAPair) -> None:
        raise NotImplementedError

    def execute(self, action) -> list[FrameRef]:
        raise NotImplementedError


class SimExplorationEnv(ExplorationEnv):
    """Executes actions from the trajectory pose at the question time."""

    def __init__(self, scene: Scene, trajectory: Trajectory, config: Optional[ExploreConfig] = None,
                 dense_fps: float = 1.0):
        self.scene = scene
        self.trajectory = trajectory
        self.config = config or ExploreConfig(fps=trajectory.fps)
        self.step = max(1, int(round(trajectory.fps / dense_fps)))
        self.pose = trajectory.poses[0]
        self.qa_id = ""
        self.n = 0
        self.poses = []

    def reset(self, qa: QAPair) -> None:
        f = min(int(round(qa.timestamp_s * self.trajectory.fps)), len(self.trajectory.poses) - 1)
        self.pose = self.trajectory.poses[f]
        self.qa_id = qa.id
        self.n = 0
        self.poses = []

    def execute(self, action) -> list[FrameRef]:
        poses, _ = execute(self.scene, None, self.pose, action, self.config)
        if not poses:
            return []
        self.pose = poses[-1]
        picked = poses[self.step - 1::self.step]
        if not picked or picked[-1] is not poses[-1]:
            picked.append(poses[-1])
        out = []
        for p in picked:
            out.append(FrameRef(f"explore/{self.qa_id}/{self.n:04d}", p.t))
            self.poses.append(p)
            self.n += 1
        return out


# --------------------------------------------------------------------------
# sessions


def trajectory_frames(traj: Trajectory) -> list[FrameRef]:
    return [FrameRef(f"{traj.id}/{i:06d}", p.t) for i, p in enumerate(traj.poses)]


def format_query(qa: QAPair, prior: Optional[str] = None, explore_hint: bool = False) -> str:
    lines = []
    if qa.turn_idx == 2:
        lines.append(PRIOR_TEMPLATE.format(prior if prior is not None else ""))
    lines.append(qa.question)
    if qa.format == MC:
        lines.extend(f"{LETTERS[i]}. {c}" for i, c in enumerate(qa.choices))
        lines.append("Answer with the option letter.")
    else:
        unit = {"m": "meters", "m2": "square meters"}.get(qa.unit, "")
        lines.append(f"Answer with a number{' in ' + unit if unit else ''}.")
    if explore_hint:
        lines.append('To look around first, reply with an action such as {"action": "rotate_left_45"}.')
    return "\n".join(lines)


def layout_digest(layout: Sequence[dict]) -> str:
    return hashlib.sha256(canonical_json(list(layout)).encode("utf-8")).hexdigest()[:16]


@dataclass
class SessionTranscript:
    records: list[dict] = field(default_factory=list)
    prior_answers: dict = field(default_factory=dict)
    fold_errors: int = 0

    def to_jsonl(self, header: Optional[dict] = None) -> bytes:
        return dump_jsonl(self.records, header)


def transcript_from_jsonl(data: bytes | str) -> tuple[dict, SessionTranscript]:
    header, rows = load_jsonl(data)
    tr = SessionTranscript(records=rows)
    for r in rows:
        if r.get("turn_idx") == 1 and r.get("chain_id"):
            tr.prior_answers[r["chain_id"]] = r.get("answer") or ""
    return header or {}, tr


def _safe_fold(state, adapter, t, transcript):
    try:
        maybe_fold(state, adapter, t)
    except AdapterError as exc:
        transcript.fold_errors += 1
        log.warning("fold at t=%.2f failed, retrying next tick: %s", t, exc)


def run_session(frames: Sequence[FrameRef], qa_schedule: Sequence[QAPair], adapter: ModelAdapter,
                env: Optional[ExplorationEnv], config: StreamConfig,
                record_layouts: bool = False) -> SessionTranscript:
    state = new_state(config)
    transcript = SessionTranscript()
    schedule = sorted(qa_schedule, key=lambda q: (q.timestamp_s, q.turn_idx, q.id))
    frames = list(frames)
    fi = 0
    for qa in schedule:
        t = qa.timestamp_s
        while fi < len(frames) and frames[fi].t <= t + _EPS:
            ingest(state, frames[fi])
            _safe_fold(state, adapter, frames[fi].t, transcript)
            fi += 1
        _safe_fold(state, adapter, t, transcript)
        transcript.records.append(_ask(state, qa, t, adapter, env, transcript, record_layouts))
    return transcript


def _ask(state, qa, t, adapter, env, transcript, record_layouts) -> dict:
    cfg = state.config
    prior = transcript.prior_answers.get(qa.chain_id, "") if qa.turn_idx == 2 else None
    query = format_query(qa, prior, explore_hint=env is not None)
    actions, appended, layouts = [], [], []
    answer, is_action, error = None, False, None
    rounds = 0
    state.explore = []
    try:
        if env is not None:
            env.reset(qa)
        layout = assemble(state, query, t)
        layouts.append(layout)
        resp = adapter.respond(layout)
        while True:
            act = try_parse_action(resp)
            if act is None:
                answer = resp
                break
            actions.append(act.to_dict())
            if env is None or rounds >= cfg.max_explore_rounds:
                answer, is_action = resp, True
                break
            new = env.execute(act)
            rounds += 1
            state.explore.extend(new)
            appended.extend(f.ref for f in new)
            layout = assemble(state, query, t)
            layouts.append(layout)
            resp = adapter.respond(layout)
    except AdapterError as exc:
        error = f"adapter: {exc}"
    except S3Error as exc:
        error = f"env: {exc}"
    finally:
        state.explore = []
    if qa.turn_idx == 1 and qa.chain_id:
        transcript.prior_answers[qa.chain_id] = answer if (answer is not None and not is_action) else ""
    rec = {"qa_id": qa.id, "t": t, "task": qa.task, "chain_id": qa.chain_id, "turn_idx": qa.turn_idx,
           "query": query, "layout_digest": layout_digest(layouts[-1]) if layouts else None,
           "explore_rounds": rounds, "explore_actions": actions, "appended_frames": appended,
           "answer": answer, "is_action": is_action, "error": error,
           "budget": budget(state), "n_layout_frames": sum(1 for it in (layouts[-1] if layouts else [])
                                                           if it["kind"] == "frame")}
    if record_layouts:
        rec["layouts"] = layouts
    return rec


def predictions_from_transcript(transcript: SessionTranscript) -> list[dict]:
    return [{"qa_id": r["qa_id"], "text": r["answer"] or "", "is_action": bool(r["is_action"])}
            for r in transcript.records]


def strict_joint_violations(transcript: SessionTranscript, qas: Sequence[QAPair]) -> list[str]:
    """Turn-2 queries must quote the adapter's own turn-1 answer and never the ground truth."""
    by_id = {q.id: q for q in qas}
    turn1 = {}
    for q in qas:
        if q.turn_idx == 1 and q.chain_id:
            turn1[q.chain_id] = q
    answers = {r["chain_id"]: (r["answer"] if not r["is_action"] else "") or ""
               for r in transcript.records if r.get("turn_idx") == 1 and r.get("chain_id")}
    bad = []
    for r in transcript.records:
        q = by_id.get(r["qa_id"])
        if q is None or q.turn_idx != 2:
            continue
        prior = answers.get(q.chain_id, "")
        prefix = PRIOR_TEMPLATE.format(prior)
        if not r["query"].startswith(prefix + "\n"):
            bad.append(f"{q.id}: query does not quote the adapter's turn-1 answer")
            continue
        gt = turn1[q.chain_id].answer_text if q.chain_id in turn1 else None
        rest = r["query"][len(prefix) + 1:]
        if gt is not None and gt not in prior and gt in prefix:
            bad.append(f"{q.id}: ground truth {gt!r} leaked into the prior-answer quote")
        if rest != format_query(q, None, "To look around first" in rest).split("\n", 1)[1]:
            bad.append(f"{q.id}: query body altered")
    return bad
