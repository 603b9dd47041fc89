"""Scoring: accuracy for choice items, mean relative accuracy for numeric ones, baselines and reports."""
from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .artifacts import config_digest, load_jsonl
from .errors import FormatError, UnknownReferenceError
from .exploration import try_parse_action
from .qa import LETTERS, MC, QAPair
from .seeds import py_rng
from .stream import blind_filter  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

_BOUNDARY = 1e-12
DEFAULT_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class MetricConfig:
    thresholds: tuple = DEFAULT_THRESHOLDS
    zero_tol: float = 1e-9
    blind: bool = False

    def __post_init__(self):
        th = tuple(float(x) for x in self.thresholds)
        if not th or any(not 0.0 < x < 1.0 for x in th) or any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be strictly increasing inside (0, 1)")
        object.__setattr__(self, "thresholds", th)


@dataclass
class Prediction:
    qa_id: str
    text: str
    parsed: Optional[float | int] = None
    is_action: bool = False

    def to_dict(self) -> dict:
        return {"qa_id": self.qa_id, "text": self.text, "parsed": self.parsed, "is_action": self.is_action}


# --------------------------------------------------------------------------
# parsing

_LETTER = re.compile(r"^\s*(?:(?:the\s+)?(?:answer|option|choice)(?:\s+is)?\s*[:\-]?\s*)?"
                     r"[\(\[]?\s*([A-Za-z])\s*[\)\]]?\s*[.:,!]?\s*$", re.I)
_LETTER_TEXT = re.compile(r"^\s*[\(\[]?([A-Za-z])[\)\]]?[.:)]\s+(.+)$")
_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?")
_UNIT = re.compile(
    r"\s*(square\s+(?:meters?|metres?|centimeters?|centimetres?|feet|foot)|sq\.?\s*(?:m|ft|cm)|"
    r"(?:m|cm|ft)(?:\^?2|²)|meters?|metres?|centimeters?|centimetres?|millimeters?|millimetres?|"
    r"kilometers?|kilometres?|feet|foot|inch(?:es)?|km|cm|mm|ft|m)(?![a-z0-9])", re.I)

_LENGTH = {"m": 1.0, "meter": 1.0, "metre": 1.0, "cm": 0.01, "centimeter": 0.01, "centimetre": 0.01,
           "mm": 0.001, "millimeter": 0.001, "millimetre": 0.001, "km": 1000.0, "kilometer": 1000.0,
           "kilometre": 1000.0, "ft": 0.3048, "foot": 0.3048, "feet": 0.3048, "inch": 0.0254}
_AREA = {"m": 1.0, "meter": 1.0, "metre": 1.0, "cm": 1e-4, "centimeter": 1e-4, "centimetre": 1e-4,
         "ft": 0.09290304, "foot": 0.09290304, "feet": 0.09290304}


def normalize_text(s: str) -> str:
    s = re.sub(r"\s+", " ", s.strip().lower()).strip(" .!?,;:\"'")
    return s[4:] if s.startswith("the ") else s


def _unit_factor(unit: str, want: str) -> Optional[float]:
    u = re.sub(r"\s+", " ", unit.strip().lower())
    area = bool(re.search(r"(\^?2|²)$", u)) or u.startswith(("square", "sq"))
    base = re.sub(r"^(square |sq\.? ?)|(\^?2|²)$", "", u).strip()
    if base.endswith("es") and base[:-2] in _LENGTH:
        base = base[:-2]
    elif base.endswith("s") and base[:-1] in _LENGTH:
        base = base[:-1]
    if want == "m2" and area:
        return _AREA.get(base)
    if want == "m" and not area:
        return _LENGTH.get(base)
    return None


def parse_number(text: str, unit: str = "") -> Optional[float]:
    m = _NUMBER.search(text)
    if m is None:
        return None
    try:
        value = float(m.group(0))
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    um = _UNIT.match(text, m.end())
    if um and unit in ("m", "m2"):
        factor = _unit_factor(um.group(1), unit)
        if factor is not None:
            value *= factor
    return value


def parse_choice(text: str, choices: Sequence[str]) -> Optional[int]:
    n = min(len(choices), 4)
    m = _LETTER.match(text)
    if m:
        i = LETTERS.index(m.group(1).upper()) if m.group(1).upper() in LETTERS else -1
        return i if 0 <= i < n else None
    m = _LETTER_TEXT.match(text)
    if m and m.group(1).upper() in LETTERS[:n]:
        i = LETTERS.index(m.group(1).upper())
        return i if normalize_text(m.group(2)) == normalize_text(choices[i]) else None
    norm = normalize_text(text)
    hits = [i for i, c in enumerate(choices) if normalize_text(c) == norm]
    return hits[0] if len(hits) == 1 else None


def parse_prediction(text: str, qa: QAPair, is_action: bool = False) -> Prediction:
    text = text if isinstance(text, str) else ""
    pred = Prediction(qa.id, text, None, is_action)
    if is_action or not text.strip():
        return pred
    if try_parse_action(text) is not None:
        pred.is_action = True
        return pred
    pred.parsed = parse_choice(text, qa.choices) if qa.format == MC else parse_number(text, qa.unit)
    return pred


# --------------------------------------------------------------------------
# metrics


def score_mc(pred: Prediction, qa: QAPair) -> int:
    if qa.format != MC:
        raise FormatError(f"{qa.id} is numeric; use mra")
    return int(pred.parsed is not None and int(pred.parsed) == int(qa.answer))


def mra(pred_value: Optional[float], gt_value: float, config: MetricConfig = MetricConfig()) -> float:
    if pred_value is None or not math.isfinite(pred_value):
        return 0.0
    y = float(gt_value)
    if y == 0.0:
        return 1.0 if abs(pred_value) < config.zero_tol else 0.0
    rel = abs(pred_value - y) / abs(y)
    # an error sitting on a threshold fails it, even when float rounding lands a hair below
    passed = sum(1 for th in config.thresholds if rel < round(1.0 - th, 12) - _BOUNDARY)
    return passed / len(config.thresholds)


def score(pred: Prediction, qa: QAPair, config: MetricConfig = MetricConfig()) -> float:
    if qa.format == MC:
        return float(score_mc(pred, qa))
    return mra(pred.parsed, qa.answer, config)


# --------------------------------------------------------------------------
# aggregation


def _as_predictions(preds: Iterable, by_id: dict) -> dict[str, Prediction]:
    out: dict[str, Prediction] = {}
    for p in preds:
        if isinstance(p, dict):
            qa_id = p.get("qa_id")
            if qa_id not in by_id:
                raise UnknownReferenceError(f"prediction for unknown qa_id {qa_id!r}")
            text = p.get("text", p.get("answer")) or ""
            p = parse_prediction(text, by_id[qa_id], bool(p.get("is_action", False)))
        elif p.qa_id not in by_id:
            raise UnknownReferenceError(f"prediction for unknown qa_id {p.qa_id!r}")
        if p.qa_id in out:
            log.warning("duplicate prediction for %s; keeping the last", p.qa_id)
        out[p.qa_id] = p
    return out


def aggregate(preds: Iterable, qas: Sequence[QAPair], config: MetricConfig = MetricConfig(),
              baselines: Optional[dict] = None, meta: Optional[dict] = None) -> dict:
    """Per-task means and their unweighted mean. Missing predictions score 0."""
    by_id = {q.id: q for q in qas}
    table = _as_predictions(preds, by_id)
    buckets: dict[str, list[float]] = {}
    per_item = {}
    for q in qas:
        p = table.get(q.id) or Prediction(q.id, "")
        s = score(p, q, config)
        per_item[q.id] = s
        buckets.setdefault(q.task, []).append(s)
    fmt = {q.task: q.format for q in qas}
    tasks = {t: {"score": sum(v) / len(v), "n": len(v), "format": fmt[t],
                 "metric": "accuracy" if fmt[t] == MC else "mra"}
             for t, v in sorted(buckets.items())}
    overall = sum(r["score"] for r in tasks.values()) / len(tasks) if tasks else 0.0
    chains: dict[str, list[QAPair]] = {}
    for q in qas:
        if q.chain_id:
            chains.setdefault(q.chain_id, []).append(q)
    joint = [min(per_item[q.id] for q in c) for c in chains.values() if len(c) == 2]
    report = {
        "tasks": tasks,
        "overall": overall,
        "n_items": len(qas),
        "n_predictions": len(table),
        "n_missing": sum(1 for q in qas if q.id not in table),
        "n_actions": sum(1 for p in table.values() if p.is_action),
        "joint": {"n_chains": len(joint), "score": sum(joint) / len(joint) if joint else None},
        "metric": {"thresholds": list(config.thresholds), "overall": "macro over tasks present",
                   "blind": config.blind},
        "config_digest": config_digest(config),
    }
    if baselines:
        report["baselines"] = {name: aggregate(bp, qas, config)["overall"] for name, bp in sorted(baselines.items())}
        report["baseline_tasks"] = {name: {t: r["score"] for t, r in aggregate(bp, qas, config)["tasks"].items()}
                                    for name, bp in sorted(baselines.items())}
        report["frequent_reference"] = "evaluation set"
    if meta:
        report["meta"] = meta
    return report


# --------------------------------------------------------------------------
# baselines


def baseline_random(qas: Sequence[QAPair], seed: int = 0) -> list[Prediction]:
    rng = py_rng(seed, "baseline_random")
    out = []
    for q in qas:
        if q.format == MC:
            i = rng.randrange(len(q.choices))
            out.append(Prediction(q.id, LETTERS[i], i))
        else:
            out.append(Prediction(q.id, "", None))
    return out


def _mode(values: list):
    counts = Counter(values)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def baseline_frequent(qas: Sequence[QAPair]) -> list[Prediction]:
    modal = {}
    for task in sorted({q.task for q in qas}):
        items = [q for q in qas if q.task == task]
        if items[0].format == MC:
            modal[task] = _mode([int(q.answer) for q in items])
        else:
            modal[task] = _mode([round(float(q.answer), 1) for q in items])
    out = []
    for q in qas:
        v = modal[q.task]
        if q.format == MC:
            out.append(Prediction(q.id, LETTERS[v], v if v < len(q.choices) else None))
        else:
            out.append(Prediction(q.id, f"{v:g}", float(v)))
    return out


def mc_accuracy(preds: Iterable, qas: Sequence[QAPair], n_choices: Optional[int] = 4) -> tuple[float, int]:
    """Accuracy pooled over MC items (optionally only those with ``n_choices`` options)."""
    items = [q for q in qas if q.format == MC and (n_choices is None or len(q.choices) == n_choices)]
    by_id = {q.id: q for q in qas}
    table = _as_predictions(preds, by_id)
    if not items:
        return 0.0, 0
    hits = sum(score_mc(table.get(q.id) or Prediction(q.id, ""), q) for q in items)
    return hits / len(items), len(items)


def load_predictions(data: bytes | str) -> list[dict]:
    """Predictions JSONL ``{qa_id, text}`` or a session transcript."""
    _, rows = load_jsonl(data)
    out = []
    for r in rows:
        if "qa_id" not in r:
            raise FormatError("prediction record lacks qa_id")
        out.append({"qa_id": r["qa_id"], "text": r.get("text", r.get("answer")) or "",
                    "is_action": bool(r.get("is_action", False))})
    return out
