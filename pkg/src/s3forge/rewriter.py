"""Optional question rewriting through an external client.

Wire contract: request {question, entities, answer_type}, response {question}.
A rewrite is kept only if every entity name still appears in the new text;
answers are never touched.
"""
from __future__ import annotations

import dataclasses
import logging
from typing import Sequence

from .errors import AdapterError
from .qa import QAPair
from .transport import JsonLineProcess, post_json, require_text

log = logging.getLogger(__name__)


class RewriterClient:
    def rewrite(self, question: str, constraints: dict) -> str:
        return question

    def close(self) -> None:
        pass


PassThroughRewriter = RewriterClient


class StdioRewriter(RewriterClient):
    def __init__(self, command: str, timeout: float = 30.0):
        self.proc = JsonLineProcess(command, timeout)

    def rewrite(self, question, constraints):
        return require_text(self.proc.request({"question": question, **constraints}), "question")

    def close(self):
        self.proc.close()


class HttpRewriter(RewriterClient):
    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url.rstrip("/") + "/rewrite"
        self.timeout = timeout

    def rewrite(self, question, constraints):
        return require_text(post_json(self.url, {"question": question, **constraints}, self.timeout), "question")


def preserves_entities(text: str, entities: Sequence[str]) -> bool:
    low = text.lower()
    return bool(text.strip()) and all(e.lower() in low for e in entities)


def rewrite(pairs: Sequence[QAPair], client: RewriterClient) -> list[QAPair]:
    out = []
    for p in pairs:
        constraints = {"entities": p.entities, "answer_type": p.format}
        try:
            text = client.rewrite(p.question, constraints)
        except (AdapterError, TimeoutError, OSError) as exc:
            log.warning("rewrite of %s failed, keeping original: %s", p.id, exc)
            out.append(p)
            continue
        if text != p.question and preserves_entities(text, p.entities):
            out.append(dataclasses.replace(p, question=text, meta={**p.meta, "rewritten": True}))
        else:
            if text != p.question:
                log.info("rewrite of %s dropped an entity, keeping original", p.id)
            out.append(p)
    return out


def make_rewriter(uri: str, timeout: float = 30.0) -> RewriterClient:
    kind, _, arg = uri.partition(":")
    if kind in ("", "none", "passthrough"):
        return RewriterClient()
    if kind == "stdio" and arg:
        return StdioRewriter(arg, timeout)
    if kind == "http" and arg:
        return HttpRewriter(arg if "://" in arg else "http://" + arg, timeout)
    raise ValueError(f"rewriter must be passthrough, stdio:<cmd> or http:<url>, got {uri!r}")
