"""Model adapters: the boundary between the streaming harness and an answering model.

Wire protocol (stdio lines or HTTP POST bodies):
  {"op": "summarize", "frames": [ref, ...], "prev": text}  ->  {"text": D_t, "summary": merged?}
  {"op": "respond", "layout": [{"kind", "t", "ref" | "text"}, ...]}  ->  {"text": answer-or-action}
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

from .errors import AdapterError
from .transport import JsonLineProcess, post_json, require_text


class ModelAdapter:
    def summarize(self, frames: Sequence[str], prev: str) -> tuple[str, str]:
        """Return (local description D_t, merged global summary)."""
        raise NotImplementedError

    def respond(self, layout: list[dict]) -> str:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _summary_pair(reply: dict) -> tuple[str, str]:
    text = require_text(reply)
    merged = reply.get("summary", text)
    if not isinstance(merged, str):
        raise AdapterError("summary field must be a string")
    return text, merged


class StdioAdapter(ModelAdapter):
    def __init__(self, command: str, timeout: float = 30.0):
        self.proc = JsonLineProcess(command, timeout)

    def summarize(self, frames, prev):
        return _summary_pair(self.proc.request({"op": "summarize", "frames": list(frames), "prev": prev}))

    def respond(self, layout):
        return require_text(self.proc.request({"op": "respond", "layout": layout}))

    def close(self):
        self.proc.close()


class HttpAdapter(ModelAdapter):
    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def summarize(self, frames, prev):
        return _summary_pair(post_json(self.url, {"op": "summarize", "frames": list(frames), "prev": prev},
                                       self.timeout))

    def respond(self, layout):
        return require_text(post_json(self.url, {"op": "respond", "layout": layout}, self.timeout))


class ScriptedAdapter(ModelAdapter):
    """In-process adapter driven by a callable ``policy(layout, call_index) -> text``."""

    def __init__(self, policy: Callable[[list[dict], int], str], summary: Optional[Callable] = None):
        self.policy = policy
        self.summary = summary
        self.calls = 0
        self.fold_calls = 0

    def summarize(self, frames, prev):
        self.fold_calls += 1
        if self.summary is not None:
            out = self.summary(list(frames), prev)
            return out if isinstance(out, tuple) else (out, out)
        text = f"{len(frames)} frames up to {frames[-1] if frames else 'none'}"
        return text, (prev + " | " + text) if prev else text

    def respond(self, layout):
        self.calls += 1
        return self.policy(layout, self.calls - 1)


def const_adapter(text: str) -> ScriptedAdapter:
    return ScriptedAdapter(lambda layout, i: text)


def make_adapter(uri: str, timeout: float = 30.0) -> ModelAdapter:
    """``stdio:<command>``, ``http:<url>`` or ``const:<text>``."""
    kind, _, arg = uri.partition(":")
    if kind == "stdio" and arg:
        return StdioAdapter(arg, timeout)
    if kind == "http" and arg:
        return HttpAdapter(arg if "://" in arg else "http://" + arg, timeout)
    if kind == "const":
        return const_adapter(arg)
    raise ValueError(f"adapter must be stdio:<cmd>, http:<url> or const:<text>, got {uri!r}")
