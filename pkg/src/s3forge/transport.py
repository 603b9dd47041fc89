"""Line-delimited JSON over a child process's standard streams, and JSON over HTTP POST."""
from __future__ import annotations

import json
import queue
import shlex
import subprocess
import sys
import threading
import urllib.error
import urllib.request
from typing import Callable

from .errors import AdapterError



class JsonLineProcess:
    """One request line in, one response line out, with a per-call timeout.

    A reader thread feeds a queue so a stalled child cannot block the caller
    past the timeout. After a timeout the pipe may carry a late reply, so the
    process is killed and later calls fail fast.
    """

    def __init__(self, command: str | list[str], timeout: float = 30.0):
        args = shlex.split(command) if isinstance(command, str) else list(command)
        if not args:
            raise AdapterError("empty adapter command")
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(args, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
                                         bufsize=1)
        except OSError as exc:
            raise AdapterError(f"cannot start {args[0]!r}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._broken = False
        threading.Thread(target=self._pump, daemon=True).start()

    def _pump(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def request(self, payload: dict) -> dict:
        if self._broken:
            raise AdapterError("adapter process unusable after an earlier failure")
        try:
            self.proc.stdin.write(json.dumps(payload, sort_keys=True) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            self._broken = True
            raise AdapterError(f"adapter pipe closed: {exc}") from exc
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self._broken = True
            self.proc.kill()
            raise AdapterError(f"adapter timed out after {self.timeout} s") from None
        if line is None:
            self._broken = True
            raise AdapterError("adapter exited")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AdapterError(f"adapter sent invalid JSON: {line[:80]!r}") from exc
        if not isinstance(reply, dict):
            raise AdapterError("adapter reply is not an object")
        return reply

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=2.0)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def post_json(url: str, payload: dict, timeout: float = 30.0) -> dict:
    req = urllib.request.Request(url, data=json.dumps(payload, sort_keys=True).encode("utf-8"),
                                 headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            body = resp.read()
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        raise AdapterError(f"POST {url} failed: {exc}") from exc
    try:
        reply = json.loads(body)
    except json.JSONDecodeError as exc:
        raise AdapterError(f"POST {url}: invalid JSON reply") from exc
    if not isinstance(reply, dict):
        raise AdapterError(f"POST {url}: reply is not an object")
    return reply


def serve_stdio(handler: Callable[[dict], dict], stdin=None, stdout=None) -> None:
    """Serve ``handler`` as a line-delimited JSON process (for writing adapters)."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            reply = handler(json.loads(line))
        except Exception as exc:  # a broken request must not kill the server
            reply = {"error": str(exc)}
        stdout.write(json.dumps(reply, sort_keys=True) + "\n")
        stdout.flush()


def require_text(reply: dict, key: str = "text") -> str:
    if "error" in reply and key not in reply:
        raise AdapterError(f"adapter error: {reply['error']}")
    val = reply.get(key)
    if not isinstance(val, str):
        raise AdapterError(f"adapter reply lacks string field {key!r}")
    return val

