#!/usr/bin/env python3
"""Deterministic stdio adapter for exercising `s3forge run`.

Modes:
  const              always answer --text (default "A")
  rotate-then-answer first reply is a rotate action; once explore frames are
                     in the layout, answer --text
  tagged             answer "pick-<n>" with n the respond-call index, so
                     turn-2 conditioning can be checked by string search

Example:
  s3forge run --seed 3 --adapter "stdio:python3 scripts/scripted_adapter.py --mode rotate-then-answer"
"""
import argparse
import json

from s3forge.transport import serve_stdio


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mode", choices=("const", "rotate-then-answer", "tagged"), default="const")
    ap.add_argument("--text", default="A")
    ap.add_argument("--action", default="rotate_left_45")
    args = ap.parse_args()
    calls = {"respond": 0, "summarize": 0}

    def handle(req):
        op = req.get("op")
        if op == "summarize":
            calls["summarize"] += 1
            frames = req.get("frames", [])
            text = f"fold {calls['summarize']}: {len(frames)} frames"
            prev = req.get("prev", "")
            return {"text": text, "summary": f"{prev} | {text}" if prev else text}
        if op == "respond":
            n = calls["respond"]
            calls["respond"] += 1
            layout = req.get("layout", [])
            if args.mode == "rotate-then-answer":
                explored = any(it.get("role") == "explore" for it in layout)
                return {"text": args.text if explored else json.dumps({"action": args.action})}
            if args.mode == "tagged":
                return {"text": f"pick-{n}"}
            return {"text": args.text}
        return {"error": f"unknown op {op!r}"}

    serve_stdio(handle)


if __name__ == "__main__":
    main()
