"""Minimal echo server for exercising the external protocol.

Run as ``python -m togkit.backends.stub``. Besides ``hello`` and ``ping`` it
answers a few test-only ops: ``echo`` returns its args, ``segment`` returns
two RLE rectangles sized to the request, ``sleep`` waits ``seconds`` first,
``bad_id`` replies under a wrong id, ``garbage`` writes a non-JSON line,
``fail`` replies ``ok: false`` and ``exit`` terminates the process.
"""

from __future__ import annotations

import json
import sys
import time

import numpy as np

from togkit.maskops import mask_to_rle


def _two_boxes(h: int, w: int) -> list[dict]:
    a = np.zeros((h, w), bool)
    a[: h // 2, : w // 2] = True
    b = np.zeros((h, w), bool)
    b[h // 2:, w // 2:] = True
    return [mask_to_rle(a), mask_to_rle(b)]


def handle(req: dict):
    rid, op, args = req.get("id"), req.get("op"), req.get("args") or {}
    if op == "hello":
        return {"id": rid, "ok": True, "result": {"kinds": ["segmenter"], "concurrent": False}}
    if op == "ping":
        return {"id": rid, "ok": True}
    if op == "echo":
        return {"id": rid, "ok": True, "result": args}
    if op == "segment":
        return {"id": rid, "ok": True, "result": {"masks": _two_boxes(int(args.get("height", 480)), int(args.get("width", 640)))}}
    if op == "sleep":
        time.sleep(float(args.get("seconds", 1.0)))
        return {"id": rid, "ok": True, "result": {"slept": args.get("seconds", 1.0)}}
    if op == "bad_id":
        return {"id": rid + 1000, "ok": True, "result": {}}
    if op == "garbage":
        return "this is not json"
    if op == "exit":
        sys.exit(3)
    return {"id": rid, "ok": False, "error": f"unsupported op {op!r}"}


def main() -> int:
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            continue
        out = handle(req)
        sys.stdout.write(out + "\n" if isinstance(out, str) else json.dumps(out) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
