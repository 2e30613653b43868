"""Client for perception models running in a separate process.

The child speaks newline-delimited JSON on stdin/stdout. A reader thread
routes responses to waiting callers by ``id``; ids increase monotonically
from 1 after the ``hello`` handshake at id 0. Without a concurrency
declaration calls are serialized, otherwise requests may be pipelined.
"""

from __future__ import annotations

import itertools
import logging
import subprocess
import threading
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout

import numpy as np

from togkit.backends import wire
from togkit.backends.base import AffordancePrediction, AffordanceQuery, Frame
from togkit.errors import BackendFailure, BackendTimeout, ProcessExit, ProtocolError
from togkit.geometry import GraspRect

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


class ExternalBackend:
    def __init__(self, command, timeout: float = DEFAULT_TIMEOUT, concurrent: bool | None = None, env=None, cwd=None):
        if isinstance(command, str):
            command = [command]
        self.command = list(command)
        self.timeout = float(timeout)
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=None,
            text=True,
            encoding="utf-8",
            bufsize=1,
            env=env,
            cwd=cwd,
        )
        self._pending: dict[int, Future] = {}
        self._abandoned: set[int] = set()
        self._state = threading.Lock()
        self._write = threading.Lock()
        self._serial = threading.Lock()
        self._ids = itertools.count(1)
        self._dead: BaseException | None = None
        self._spool = wire.ImageSpool()
        self._reader = threading.Thread(target=self._read_loop, name="togkit-external-reader", daemon=True)
        self._reader.start()
        try:
            hello = self._request(0, "hello", {})
        except BaseException:
            self.close()
            raise
        self.kinds = tuple(hello.get("kinds", ()))
        self.labels = tuple(hello.get("labels", ()))
        self.concurrent = bool(hello.get("concurrent", False)) if concurrent is None else bool(concurrent)

    # transport ----------------------------------------------------------
    def _read_loop(self):
        try:
            for line in self._proc.stdout:
                if not line.strip():
                    continue
                try:
                    msg = wire.parse_response(line)
                except ProtocolError as exc:
                    self._fail_all(exc)
                    continue
                with self._state:
                    fut = self._pending.pop(msg["id"], None)
                    stale = msg["id"] in self._abandoned
                    self._abandoned.discard(msg["id"])
                if fut is not None:
                    fut.set_result(msg)
                elif stale:
                    log.debug("dropping late response %s", msg["id"])
                else:
                    self._fail_all(ProtocolError(f"response id {msg['id']} matches no request"))
        finally:
            code = self._proc.poll()
            self._fail_all(ProcessExit(f"backend process exited (code {code})"), dead=True)

    def _fail_all(self, exc: BaseException, dead: bool = False):
        with self._state:
            if dead:
                self._dead = exc
            pending = list(self._pending.values())
            self._pending.clear()
        for fut in pending:
            if not fut.done():
                fut.set_exception(exc)

    def _request(self, rid: int, op: str, args: dict) -> dict:
        fut: Future = Future()
        with self._state:
            if self._dead is not None:
                raise ProcessExit(str(self._dead))
            self._pending[rid] = fut
        try:
            with self._write:
                self._proc.stdin.write(wire.dumps_frame({"id": rid, "op": op, "args": args}))
                self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            with self._state:
                self._pending.pop(rid, None)
            raise ProcessExit(f"cannot write to backend process: {exc}") from exc
        try:
            msg = fut.result(timeout=self.timeout)
        except FutureTimeout:
            with self._state:
                self._pending.pop(rid, None)
                self._abandoned.add(rid)
            raise BackendTimeout(f"{op} (id {rid}) timed out after {self.timeout:g} s") from None
        if not msg["ok"]:
            raise BackendFailure(f"{op} failed: {msg.get('error', 'unknown error')}")
        return msg.get("result") or {}

    def call(self, op: str, args: dict | None = None) -> dict:
        """Send one request and wait for its response."""
        args = args or {}
        if self.concurrent:
            return self._request(next(self._ids), op, args)
        with self._serial:
            return self._request(next(self._ids), op, args)

    def close(self):
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin and not proc.stdin.closed:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        if proc.stdout:
            proc.stdout.close()
        self._spool.close()
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # ports --------------------------------------------------------------
    def _frame_args(self, frame: Frame) -> dict:
        path = str(frame.path) if frame.path is not None else self._spool.write(frame.image)
        h, w = frame.image.shape[:2]
        return {"image": path, "key": frame.key, "height": h, "width": w}

    def segment(self, frame: Frame) -> list[np.ndarray]:
        res = self.call("segment", self._frame_args(frame))
        h, w = frame.image.shape[:2]
        return [wire.mask_in(m, h, w) for m in res.get("masks", [])]

    def embed_image(self, image, frame: Frame, mask) -> np.ndarray:
        args = {"crop": self._spool.write(image), "frame": self._frame_args(frame), "mask": wire.mask_out(mask)}
        return np.asarray(self.call("embed_image", args)["embedding"], dtype=np.float64)

    def embed_text(self, text: str) -> np.ndarray:
        return np.asarray(self.call("embed_text", {"text": text})["embedding"], dtype=np.float64)

    def embed_pair(self, crop, frame: Frame, mask) -> np.ndarray:
        args = {"crop": self._spool.write(crop), "frame": self._frame_args(frame), "mask": wire.mask_out(mask)}
        return np.asarray(self.call("embed_pair", args)["embedding"], dtype=np.float64)

    def classify(self, crops, frame: Frame, masks) -> np.ndarray:
        args = {
            "crops": [self._spool.write(c) for c in crops],
            "frame": self._frame_args(frame),
            "masks": [wire.mask_out(m) for m in masks],
        }
        res = self.call("classify", args)
        if res.get("labels"):
            self.labels = tuple(res["labels"])
        return np.asarray(res["logits"], dtype=np.float64).reshape(len(crops), -1)

    def predict_oneshot(self, scene_crop, ref_crop, ref_region, query: AffordanceQuery) -> np.ndarray:
        args = {
            "scene_crop": self._spool.write(scene_crop),
            "ref_crop": self._spool.write(ref_crop),
            "ref_region": wire.mask_out(ref_region),
            "frame": self._frame_args(query.frame),
            "mask": wire.mask_out(query.mask),
            "transform": query.transform.to_dict(),
            "affordance": query.affordance,
            "polarity": query.polarity,
        }
        res = self.call("affordance_oneshot", args)
        side = query.transform.side
        return wire.mask_in(res["mask"], side, side)

    def segment_affordances(self, frame: Frame) -> list[AffordancePrediction]:
        res = self.call("affordance_segment", self._frame_args(frame))
        h, w = frame.image.shape[:2]
        return [
            AffordancePrediction(wire.mask_in(p["mask"], h, w), p["label"], float(p["confidence"]))
            for p in res.get("predictions", [])
        ]

    def propose(self, frame: Frame) -> list[GraspRect]:
        res = self.call("propose_grasps", self._frame_args(frame))
        return [wire.grasp_in(g) for g in res.get("grasps", [])]
