"""Interactive control service.

A session wraps one live episode stepper.  Clients pull frames one
request at a time, so goal, mask and style changes land between frames
and take effect on the next generated frame.  Trace export goes through
the same byte path as the offline exporter, which keeps online exports
byte-identical to CLI ones for identical runs.

Two transports speak the same JSON request schema (see handle_request):
  TCP        one message = 4-byte big-endian length prefix + UTF-8 JSON
  WebSocket  one message = one JSON text frame
"""

from __future__ import annotations

import asyncio
import base64
import json
import struct
import time

import numpy as np

from . import __version__
from .errors import MotionForgeError, SessionNotFound, UnknownCheckpoint
from .feedback import StyleBank
from .generate import (
    EpisodeConfig,
    EpisodeRunner,
    RgfSettings,
    trace_artifacts,
)
from .intention import ControlMask, GoalSpec
from .model import load_checkpoint
from .pose import POSE_DIM, PoseState
from .skeleton import CONTROL_JOINT_NAMES
from .synth import standing_pose

MAX_MESSAGE_BYTES = 16 * 1024 * 1024
SCHEMA_VERSION = 1


def _check_mask_goals(mask: ControlMask, goals: GoalSpec):
    """Every active joint needs a goal; reject mutations that break this."""
    missing = [n for n in mask.active_joint_names() if n not in goals.joints]
    if missing:
        raise MotionForgeError(f"active joints without goals: {missing}")


def _diag_dict(d) -> dict:
    return {
        "frame": d.frame,
        "gate_on": d.gate_on,
        "component": d.component,
        "distances": {k: float(v) for k, v in d.distances.items()},
        "style": d.style,
    }


class SessionEngine:
    """Checkpoint, style bank and the table of live sessions."""

    def __init__(self, checkpoint, styles_dir=None):
        try:
            self.runtime = load_checkpoint(checkpoint)
        except (OSError, KeyError, ValueError) as exc:
            raise UnknownCheckpoint(f"cannot load checkpoint {checkpoint}: {exc}") from exc
        self.checkpoint = str(checkpoint)
        self.styles = StyleBank.from_dir(styles_dir) if styles_dir else None
        self.sessions = {}
        self._next_id = 1
        self.started = time.monotonic()

    def _session(self, request) -> EpisodeRunner:
        sid = request.get("session")
        if sid not in self.sessions:
            raise SessionNotFound(f"no session {sid!r}")
        return self.sessions[sid]

    def op_health(self, request) -> dict:
        return {
            "status": "serving",
            "version": __version__,
            "schema": SCHEMA_VERSION,
            "sessions": len(self.sessions),
            "uptime_s": time.monotonic() - self.started,
        }

    def op_describe(self, request) -> dict:
        skeleton = self.runtime.skeleton
        cfg = self.runtime.model.cfg
        return {
            "schema": SCHEMA_VERSION,
            "checkpoint": self.checkpoint,
            "model": cfg.to_dict(),
            "pose_channels": POSE_DIM,
            "control_joints": list(CONTROL_JOINT_NAMES),
            "styles": self.styles.labels() if self.styles else [],
            "skeleton": {
                "names": list(skeleton.names),
                "parents": [int(p) for p in skeleton.parent],
                "offsets": skeleton.offsets.tolist(),
                "hash": skeleton.content_hash(),
            },
        }

    def op_create(self, request) -> dict:
        skeleton = self.runtime.skeleton
        if "initial_pose" in request and request["initial_pose"] is not None:
            flat = np.asarray(request["initial_pose"], dtype=np.float64)
            initial = PoseState.from_flat(flat)
        else:
            initial = standing_pose(skeleton)
        goals = GoalSpec.from_dict(request.get("goals") or {})
        mask = (
            ControlMask.from_names(request["mask"])
            if request.get("mask") is not None
            else ControlMask.from_names(list(goals.joints))
        )
        _check_mask_goals(mask, goals)
        cfg = EpisodeConfig(
            goals=goals,
            mask=mask,
            duration=int(request.get("duration", 240)),
            seed=int(request.get("seed", 0)),
            success_radius=float(request.get("success_radius", 0.10)),
            fixed_z=bool(request.get("fixed_z", False)),
        )
        rgf = None
        if request.get("style") is not None:
            if self.styles is None:
                raise MotionForgeError("service started without a style directory")
            gmm, alpha = self.styles.get(request["style"])
            if request.get("alpha") is not None:
                alpha = float(request["alpha"])
            rgf = RgfSettings(gmm, alpha if alpha is not None else 0.01,
                              float(request.get("stop_distance", 1.0)), request["style"])
        runner = EpisodeRunner(
            self.runtime, initial, cfg, rgf, self.styles,
            relatch_on_goal_move=bool(request.get("relatch_on_goal_move", False)),
        )
        sid = f"s{self._next_id}"
        self._next_id += 1
        self.sessions[sid] = runner
        return {"session": sid, "frame": 0, "pose": initial.flatten().tolist()}

    def op_step(self, request) -> dict:
        runner = self._session(request)
        count = int(request.get("count", 1))
        if count < 0:
            raise ValueError("count must not be negative")
        frames, diagnostics = [], []
        for _ in range(count):
            pose, diag = runner.step()
            frames.append(pose.flatten().tolist())
            diagnostics.append(_diag_dict(diag))
        return {"frame": runner.frame_index, "frames": frames, "diagnostics": diagnostics}

    def op_set_goal(self, request) -> dict:
        runner = self._session(request)
        goals = GoalSpec.from_dict(request.get("goals") or {})
        mask = (
            ControlMask.from_names(request["mask"])
            if request.get("mask") is not None
            else runner.mask
        )
        _check_mask_goals(mask, goals)
        runner.set_goals(goals)
        if mask is not runner.mask:
            runner.set_mask(mask)
        return {"frame": runner.frame_index}

    def op_set_mask(self, request) -> dict:
        runner = self._session(request)
        mask = ControlMask.from_names(request.get("mask") or [])
        _check_mask_goals(mask, runner.goals)
        runner.set_mask(mask)
        return {"frame": runner.frame_index}

    def op_set_style(self, request) -> dict:
        runner = self._session(request)
        if request.get("style") is not None:
            runner.set_style(request["style"])
        if request.get("alpha") is not None:
            runner.set_alpha(float(request["alpha"]))
        return {
            "frame": runner.frame_index,
            "style": runner.rgf.style,
            "alpha": runner.rgf.alpha,
        }

    def op_export_trace(self, request) -> dict:
        runner = self._session(request)
        clip_bytes, diagnostics = trace_artifacts(runner.trace(), self.runtime.skeleton)
        return {
            "frames": runner.frame_index + 1,
            "clip_b64": base64.b64encode(clip_bytes).decode("ascii"),
            "diagnostics": diagnostics,
        }

    def op_destroy(self, request) -> dict:
        sid = request.get("session")
        if sid not in self.sessions:
            raise SessionNotFound(f"no session {sid!r}")
        del self.sessions[sid]
        return {"destroyed": sid}

    def handle_request(self, request: dict) -> dict:
        """Dispatch one request dict; always returns a response dict."""
        try:
            op = request.get("op")
            handler = getattr(self, f"op_{op}", None) if isinstance(op, str) else None
            if handler is None:
                raise ValueError(f"unknown op {op!r}")
            out = handler(request)
            out["ok"] = True
            if "id" in request:
                out["id"] = request["id"]
            return out
        except (MotionForgeError, ValueError, KeyError, TypeError) as exc:
            out = {"ok": False, "error": {"type": type(exc).__name__, "message": str(exc)}}
        except Exception as exc:  # keep the connection alive no matter what
            out = {"ok": False, "error": {"type": "InternalError", "message": f"{type(exc).__name__}: {exc}"}}
        if isinstance(request, dict) and "id" in request:
            out["id"] = request["id"]
        return out


async def _handle_tcp(engine: SessionEngine, reader, writer):
    try:
        while True:
            header = await reader.readexactly(4)
            (length,) = struct.unpack(">I", header)
            if length > MAX_MESSAGE_BYTES:
                break
            payload = await reader.readexactly(length)
            try:
                request = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                response = {"ok": False, "error": {"type": "BadMessage", "message": str(exc)}}
            else:
                response = engine.handle_request(request)
            body = json.dumps(response).encode("utf-8")
            writer.write(struct.pack(">I", len(body)) + body)
            await writer.drain()
    except (asyncio.IncompleteReadError, ConnectionResetError):
        pass
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionResetError, BrokenPipeError):
            pass


async def _handle_ws(engine: SessionEngine, connection):
    async for message in connection:
        try:
            request = json.loads(message)
        except json.JSONDecodeError as exc:
            response = {"ok": False, "error": {"type": "BadMessage", "message": str(exc)}}
        else:
            response = engine.handle_request(request)
        await connection.send(json.dumps(response))


async def serve(engine: SessionEngine, host="127.0.0.1", tcp_port=8970, ws_port=8971,
                ready=None):
    """Run both transports until cancelled.

    ready, when given, is an asyncio.Event set once both listeners are
    bound (the tests use it to avoid polling).
    """
    import websockets.asyncio.server as ws_server

    tcp = await asyncio.start_server(
        lambda r, w: _handle_tcp(engine, r, w), host, tcp_port
    )
    async with tcp, ws_server.serve(
        lambda c: _handle_ws(engine, c), host, ws_port
    ):
        if ready is not None:
            ready.set()
        await asyncio.Event().wait()


def serve_forever(checkpoint, host="127.0.0.1", tcp_port=8970, ws_port=8971,
                  styles_dir=None):
    engine = SessionEngine(checkpoint, styles_dir)
    print(f"serving {checkpoint} on tcp://{host}:{tcp_port} and ws://{host}:{ws_port}", flush=True)
    try:
        asyncio.run(serve(engine, host, tcp_port, ws_port))
    except KeyboardInterrupt:
        pass


class TcpClient:
    """Minimal blocking client for the TCP transport; used by tests and
    scripts that drive a service session without an event loop."""

    def __init__(self, host="127.0.0.1", port=8970, timeout=30.0):
        import socket

        self.sock = socket.create_connection((host, port), timeout=timeout)

    def request(self, payload: dict) -> dict:
        body = json.dumps(payload).encode("utf-8")
        self.sock.sendall(struct.pack(">I", len(body)) + body)
        header = self._recv_exact(4)
        (length,) = struct.unpack(">I", header)
        return json.loads(self._recv_exact(length).decode("utf-8"))

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            chunk = self.sock.recv(n)
            if not chunk:
                raise ConnectionError("service closed the connection")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
