"""Teleoperation service: WebSocket endpoint + static file host.

Two layers. SimService is the synchronous session core — hello/input
frames in, state frames out, with message-clocked sim pacing: sim time
follows the clock owner's input timestamps, so a replayed message log
reproduces an episode exactly, independent of wall clock. The asyncio
layer beneath speaks plain RFC 6455 over StreamReader/StreamWriter (no
external websocket dependency) and serves the browser client's files.
"""
from __future__ import annotations

import asyncio
import base64
import hashlib
from collections import defaultdict
from pathlib import Path

from .config import WorkbenchConfig
from .controller import ControllerTarget, set_stiffness_mode
from .episodes import EpisodeWriter
from .geometry import Pose
from .rendering import default_cameras, render_all
from .runtime import RuntimeSession
from .tasks import TASK_MODE_PAIRS, check_success, reset
from .teleop import TeleopSession, haptic_intensity
from .wire import (WireError, error_message, parse_message,
                   state_message)

STATE_RATE = 30.0           # Hz, server -> client stream
MAX_CLOCK_JUMP = 0.25       # s of sim advanced per input frame, at most
MAX_FRAME_BYTES = 1 << 20

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class SimService:
    """One simulated workcell shared by up to one client per arm.

    All protocol behavior lives here, synchronously: connect/disconnect,
    per-frame handling, the 20 Hz recorder, and the 30 Hz state stream.
    handle() returns outbound frames keyed by arm so the transport layer
    only moves bytes.
    """

    def __init__(self, cfg: WorkbenchConfig | None = None,
                 task: str = "wiping", seed: int = 0, out_dir=None,
                 record_images: bool = False):
        self.cfg = cfg or WorkbenchConfig()
        self.task = task
        self.world = reset(task, seed, self.cfg)
        self.session = RuntimeSession(self.world, self.cfg)
        self.out_dir = Path(out_dir) if out_dir else None
        self.teleops: dict[str, TeleopSession] = {}
        self.owner: str | None = None       # whose timestamps drive the sim
        # each client declares time on its own epoch; anchor them to sim
        # time independently so staleness and pacing are epoch-free
        self._anchor_ms: dict[str, float] = {}
        self._next_state_t = None
        self._last_device: dict[str, Pose] = {}
        self.writer: EpisodeWriter | None = None
        self._next_record_t = None
        self._episode_index = 0
        self.episodes: list[Path] = []
        self._cameras = (default_cameras(self.world) if record_images
                         else [])
        # every arm carries a hold-pose target from the start, so recorded
        # rows are complete even when only one arm has a client
        self.targets = {
            arm_id: ControllerTarget(self.world.ee_pose(arm_id),
                                     set_stiffness_mode("mid"),
                                     gripper=arm.gripper)
            for arm_id, arm in self.world.arms.items()
        }

    # -- connection lifecycle -------------------------------------------

    def connect(self, arm_id: str) -> list[str]:
        """Register a client; returns its first frames (one state snapshot,
        so the UI can render before any input is sent)."""
        if arm_id not in self.world.arms:
            raise WireError("bad_arm", f"no arm {arm_id!r} in task "
                            f"{self.task!r}; have {list(self.world.arms)}")
        if arm_id in self.teleops:
            raise WireError("arm_taken",
                            f"arm {arm_id!r} already has a client")
        self.teleops[arm_id] = TeleopSession(
            arm_id, TASK_MODE_PAIRS[self.task][arm_id],
            cfg=self.cfg.teleop)
        if self.owner is None:
            self.owner = arm_id
            self._next_state_t = self.world.time + 1.0 / STATE_RATE
        return [self._state_frame(arm_id)]

    def disconnect(self, arm_id: str) -> None:
        """Targets are latest-wins, so the arm simply holds its last pose;
        a live recording is finalized as aborted (safety contract)."""
        self.teleops.pop(arm_id, None)
        self._last_device.pop(arm_id, None)
        self._anchor_ms.pop(arm_id, None)
        if self.writer is not None:
            self._finalize(aborted=True)
        if arm_id == self.owner:
            self.owner = next(iter(self.teleops), None)

    # -- frame handling ---------------------------------------------------

    def handle(self, arm_id: str, msg: dict) -> dict[str, list[str]]:
        """One validated client frame in; outbound frames per arm out."""
        out: dict[str, list[str]] = defaultdict(list)
        tele = self.teleops[arm_id]
        mtype = msg["type"]
        if mtype == "hello":
            raise WireError("bad_state", "already said hello")
        if mtype == "input":
            was_engaged = tele.clutch_engaged
            device = Pose(msg["pos"], msg["quat"])
            if arm_id not in self._anchor_ms:
                self._anchor_ms[arm_id] = (msg["t_ms"]
                                           - self.world.time * 1000.0)
            now_ms = self._anchor_ms[arm_id] + self.world.time * 1000.0
            target = tele.handle_input(msg, self.world.ee_pose(arm_id),
                                       now_ms=now_ms)
            self._last_device[arm_id] = device
            if tele.clutch_engaged and target is not None:
                self._emit_target(arm_id, tele, target)
            if tele.clutch_engaged and not was_engaged:
                self._ensure_recording()
            if arm_id == self.owner:
                self._advance(msg["t_ms"], out)
        elif mtype == "clutch":
            device = self._last_device.get(arm_id)
            if device is not None:          # no pose reference yet: no-op
                engaged = tele.toggle_clutch(device,
                                             self.world.ee_pose(arm_id))
                if engaged:
                    self._ensure_recording()
        elif mtype == "mode_toggle":
            tele.toggle_stiffness()
            if tele.last_target is not None:
                self._emit_target(arm_id, tele, tele.last_target)
        else:
            raise WireError("bad_direction",
                            f"clients do not send {mtype!r} frames")
        return out

    def _emit_target(self, arm_id, tele, pose: Pose) -> None:
        target = ControllerTarget(pose, set_stiffness_mode(tele.mode),
                                  gripper=tele.gripper)
        self.targets[arm_id] = target
        self.session.set_target(arm_id, target)

    def _advance(self, t_ms: float, out) -> None:
        """Run physics up to the owner's timestamp, firing record rows and
        state frames as their boundaries pass. Jumps are capped, and time
        never runs backwards."""
        anchor = self._anchor_ms[self.owner]
        target_s = min((t_ms - anchor) / 1000.0,
                       self.world.time + MAX_CLOCK_JUMP)
        while self.world.time < target_s - 1e-9:
            self.session.run_steps(1)
            now = self.world.time
            if (self.writer is not None
                    and now >= self._next_record_t - 1e-9):
                self._record_row()
                self._next_record_t += 1.0 / self.cfg.record.rate
            if now >= self._next_state_t - 1e-9:
                for a in self.teleops:
                    out[a].append(self._state_frame(a))
                self._next_state_t += 1.0 / STATE_RATE

    # -- recording --------------------------------------------------------

    def _ensure_recording(self) -> None:
        """First clutch engage starts the episode."""
        if self.writer is not None or self.out_dir is None:
            return
        path = self.out_dir / f"teleop_{self._episode_index:03d}.cpak"
        self.writer = EpisodeWriter(
            path, self.task, self.world.seed, list(self.world.arms),
            {a: arm.chain.n for a, arm in self.world.arms.items()},
            cameras=[c.name for c in self._cameras],
            record_rate=self.cfg.record.rate,
            mode_pairs=TASK_MODE_PAIRS[self.task])
        self._next_record_t = self.world.time + 1.0 / self.cfg.record.rate
        self._record_row()

    def _record_row(self) -> None:
        render_fn = ((lambda w: render_all(w, self._cameras))
                     if self._cameras else None)
        obs = self.session.observe(render_fn)
        self.writer.record_step(obs, self.targets, images=obs.images)

    def _finalize(self, aborted: bool) -> Path | None:
        if self.writer is None:
            return None
        ok, _ = check_success(self.world)
        path = self.writer.finalize(success=ok, aborted=aborted)
        self.episodes.append(path)
        self.writer = None
        self._next_record_t = None
        self._episode_index += 1
        return path

    def finish_episode(self) -> Path | None:
        """Finalize a live recording cleanly (server shutdown)."""
        return self._finalize(aborted=False)

    # -- state stream -------------------------------------------------------

    def _state_frame(self, arm_id: str) -> str:
        obs = self.session.observe()
        arm = obs.arms[arm_id]
        tele = self.teleops.get(arm_id)
        return state_message(
            t=obs.time, ee_pos=arm.ee_pose.position,
            ee_quat=arm.ee_pose.orientation,
            wrench=arm.wrench.as_array(), gripper=arm.gripper,
            mode=tele.mode if tele else "mid",
            haptic=haptic_intensity(arm.wrench),
            clutch=bool(tele.clutch_engaged) if tele else False)


# --- RFC 6455 framing ---------------------------------------------------------

def websocket_accept(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _encode_frame(payload: bytes, opcode: int) -> bytes:
    head = bytearray([0x80 | opcode])
    n = len(payload)
    if n < 126:
        head.append(n)
    elif n < (1 << 16):
        head.append(126)
        head += n.to_bytes(2, "big")
    else:
        head.append(127)
        head += n.to_bytes(8, "big")
    return bytes(head) + payload


async def _send_frame(writer, payload: bytes, opcode: int = 1) -> None:
    writer.write(_encode_frame(payload, opcode))
    await writer.drain()


async def send_text(writer, text: str) -> None:
    await _send_frame(writer, text.encode(), opcode=1)


async def _recv_frame(reader) -> tuple[bool, int, bytes]:
    b0, b1 = await reader.readexactly(2)
    fin, opcode = bool(b0 & 0x80), b0 & 0x0F
    masked, n = bool(b1 & 0x80), b1 & 0x7F
    if n == 126:
        n = int.from_bytes(await reader.readexactly(2), "big")
    elif n == 127:
        n = int.from_bytes(await reader.readexactly(8), "big")
    if n > MAX_FRAME_BYTES:
        raise WireError("bad_frame", f"frame of {n} bytes exceeds limit")
    if not masked:
        raise WireError("bad_frame", "client frames must be masked")
    mask = await reader.readexactly(4)
    data = bytearray(await reader.readexactly(n))
    for i in range(len(data)):
        data[i] ^= mask[i % 4]
    return fin, opcode, bytes(data)


async def recv_text(reader, writer) -> str | None:
    """Next complete text message; None once the peer closes. Handles
    ping/pong and fragmentation inline."""
    buf = b""
    in_message = False
    while True:
        fin, opcode, payload = await _recv_frame(reader)
        if opcode == 8:                      # close
            writer.write(_encode_frame(payload[:2], opcode=8))
            await writer.drain()
            return None
        if opcode == 9:                      # ping
            await _send_frame(writer, payload, opcode=10)
            continue
        if opcode == 10:                     # pong
            continue
        if opcode == 2:
            raise WireError("bad_frame", "binary frames unsupported")
        if opcode == 1:
            buf, in_message = payload, True
        elif opcode == 0:
            if not in_message:
                raise WireError("bad_frame", "continuation without start")
            buf += payload
        else:
            raise WireError("bad_frame", f"unknown opcode {opcode}")
        if fin and in_message:
            return buf.decode("utf-8", errors="replace")


async def _send_close(writer, code: int = 1000) -> None:
    try:
        writer.write(_encode_frame(code.to_bytes(2, "big"), opcode=8))
        await writer.drain()
    except (ConnectionError, RuntimeError):
        pass


# --- HTTP plumbing -------------------------------------------------------------

async def _read_request(reader) -> tuple[str, str, dict]:
    line = await reader.readline()
    parts = line.decode("latin-1").split()
    if len(parts) < 2:
        raise ConnectionError("malformed request line")
    method, path = parts[0], parts[1]
    headers = {}
    while True:
        raw = await reader.readline()
        if raw in (b"\r\n", b"\n", b""):
            break
        if b":" in raw:
            key, value = raw.decode("latin-1").split(":", 1)
            headers[key.strip().lower()] = value.strip()
    return method, path, headers


def _http_response(status: str, body: bytes, content_type: str) -> bytes:
    return (f"HTTP/1.1 {status}\r\n"
            f"Content-Type: {content_type}\r\n"
            f"Content-Length: {len(body)}\r\n"
            f"Connection: close\r\n\r\n").encode() + body


def _serve_static(path: str, root: Path | None) -> bytes:
    if root is None:
        return _http_response("404 Not Found",
                              b"no frontend directory configured",
                              "text/plain; charset=utf-8")
    name = path.split("?", 1)[0]
    if name.endswith("/"):
        name += "index.html"
    target = (root / name.lstrip("/")).resolve()
    if not str(target).startswith(str(root.resolve())) \
            or not target.is_file():
        return _http_response("404 Not Found", b"not found",
                              "text/plain; charset=utf-8")
    ctype = _CONTENT_TYPES.get(target.suffix,
                               "application/octet-stream")
    return _http_response("200 OK", target.read_bytes(), ctype)


# --- connection handling ---------------------------------------------------------

class TeleopServer:
    """Binds a SimService to TCP: WebSocket upgrade on any path with the
    upgrade headers (the client uses /ws), static files otherwise."""

    def __init__(self, service: SimService, frontend: Path | None = None):
        self.service = service
        self.frontend = Path(frontend) if frontend else None
        self.clients: dict[str, asyncio.StreamWriter] = {}
        self._server: asyncio.AbstractServer | None = None

    async def start(self, host: str = "127.0.0.1", port: int = 0):
        self._server = await asyncio.start_server(self._on_connection,
                                                  host, port)
        return self._server

    @property
    def address(self) -> tuple[str, int]:
        sock = self._server.sockets[0]
        return sock.getsockname()[:2]

    async def close(self):
        for w in list(self.clients.values()):
            w.close()
        self._server.close()
        await self._server.wait_closed()

    async def _on_connection(self, reader, writer):
        try:
            method, path, headers = await _read_request(reader)
        except (ConnectionError, asyncio.IncompleteReadError):
            writer.close()
            return
        if headers.get("upgrade", "").lower() != "websocket":
            writer.write(_serve_static(path, self.frontend))
            await writer.drain()
            writer.close()
            return

        key = headers.get("sec-websocket-key", "")
        writer.write(
            ("HTTP/1.1 101 Switching Protocols\r\n"
             "Upgrade: websocket\r\n"
             "Connection: Upgrade\r\n"
             f"Sec-WebSocket-Accept: {websocket_accept(key)}\r\n"
             "\r\n").encode())
        await writer.drain()
        await self._ws_session(reader, writer)

    async def _ws_session(self, reader, writer):
        arm_id = None
        try:
            text = await recv_text(reader, writer)
            if text is None:
                return
            msg = parse_message(text)
            if msg["type"] != "hello":
                raise WireError("bad_state", "first frame must be hello")
            arm_id = msg["arm"]
            for frame in self.service.connect(arm_id):
                await send_text(writer, frame)
            self.clients[arm_id] = writer
            while True:
                text = await recv_text(reader, writer)
                if text is None:
                    return
                out = self.service.handle(arm_id, parse_message(text))
                await self._fan_out(out)
        except WireError as err:
            await self._best_effort_error(writer, err)
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            if arm_id is not None and arm_id in self.clients:
                del self.clients[arm_id]
                self.service.disconnect(arm_id)
            await _send_close(writer)
            writer.close()

    async def _fan_out(self, out: dict[str, list[str]]) -> None:
        for arm_id, frames in out.items():
            peer = self.clients.get(arm_id)
            if peer is None:
                continue
            try:
                for frame in frames:
                    await send_text(peer, frame)
            except (ConnectionError, RuntimeError):
                pass                        # reaped by its own handler

    async def _best_effort_error(self, writer, err: WireError) -> None:
        try:
            await send_text(writer, error_message(err.code, str(err)))
        except (ConnectionError, RuntimeError):
            pass


def serve(host: str = "127.0.0.1", port: int = 8765,
          cfg: WorkbenchConfig | None = None, task: str = "wiping",
          seed: int = 0, out_dir=None, frontend=None,
          record_images: bool = False) -> None:
    """Blocking entry point used by the CLI."""
    service = SimService(cfg=cfg, task=task, seed=seed, out_dir=out_dir,
                         record_images=record_images)
    server = TeleopServer(service, frontend=frontend)

    async def main():
        await server.start(host, port)
        bound = server.address
        print(f"teleop service on ws://{bound[0]}:{bound[1]}/ws "
              f"(task {task!r}, seed {seed})", flush=True)
        if frontend:
            print(f"frontend at http://{bound[0]}:{bound[1]}/", flush=True)
        await asyncio.Event().wait()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    finally:
        path = service.finish_episode()
        if path is not None:
            print(f"finalized open episode: {path}", flush=True)
