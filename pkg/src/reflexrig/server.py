"""Live-steered sessions over a WebSocket.

One simulation task owns the engine and advances it on a fixed-timestep
wall-clock accumulator; client I/O never touches engine state directly.
Steering and override messages land in latest-wins slots that the next frame
boundary consumes, and every connected client gets state frames through a
one-deep queue, so a slow or absent client never blocks stepping.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import time

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import sim, telemetry

FRAME_DIV = 4  # 120 Hz simulation -> 30 Hz published state
MAX_BACKLOG = 0.25  # s of sim time the accumulator may owe after a stall
STATE_KEYS = (
    "i", "t", "input", "kin", "resp", "joints", "gesture",
    "anchors", "temp_anchors", "contacts", "obstacles", "steer", "override",
)


def state_message(record: dict) -> dict:
    msg = {"type": "state"}
    for key in STATE_KEYS:
        if key in record:
            msg[key] = record[key]
    return msg


def _error(message: str) -> dict:
    return {"type": "error", "message": message}


class Session:
    """Engine owner plus the message plumbing around it."""

    def __init__(
        self,
        scenario: sim.Scenario,
        pace: float = 1.0,
        record_path: str | None = None,
    ):
        if scenario.locomotion_mode != "external":
            raise sim.ScenarioError(
                "live sessions need locomotion mode 'external'"
            )
        if pace < 0.0:
            raise ValueError("pace must be >= 0")
        self.engine = sim.Engine(scenario)
        self.pace = pace
        self.record_path = record_path
        self.frames_total = max(1, round(scenario.duration / scenario.dt))
        self.clients: set[asyncio.Queue[str]] = set()
        self.pending_steer: tuple[tuple[float, float, float], float] | None = None
        self.pending_override: dict | None = None
        self.summary: dict | None = None
        self.done = asyncio.Event()

    # -- client messages ------------------------------------------------------

    def handle_text(self, text: str) -> dict | None:
        """Apply one client message; returns an error frame or None."""
        try:
            msg = json.loads(text)
        except json.JSONDecodeError as e:
            return _error(f"not JSON: {e.msg}")
        if not isinstance(msg, dict):
            return _error("message must be a JSON object")
        kind = msg.get("type")
        if kind == "steer":
            direction = msg.get("direction")
            speed = msg.get("speed")
            if (
                not isinstance(direction, list) or len(direction) != 3
                or not all(isinstance(c, (int, float)) for c in direction)
                or not isinstance(speed, (int, float))
            ):
                return _error("steer needs direction [x,y,z] and numeric speed")
            speed = min(max(float(speed), 0.0), sim.STEER_SPEED_MAX)
            self.pending_steer = (tuple(float(c) for c in direction), speed)
            return None
        if kind == "override":
            try:
                fields = sim.validate_override(
                    {k: v for k, v in msg.items() if k != "type"}
                )
            except sim.ScenarioError as e:
                return _error(str(e))
            self.pending_override = {k: list(v) for k, v in fields.items()}
            return None
        return _error(f"unknown message type {kind!r}")

    # -- fan-out ---------------------------------------------------------------

    def _publish(self, data: str) -> None:
        for q in self.clients:
            if q.full():
                with contextlib.suppress(asyncio.QueueEmpty):
                    q.get_nowait()
            with contextlib.suppress(asyncio.QueueFull):
                q.put_nowait(data)

    def hello(self) -> dict:
        header = self.engine.header()
        return {
            "type": "hello",
            "schema": telemetry.SCHEMA_VERSION,
            "dt": self.engine.dt,
            "frame_div": FRAME_DIV,
            "speed_max": sim.STEER_SPEED_MAX,
            "scenario": header["scenario"]["name"],
            "rig": header["rig"],
            "geometry": header["geometry"],
        }

    # -- the simulation task -----------------------------------------------------

    async def pump(self) -> None:
        eng = self.engine
        writer = None
        wall: list[int] = []
        try:
            if self.record_path is not None:
                writer = telemetry.TelemetryWriter(self.record_path)
                writer.write_header(eng.header())
            acc = 0.0
            last = time.perf_counter()
            while eng.frame < self.frames_total:
                if self.pace > 0.0:
                    now = time.perf_counter()
                    acc = min(acc + (now - last) * self.pace, MAX_BACKLOG)
                    last = now
                    if acc < eng.dt:
                        await asyncio.sleep((eng.dt - acc) / self.pace)
                        continue
                    acc -= eng.dt
                else:
                    # unpaced: still yield so client I/O stays live
                    await asyncio.sleep(0)
                tick_input = sim.TickInput(
                    steer=self.pending_steer, override=self.pending_override
                )
                self.pending_steer = None
                self.pending_override = None
                rec = eng.tick(tick_input)
                wall.append(rec["wall_ns"])
                if writer is not None:
                    writer.write_frame(rec)
                if rec["i"] % FRAME_DIV == 0:
                    self._publish(json.dumps(state_message(rec)))
            if writer is not None:
                stats = {
                    "frames": eng.frame,
                    "sim_seconds": eng.frame * eng.dt,
                    "mean_step_ms": (sum(wall) / len(wall)) / 1e6 if wall else 0.0,
                    "max_step_ms": max(wall) / 1e6 if wall else 0.0,
                }
                stats["hash"] = writer.write_summary(stats)
                self.summary = stats
        finally:
            if writer is not None:
                writer.close()
            self.done.set()


def create_app(
    scenario: sim.Scenario,
    pace: float = 1.0,
    record_path: str | None = None,
) -> FastAPI:
    session = Session(scenario, pace=pace, record_path=record_path)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        task = asyncio.create_task(session.pump())
        yield
        task.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await task

    app = FastAPI(lifespan=lifespan)
    app.state.session = session

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket) -> None:
        await websocket.accept()
        q: asyncio.Queue[str] = asyncio.Queue(maxsize=1)
        session.clients.add(q)

        async def send_loop() -> None:
            while True:
                await websocket.send_text(await q.get())

        sender = asyncio.create_task(send_loop())
        try:
            await websocket.send_text(json.dumps(session.hello()))
            while True:
                reply = session.handle_text(await websocket.receive_text())
                if reply is not None:
                    await websocket.send_text(json.dumps(reply))
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await sender
            session.clients.discard(q)

    return app


def serve(
    scenario: sim.Scenario,
    host: str = "127.0.0.1",
    port: int = 8765,
    pace: float = 1.0,
    record_path: str | None = None,
) -> None:
    """Run a blocking live session until the scenario ends or interrupt."""
    import uvicorn

    app = create_app(scenario, pace=pace, record_path=record_path)
    uvicorn.run(app, host=host, port=port, log_level="warning")
