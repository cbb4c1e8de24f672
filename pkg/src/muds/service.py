"""Session service: exposes demonstration capture, training, correction
rounds, field rasters and persistence over a JSON message protocol.

Message schema (all values JSON; positions in meters, angles in radians,
times in seconds):

  request:  {"id": int, "type": str, ...}           client -> server
  response: {"id": int, "ok": true, ...}            server -> client
            {"id": int, "ok": false, "error": str, "field": str?}
  push:     {"event": str, "session": str, ...}     server -> client

Request types
  create_session   {mode: "teach"|"rollout"|"experiment"}  -> {session, state}
  list_sessions    {}                                      -> {sessions: [...]}
  delete_session   {session}
  begin_demo       {session}                        Idle -> Demonstrating
  demo_sample      {session, t, position[3], angles[3], width}
  end_demo         {session, record_rate?}          -> {samples, duration}
  train            {session, two_frame?, config?}   Demonstrating/Idle -> Correcting
  start_round      {session, seed?, realtime?, start_index?, autonomous?}
                                                    Correcting -> RollingOut
  correction       {session, kind, value[], key}    queued into the live round
  stop_round       {session}                        emits a stop correction
  field_raster     {session, plane: "xy"|"xz", mins[2], maxs[2], fixed,
                    resolution, phase?}             -> {vectors, magnitudes,
                                                        sigmas, confident}
  export_archive   {session, path}
  import_archive   {path}                           -> {session}
  finish_session   {session}                        -> Done

Push events
  state      {state}                 on every transition
  telemetry  {t, x, v, theta, w, held, confidence_ok}   decimated
  sim        {record}                every plant/teaching event, never dropped
  round_done {outcome, execution_time, aspect_seconds, ade?, round_index}
"""

from __future__ import annotations

import asyncio
import itertools
import json
import os
from pathlib import Path

import numpy as np

from .persistence import load_artifact, save_artifact
from .policy import MudsPolicy, PolicyConfig
from .scenarios import TF_GOAL, TF_OBJECT, bench_delta_bounds, curved_scenario, two_frame_scenario
from .simulator import Scenario, compute_ade
from .teaching import (
    CorrectionEvent,
    RoundLoop,
    SessionArchive,
    build_archive,
    record_demo,
    train_policy,
)

STATES = ("Idle", "Demonstrating", "Training", "Correcting", "RollingOut", "Done")

TRANSITIONS = {
    "Idle": {"Demonstrating", "Done"},
    "Demonstrating": {"Training"},
    "Training": {"Correcting"},
    "Correcting": {"RollingOut", "Done"},
    "RollingOut": {"Correcting"},
    "Done": set(),
}

TELEMETRY_DECIMATION = 5  # 100 Hz loop -> 20 Hz telemetry frames


class ProtocolError(Exception):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class Session:
    _ids = itertools.count(1)

    def __init__(self, mode="teach"):
        self.id = f"s{next(Session._ids)}"
        self.mode = mode
        self.state = "Idle"
        self.demos = []
        self.demo_buffer = []
        self.policy: MudsPolicy | None = None
        self.initial_policy_payload = None
        self.scenario: Scenario = curved_scenario()
        self.two_frame = False
        self.rounds = []
        self.loop: RoundLoop | None = None
        self.loop_task = None
        self.autonomous_round = False
        self.seen_keys = set()
        self.subscribers = set()
        self.round_seeds = []

    def transition(self, new_state):
        if new_state not in TRANSITIONS[self.state]:
            raise ProtocolError(
                f"cannot go from {self.state} to {new_state}", field="session")
        self.state = new_state

    def descriptor(self):
        return {"session": self.id, "mode": self.mode, "state": self.state,
                "demos": len(self.demos), "rounds": len(self.rounds)}


class SessionService:
    """Transport-independent request handler; one instance per server."""

    def __init__(self, data_dir=None):
        self.data_dir = Path(data_dir or os.environ.get("TEACH_DATA_DIR", "./teach-data"))
        self.sessions: dict[str, Session] = {}
        self._emit_hooks = []

    # -- eventing ----------------------------------------------------------

    def on_event(self, callback):
        self._emit_hooks.append(callback)

    def emit(self, session: Session, event: str, **data):
        message = {"event": event, "session": session.id, **data}
        for hook in self._emit_hooks:
            hook(message)

    def _set_state(self, session, state):
        session.transition(state)
        self.emit(session, "state", state=state)

    # -- request dispatch ----------------------------------------------------

    def handle(self, request: dict) -> dict:
        if not isinstance(request, dict) or "type" not in request:
            raise ProtocolError("request must be an object with a 'type'", field="type")
        handler = getattr(self, f"_op_{request['type']}", None)
        if handler is None:
            raise ProtocolError(f"unknown request type {request['type']!r}", field="type")
        return handler(request)

    def handle_json(self, raw: str) -> str:
        try:
            request = json.loads(raw)
        except json.JSONDecodeError as err:
            return json.dumps({"id": None, "ok": False, "error": f"bad json: {err}"})
        rid = request.get("id") if isinstance(request, dict) else None
        try:
            result = self.handle(request)
            return json.dumps({"id": rid, "ok": True, **result})
        except ProtocolError as err:
            return json.dumps({"id": rid, "ok": False, "error": str(err),
                               "field": err.field})
        except Exception as err:
            return json.dumps({"id": rid, "ok": False, "error": str(err)})

    def _session(self, request) -> Session:
        sid = request.get("session")
        if sid not in self.sessions:
            raise ProtocolError(f"unknown session {sid!r}", field="session")
        return self.sessions[sid]

    @staticmethod
    def _need(request, field, kind=None):
        if field not in request:
            raise ProtocolError(f"missing field {field!r}", field=field)
        value = request[field]
        if kind is not None and not isinstance(value, kind):
            raise ProtocolError(f"field {field!r} has the wrong type", field=field)
        return value

    # -- session lifecycle -----------------------------------------------------

    def _op_create_session(self, request):
        mode = request.get("mode", "teach")
        if mode not in ("teach", "rollout", "experiment"):
            raise ProtocolError(f"unknown mode {mode!r}", field="mode")
        session = Session(mode=mode)
        self.sessions[session.id] = session
        return session.descriptor()

    def _op_list_sessions(self, request):
        return {"sessions": [s.descriptor() for s in self.sessions.values()]}

    def _op_delete_session(self, request):
        session = self._session(request)
        if session.loop_task is not None:
            session.loop_task.cancel()
        del self.sessions[session.id]
        return {}

    def _op_finish_session(self, request):
        session = self._session(request)
        self._set_state(session, "Done")
        return session.descriptor()

    # -- demonstration ------------------------------------------------------------

    def _op_begin_demo(self, request):
        session = self._session(request)
        if session.state != "Demonstrating":
            self._set_state(session, "Demonstrating")
        session.demo_buffer = []
        return {}

    def _op_demo_sample(self, request):
        session = self._session(request)
        if session.state != "Demonstrating":
            raise ProtocolError(f"not demonstrating (state {session.state})",
                                field="session")
        t = self._need(request, "t", (int, float))
        position = self._need(request, "position", list)
        angles = self._need(request, "angles", list)
        width = self._need(request, "width", (int, float))
        if len(position) != 3 or len(angles) != 3:
            raise ProtocolError("position and angles must be 3-vectors",
                                field="position")
        session.demo_buffer.append((float(t), [float(v) for v in position],
                                    [float(v) for v in angles], float(width)))
        return {}

    def _op_end_demo(self, request):
        session = self._session(request)
        if session.state != "Demonstrating":
            raise ProtocolError(f"not demonstrating (state {session.state})",
                                field="session")
        buffer = sorted(session.demo_buffer)
        if len(buffer) < 2:
            raise ProtocolError("demonstration too short", field="samples")
        times = np.array([b[0] for b in buffer])
        positions = np.array([b[1] for b in buffer])
        angles = np.array([b[2] for b in buffer])
        widths = np.array([b[3] for b in buffer])
        demo = record_demo(times, positions, angles, widths,
                           record_rate=float(request.get("record_rate", 10.0)))
        session.demos.append(demo)
        session.demo_buffer = []
        return {"samples": demo.n, "duration": demo.duration}

    # -- training -------------------------------------------------------------------

    def _op_train(self, request):
        session = self._session(request)
        if not session.demos:
            raise ProtocolError("no demonstrations recorded", field="session")
        if session.demo_buffer:
            raise ProtocolError("end the demonstration first", field="session")
        self._set_state(session, "Training")
        config = PolicyConfig(**request.get("config", {}))
        two_frame = bool(request.get("two_frame", False))
        session.two_frame = two_frame
        if two_frame:
            session.scenario = two_frame_scenario()
            frames = (TF_OBJECT, TF_GOAL)
        else:
            session.scenario = curved_scenario()
            frames = None
        session.policy = train_policy(session.demos, config=config, frames=frames,
                                      bounds=bench_delta_bounds(),
                                      seed=int(request.get("seed", 0)))
        session.initial_policy_payload = session.policy.to_payload()
        self._set_state(session, "Correcting")
        return {"trained": True, "phases": len(session.policy.phases)}

    # -- rounds -------------------------------------------------------------------

    def _op_start_round(self, request):
        session = self._session(request)
        if session.policy is None:
            raise ProtocolError("train a policy first", field="session")
        if session.state != "Correcting":
            raise ProtocolError(
                f"cannot start a round in state {session.state} (need Correcting)",
                field="session")
        seed = int(request.get("seed", len(session.rounds)))
        start_index = request.get("start_index")
        world = session.scenario.make_world(seed=seed)
        demo = session.demos[0] if session.demos else None
        session.loop = RoundLoop(session.policy, world, dt=session.scenario.dt,
                                 timeout=session.scenario.timeout, demo=demo,
                                 start_index=start_index)
        session.autonomous_round = bool(request.get("autonomous", False))
        session.round_seeds.append(seed)
        self._set_state(session, "RollingOut")
        return {"seed": seed, "round_index": len(session.rounds)}

    def _op_correction(self, request):
        session = self._session(request)
        if session.state != "RollingOut" or session.loop is None:
            self.emit(session, "sim", record={"kind": "correction_discarded",
                                              "reason": "no active round"})
            return {"accepted": False}
        key = request.get("key")
        if key is not None:
            if key in session.seen_keys:
                return {"accepted": True, "duplicate": True}
            session.seen_keys.add(key)
        kind = self._need(request, "kind", str)
        value = tuple(request.get("value", ()))
        if session.autonomous_round and kind != "stop":
            return {"accepted": False}
        try:
            event = CorrectionEvent(t=session.loop.world.t, kind=kind, value=value,
                                    position=session.loop.world.robot.position.copy(),
                                    frame_index=session.policy.active_index)
        except ValueError as err:
            raise ProtocolError(str(err), field="value") from err
        session.loop.push(event)
        return {"accepted": True}

    def _op_stop_round(self, request):
        session = self._session(request)
        if session.state != "RollingOut" or session.loop is None:
            raise ProtocolError("no active round", field="session")
        session.loop.push(CorrectionEvent(t=session.loop.world.t, kind="stop",
                                          value=(), position=np.zeros(3)))
        return {}

    def advance_round(self, session: Session, ticks: int = 1,
                      decimation: int = TELEMETRY_DECIMATION) -> bool:
        """Step the live round; returns True while it is still running.

        Telemetry frames are decimated; plant/teaching events are always
        delivered.
        """
        if session.loop is None:
            return False
        loop = session.loop
        for _ in range(ticks):
            state = loop.tick()
            for event in loop.new_events():
                self.emit(session, "sim", record=event)
            if state is not None and (len(loop.states) - 1) % decimation == 0:
                self.emit(session, "telemetry", **state)
            if loop.done:
                self._finish_round(session)
                return False
        return True

    def _finish_round(self, session: Session):
        record = session.loop.finish()
        for event in session.loop.new_events():
            self.emit(session, "sim", record=event)
        session.rounds.append(record)
        session.loop = None
        ade = None
        if session.demos and record.states:
            ade = round(compute_ade(record.positions(), session.demos[0].positions), 6)
        self._set_state(session, "Correcting")
        self.emit(session, "round_done", outcome=record.outcome,
                  execution_time=record.execution_time,
                  aspect_seconds=record.aspect_seconds,
                  corrections=len(record.corrections),
                  ade=ade, round_index=len(session.rounds) - 1,
                  timers=self._timers(session))

    def _timers(self, session):
        demo_s = sum(d.duration for d in session.demos)
        feedback_s = sum(sum(r.aspect_seconds.values()) for r in session.rounds)
        total_s = demo_s + sum(r.execution_time for r in session.rounds)
        successes = 0
        for record in reversed(session.rounds):
            if record.outcome != "Success":
                break
            successes += 1
        return {"demo_s": round(demo_s, 9), "feedback_s": round(feedback_s, 9),
                "total_s": round(total_s, 9), "rounds": len(session.rounds),
                "success_streak": successes}

    # -- field rasters -----------------------------------------------------------

    def _op_field_raster(self, request):
        session = self._session(request)
        if session.policy is None:
            raise ProtocolError("train a policy first", field="session")
        plane = request.get("plane", "xy")
        if plane not in ("xy", "xz"):
            raise ProtocolError("plane must be 'xy' or 'xz'", field="plane")
        mins = self._need(request, "mins", list)
        maxs = self._need(request, "maxs", list)
        fixed = float(self._need(request, "fixed", (int, float)))
        resolution = int(self._need(request, "resolution", int))
        if resolution < 2 or resolution > 200:
            raise ProtocolError("resolution must be in [2, 200]", field="resolution")
        axes = (0, 1) if plane == "xy" else (0, 2)
        other = 2 if plane == "xy" else 1
        us = np.linspace(mins[0], maxs[0], resolution)
        vs = np.linspace(mins[1], maxs[1], resolution)
        stiffness = session.scenario.stiffness
        latched = session.policy.goal_latched
        session.policy.goal_latched = bool(request.get("goal_phase", latched))
        vectors, magnitudes, sigmas, confident = [], [], [], []
        try:
            for v in vs:
                for u in us:
                    x = np.zeros(3)
                    x[axes[0]], x[axes[1]], x[other] = u, v, fixed
                    cmd = session.policy.compute_attractor(x, stiffness)
                    step = cmd.x_des - x
                    vectors.append([round(c, 9) for c in step.tolist()])
                    magnitudes.append(round(float(np.linalg.norm(step)), 9))
                    sigmas.append(round(cmd.diagnostics.sigma, 12))
                    confident.append(bool(cmd.confidence_ok))
        finally:
            session.policy.goal_latched = latched
        return {"plane": plane, "us": us.tolist(), "vs": vs.tolist(),
                "vectors": vectors, "magnitudes": magnitudes, "sigmas": sigmas,
                "confident": confident,
                "prior_variance": session.policy.active_phase.gp_delta.prior_variance}

    # -- persistence ---------------------------------------------------------------

    def _op_export_archive(self, request):
        session = self._session(request)
        if session.policy is None:
            raise ProtocolError("nothing to export", field="session")
        path = self.data_dir / self._need(request, "path", str)
        archive = build_archive(session.demos, session.scenario,
                                session.initial_policy_payload, session.policy,
                                session.rounds,
                                seeds={"rounds": session.round_seeds})
        save_artifact(path, "session_archive", archive.to_payload())
        return {"path": str(path), "timers": self._timers(session)}

    def _op_import_archive(self, request):
        path = Path(self._need(request, "path", str))
        if not path.is_absolute():
            path = self.data_dir / path
        payload = load_artifact(path, kind="session_archive")
        archive = SessionArchive.from_payload(payload)
        session = Session(mode="teach")
        session.demos = archive.demos
        session.scenario = Scenario.from_payload(archive.scenario_payload)
        session.policy = MudsPolicy.from_payload(archive.final_policy_payload)
        session.initial_policy_payload = archive.initial_policy_payload
        session.rounds = archive.rounds
        session.state = "Correcting"
        self.sessions[session.id] = session
        return {"session": session.id, "timers": self._timers(session)}


# -- websocket transport -------------------------------------------------------


async def serve(host="127.0.0.1", port=8765, data_dir=None, realtime=True,
                ticks_per_slot=50):
    """Run the service over websockets until cancelled.

    Realtime mode paces control loops at the plant rate; otherwise they run
    ``ticks_per_slot`` ticks per scheduler slot, as fast as possible.
    """
    import websockets

    service = SessionService(data_dir=data_dir)
    clients = set()
    watchers: dict[str, set] = {}

    def broadcast(message):
        sid = message.get("session")
        raw = json.dumps(message)
        for ws in list(watchers.get(sid, ())):
            try:
                asyncio.ensure_future(ws.send(raw))
            except Exception:
                watchers.get(sid, set()).discard(ws)

    service.on_event(broadcast)

    async def round_driver():
        # steps every live round; paced to the control rate in realtime mode
        while True:
            busy = False
            for session in list(service.sessions.values()):
                if session.state == "RollingOut" and session.loop is not None:
                    ticks = 1 if realtime else ticks_per_slot
                    service.advance_round(session, ticks=ticks)
                    busy = True
            if realtime:
                await asyncio.sleep(0.01)
            else:
                await asyncio.sleep(0 if busy else 0.01)

    async def handler(ws):
        clients.add(ws)
        try:
            async for raw in ws:
                try:
                    request = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send(json.dumps({"id": None, "ok": False,
                                              "error": "bad json"}))
                    continue
                if isinstance(request, dict) and request.get("type") == "subscribe":
                    sid = request.get("session")
                    watchers.setdefault(sid, set()).add(ws)
                    await ws.send(json.dumps({"id": request.get("id"), "ok": True}))
                    continue
                response = service.handle_json(raw)
                await ws.send(response)
                parsed = json.loads(response)
                if parsed.get("ok") and isinstance(request, dict) \
                        and request.get("type") == "create_session":
                    watchers.setdefault(parsed["session"], set()).add(ws)
        finally:
            clients.discard(ws)
            for group in watchers.values():
                group.discard(ws)

    driver = asyncio.ensure_future(round_driver())
    try:
        async with websockets.serve(handler, host, port):
            await asyncio.Future()
    finally:
        driver.cancel()
