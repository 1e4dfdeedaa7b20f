"""Real-time teleoperation backend.

Each session owns one simulated plant ticked at a fixed rate. Per tick:
streamed spatial-velocity commands are scaled for staleness, resolved to a
joint velocity by the QP, integrated into the desired joint state, pushed
through the streaming inverse-dynamics filter, and the compensated (or
baseline) command law drives the plant. Telemetry is emitted every tick.

With compensation active the plant tracks the desired stream delayed by the
filter's lookahead (T/2 - 1 samples); the telemetry reports the effective
(delayed) reference so the error numbers compare like with like.

Message ingestion only stages changes; they take effect at the next tick
boundary, so toggles never tear a tick. Ticking contains no wall-clock
reads, which makes a recorded command log replay bit-identically.
"""

import asyncio
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .control import StreamState, stream_push
from .errors import QpInfeasibleError
from .kinematics import jacobian
from .model import BIDIRECTIONAL, RecurrentModel, load_checkpoint
from .plant import PlantConfig, load_plant_config, plant_init, plant_step
from .qp import QpProblem, resolved_velocity_solve

STALE_HOLD_S = 0.1    # commands are used at full scale this long
STALE_ZERO_S = 0.5    # ... and have decayed linearly to zero by this age


@dataclass
class TeleopConfig:
    plant_config: PlantConfig
    inverse_model: RecurrentModel = None
    rate_hz: float = 100.0
    window_len: int = 50
    feedback_gain: float = 0.3
    qdot_max: float = 1.5
    start_posture: np.ndarray = None
    err_window_ticks: int = 100
    port: int = 8765

    def __post_init__(self):
        if self.inverse_model is not None:
            if self.inverse_model.direction != BIDIRECTIONAL:
                raise ValueError("teleop compensation needs a bidirectional model")
            if self.inverse_model.window_len != self.window_len:
                raise ValueError("window_len must match the inverse model")
        if self.start_posture is None:
            self.start_posture = np.zeros(self.plant_config.n_joints)
        self.start_posture = np.asarray(self.start_posture, dtype=np.float64)


def load_teleop_config(path) -> TeleopConfig:
    """Service config file: port, checkpoint paths, plant config path, rate_hz,
    window_T (+ optional feedback_gain, qdot_max)."""
    import yaml

    raw = yaml.safe_load(Path(path).read_text())
    plant = load_plant_config(raw["plant_config"])
    model = None
    if raw.get("inverse_checkpoint"):
        model = load_checkpoint(Path(raw["inverse_checkpoint"]).read_bytes(),
                                expect_direction=BIDIRECTIONAL)
    return TeleopConfig(
        plant_config=plant,
        inverse_model=model,
        rate_hz=float(raw.get("rate_hz", 100.0)),
        window_len=int(raw.get("window_T", 50)),
        feedback_gain=float(raw.get("feedback_gain", 0.3)),
        qdot_max=float(raw.get("qdot_max", 1.5)),
        port=int(raw.get("port", 8765)),
    )


@dataclass
class SessionState:
    config: TeleopConfig
    plant_state: object = None
    stream: StreamState = None
    q_ref: np.ndarray = None
    ref_history: list = field(default_factory=list)
    t: int = 0
    v_cmd: np.ndarray = field(default_factory=lambda: np.zeros(6))
    last_seq: int = -1
    last_cmd_tick: int = None
    comp_on: bool = True
    orientation_lock: bool = False
    staged: dict = field(default_factory=dict)
    err_window: deque = None
    prev_ref_now: np.ndarray = None   # effective reference used last tick
    q_meas: np.ndarray = None
    pending_errors: list = field(default_factory=list)

    def __post_init__(self):
        cfg = self.config
        self.plant_state = plant_init(cfg.plant_config, cfg.start_posture)
        self.stream = StreamState(window_len=cfg.window_len)
        self.q_ref = cfg.start_posture.copy()
        self.err_window = deque(maxlen=cfg.err_window_ticks)
        self.q_meas = cfg.start_posture.copy()
        self.comp_on = cfg.inverse_model is not None


def session_info_message(cfg: TeleopConfig) -> dict:
    chain = cfg.plant_config.kinematic_params
    return {
        "type": "session_info",
        "n_joints": cfg.plant_config.n_joints,
        "rate_hz": cfg.rate_hz,
        "window_T": cfg.window_len,
        "kinematics": chain.to_dict() if chain is not None else None,
        "version": __version__,
    }


def handle_message(session: SessionState, msg: dict):
    """Stage a wire message; returns an error dict to send back, or None.

    Malformed input never kills the session; command updates take effect on
    the next tick.
    """
    if not isinstance(msg, dict) or "type" not in msg:
        return {"type": "error", "code": "malformed", "detail": "message needs a type"}
    kind = msg["type"]
    if kind == "vel_cmd":
        try:
            v = [float(x) for x in msg["v"]]
            seq = int(msg["seq"])
        except (KeyError, TypeError, ValueError):
            return {"type": "error", "code": "bad_vel_cmd",
                    "detail": "vel_cmd needs v (6 floats) and seq"}
        if len(v) != 6 or not all(math.isfinite(x) for x in v):
            return {"type": "error", "code": "bad_vel_cmd",
                    "detail": "v must be 6 finite floats"}
        if seq <= session.last_seq:
            return {"type": "error", "code": "out_of_order_seq",
                    "detail": f"seq {seq} <= last {session.last_seq}"}
        session.last_seq = seq
        session.staged["v_cmd"] = np.array(v)
        return None
    if kind == "toggle_comp":
        if session.config.inverse_model is None and msg.get("on"):
            return {"type": "error", "code": "no_model",
                    "detail": "no inverse model loaded"}
        session.staged["comp_on"] = bool(msg.get("on"))
        return None
    if kind == "set_orientation_lock":
        session.staged["orientation_lock"] = bool(msg.get("on"))
        return None
    return {"type": "error", "code": "unknown_type", "detail": f"unknown type {kind!r}"}


def _staleness_scale(session: SessionState) -> float:
    if session.last_cmd_tick is None:
        return 0.0
    age_s = (session.t - session.last_cmd_tick) / session.config.rate_hz
    if age_s <= STALE_HOLD_S:
        return 1.0
    return max(0.0, (STALE_ZERO_S - age_s) / (STALE_ZERO_S - STALE_HOLD_S))


def tick(session: SessionState) -> dict:
    """Advance the session one sample; returns the telemetry state message."""
    cfg = session.config
    dt = 1.0 / cfg.rate_hz

    # tick boundary: apply staged changes atomically
    if "v_cmd" in session.staged:
        session.v_cmd = session.staged.pop("v_cmd")
        session.last_cmd_tick = session.t
    if "comp_on" in session.staged:
        session.comp_on = session.staged.pop("comp_on")
    if "orientation_lock" in session.staged:
        session.orientation_lock = session.staged.pop("orientation_lock")
    session.staged.clear()

    # resolve the user velocity to a joint velocity at the reference state
    v_d = session.v_cmd * _staleness_scale(session)
    if session.orientation_lock:
        v_d = v_d.copy()
        v_d[0:3] = 0.0
    chain = cfg.plant_config.kinematic_params
    qdot = np.zeros(cfg.plant_config.n_joints)
    if np.any(v_d != 0.0):
        problem = QpProblem(
            J=jacobian(chain, session.q_ref),
            v_d=v_d,
            orientation_lock=session.orientation_lock,
            qdot_max=np.full(cfg.plant_config.n_joints, cfg.qdot_max),
            q=session.q_ref,
            dt=dt,
            joint_limits=cfg.plant_config.joint_limits,
        )
        try:
            qdot = resolved_velocity_solve(problem).qdot
        except QpInfeasibleError as exc:
            session.pending_errors.append(
                {"type": "error", "code": "qp_infeasible", "detail": str(exc)}
            )
            qdot = np.zeros(cfg.plant_config.n_joints)
    session.q_ref = np.clip(
        session.q_ref + qdot * dt,
        cfg.plant_config.joint_limits[:, 0],
        cfg.plant_config.joint_limits[:, 1],
    )
    session.ref_history.append(session.q_ref.copy())

    # streaming inverse compensation (fed every tick so toggling is instant);
    # the emission this tick is exactly the feedforward for the delayed index
    emitted = None
    if cfg.inverse_model is not None:
        emitted = stream_push(session.stream, cfg.inverse_model, session.q_ref)

    # command law
    k = cfg.feedback_gain
    use_comp = session.comp_on and emitted is not None
    if use_comp:
        idx_now = session.stream.arrivals - session.stream.window_len // 2
        ref_now = session.ref_history[idx_now]
        ref_prev = session.ref_history[idx_now - 1] if idx_now > 0 else ref_now
        q_c = emitted - k * (session.q_meas - ref_prev)
        latency_report = session.stream.latency_samples
    else:
        ref_now = session.ref_history[-1]
        ref_prev = (
            session.prev_ref_now if session.prev_ref_now is not None else ref_now
        )
        q_c = ref_now - k * (session.q_meas - ref_prev)
        latency_report = 0

    session.plant_state, q_meas = plant_step(session.plant_state, cfg.plant_config, q_c)
    session.q_meas = q_meas
    session.prev_ref_now = ref_now

    err = q_meas - ref_now
    session.err_window.append(float(np.sum(err * err)))
    err_l2 = float(np.sqrt(np.sum(session.err_window)))

    session.t += 1
    return {
        "type": "state",
        "t": session.t,
        "q": q_meas.tolist(),
        "q_d": ref_now.tolist(),
        "q_c": q_c.tolist(),
        "err_l2_window": err_l2,
        "comp_on": bool(use_comp or (session.comp_on and cfg.inverse_model is not None)),
        "latency_samples": latency_report,
    }


# -- headless replay -------------------------------------------------------------


def replay(config: TeleopConfig, command_log, n_ticks: int, comp_on: bool = True):
    """Drive a fresh session from a recorded command log.

    command_log: iterable of {"tick": int, "msg": {...}} entries. Returns the
    list of telemetry messages (deterministic for a fixed log).
    """
    session = SessionState(config=config)
    session.comp_on = comp_on and config.inverse_model is not None
    by_tick = {}
    for entry in command_log:
        by_tick.setdefault(int(entry["tick"]), []).append(entry["msg"])
    telemetry = []
    for t in range(n_ticks):
        for msg in by_tick.get(t, ()):
            handle_message(session, msg)
        telemetry.append(tick(session))
    return telemetry


def load_command_log(path):
    """JSON-lines command log: one {"tick": .., "msg": {..}} object per line."""
    entries = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            entries.append(json.loads(line))
    return entries


def save_command_log(entries, path):
    with open(path, "w") as fh:
        for entry in entries:
            fh.write(json.dumps(entry) + "\n")


def synth_command_log(seed: int, n_ticks: int, cmd_every: int = 2,
                      lin_scale: float = 0.08, ang_scale: float = 0.15):
    """Scripted joystick session: smooth multi-sine velocity commands at
    rate/cmd_every Hz with strictly increasing seq."""
    rng = np.random.default_rng(seed)
    n_waves = 3
    freqs = rng.uniform(0.05, 0.3, size=(6, n_waves))
    phases = rng.uniform(0, 2 * np.pi, size=(6, n_waves))
    weights = rng.uniform(0.2, 1.0, size=(6, n_waves))
    weights /= weights.sum(axis=1, keepdims=True)
    scales = np.array([ang_scale] * 3 + [lin_scale] * 3)
    entries = []
    seq = 0
    for t in range(0, n_ticks, cmd_every):
        tsec = t / 100.0
        v = scales * np.sum(
            weights * np.sin(2 * np.pi * freqs * tsec + phases), axis=1
        )
        entries.append({"tick": t, "msg": {"type": "vel_cmd", "v": v.tolist(), "seq": seq}})
        seq += 1
    return entries


def teleop_replay_experiment(spec):
    """A/B replay of one command log: compensation on vs baseline.

    Tracking error is measured against each run's effective reference (the
    delayed stream under compensation); the first window_len ticks are skipped
    in both runs so priming transients do not pollute the comparison.
    """
    from .harness import (APPROACH_BRNN, BASELINE, Report, compute_metrics_arrays,
                          improvement_pct)

    config = TeleopConfig(
        plant_config=spec.plant_config,
        inverse_model=spec.inverse_model,
        window_len=spec.inverse_model.window_len,
        feedback_gain=float(np.atleast_1d(spec.controller.k)[0]),
    )
    n_ticks = spec.n_samples
    log = synth_command_log(spec.seed, n_ticks)
    skip = config.window_len

    runs = {}
    for name, comp in ((BASELINE, False), (APPROACH_BRNN, True)):
        telemetry = replay(config, log, n_ticks, comp_on=comp)
        q = np.array([m["q"] for m in telemetry[skip:]]).T
        ref = np.array([m["q_d"] for m in telemetry[skip:]]).T
        runs[name] = compute_metrics_arrays(q, ref)

    per_row, mean = improvement_pct(runs[BASELINE], runs[APPROACH_BRNN])
    n = spec.plant_config.n_joints
    return Report(
        experiment="teleop_replay",
        seed=spec.seed,
        row_labels=[f"joint_{i + 1}" for i in range(n)],
        controllers=[BASELINE, APPROACH_BRNN],
        l2={k: m.l2_per_joint for k, m in runs.items()},
        linf={k: m.linf_per_joint for k, m in runs.items()},
        improvement={APPROACH_BRNN: {"per_row": per_row, "mean": mean}},
    )


# -- websocket service -------------------------------------------------------------


def build_app(config: TeleopConfig):
    """FastAPI app exposing GET /healthz and the /teleop websocket."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI(title="flexarm teleop", version=__version__)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__}

    @app.websocket("/teleop")
    async def teleop_ws(ws: WebSocket):
        await ws.accept()
        session = SessionState(config=config)
        await ws.send_text(json.dumps(session_info_message(config)))
        period = 1.0 / config.rate_hz
        loop = asyncio.get_event_loop()
        next_tick = loop.time() + period

        async def receiver():
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    msg = None
                reply = handle_message(session, msg) if msg is not None else {
                    "type": "error", "code": "malformed", "detail": "invalid JSON"
                }
                if reply is not None:
                    await ws.send_text(json.dumps(reply))

        recv_task = asyncio.create_task(receiver())
        try:
            while True:
                now = loop.time()
                if now < next_tick:
                    await asyncio.sleep(next_tick - now)
                next_tick += period
                if next_tick < loop.time() - 1.0:   # fell far behind; resynchronize
                    next_tick = loop.time() + period
                state = tick(session)
                for err in session.pending_errors:
                    await ws.send_text(json.dumps(err))
                session.pending_errors.clear()
                await ws.send_text(json.dumps(state))
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            recv_task.cancel()

    return app


def serve(config: TeleopConfig, host: str = "127.0.0.1"):
    """Run the teleop service until interrupted."""
    import uvicorn

    uvicorn.run(build_app(config), host=host, port=config.port, log_level="warning")
