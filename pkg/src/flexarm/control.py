"""Closed-loop command laws and the streaming inverse-dynamics compensator.

Command laws (k is the proportional feedback gain):

    compensated:  q_c(t+1) = q_f(t+1) - k (q(t) - q_d(t))
    baseline:     q_c(t+1) = q_d(t+1) - k (q(t) - q_d(t))

so with q_f identical to q_d the compensated law reduces exactly to the
baseline. The streaming compensator buffers desired setpoints until a full
centered window is available, then emits one feedforward sample per push with
a steady-state lookahead latency of T/2 - 1 samples.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .model import BIDIRECTIONAL, RecurrentModel, model_forward
from .plant import PlantConfig, plant_init, plant_step
from .trajectory import Trajectory


@dataclass
class ControllerConfig:
    k: float = 0.3               # scalar or per-joint array
    mode: str = "feedforward"    # "baseline" | "feedforward"

    def __post_init__(self):
        if self.mode not in ("baseline", "feedforward"):
            raise ValueError(f"unknown controller mode {self.mode!r}")
        self.k = np.asarray(self.k, dtype=np.float64)


def baseline_command(q_d_next, q_d_now, q_now, k):
    """Eq-style baseline law: feed the raw desired setpoint forward."""
    return np.asarray(q_d_next) - k * (np.asarray(q_now) - np.asarray(q_d_now))


def compensated_command(q_f_next, q_d_now, q_now, k):
    """Feedforward law: the shaped setpoint replaces q_d in the forward slot."""
    return np.asarray(q_f_next) - k * (np.asarray(q_now) - np.asarray(q_d_now))


# -- streaming compensator -----------------------------------------------------


@dataclass
class StreamState:
    """Priming/lookahead state of the online inverse-dynamics filter."""

    window_len: int
    buffer: deque = field(default_factory=deque)
    arrivals: int = 0
    emitted: int = 0

    def __post_init__(self):
        self.buffer = deque(self.buffer, maxlen=self.window_len)

    @property
    def primed(self) -> bool:
        return self.arrivals >= self.window_len

    @property
    def latency_samples(self) -> int:
        """Steady-state lag between the newest input index and the emitted index."""
        return self.window_len // 2 - 1

    @property
    def next_output_index(self) -> int:
        """Trajectory index of the next emission."""
        return self.emitted + self.window_len // 2


def stream_push(state: StreamState, model: RecurrentModel, q_d_sample) -> np.ndarray:
    """Push one desired setpoint; returns q_f for index (arrivals - T/2) once
    T samples are buffered, else None. Emissions equal the offline filter's
    outputs for the same indices exactly (same windows, same model call)."""
    if model.direction != BIDIRECTIONAL:
        raise ValueError("streaming compensation requires a bidirectional model")
    if model.window_len != state.window_len:
        raise ShapeError(
            f"stream window {state.window_len} != model window {model.window_len}"
        )
    sample = np.asarray(q_d_sample, dtype=np.float64).reshape(model.n_joints)
    state.buffer.append(sample.copy())
    state.arrivals += 1
    if not state.primed:
        return None
    window = np.stack(state.buffer, axis=1)  # (n, T)
    q_f = model_forward(model, window)
    state.emitted += 1
    return q_f


def filter_trajectory(model: RecurrentModel, q_d: Trajectory) -> Trajectory:
    """Offline non-causal filtering of q_d through the inverse model.

    Interior indices t in [T/2, N - T/2] come from centered windows; the
    boundary falls back to q_d itself (which makes the compensated law reduce
    to the baseline there). Output length equals input length.

    Windows are evaluated one at a time through the same call the streaming
    filter uses, so streaming and offline outputs agree bit for bit (a batched
    GEMM may round differently).
    """
    if model.direction != BIDIRECTIONAL:
        raise ValueError("filter_trajectory requires a bidirectional model")
    T = model.window_len
    N = q_d.n_samples
    if N < T:
        raise ValueError(f"trajectory must contain at least T={T} samples")
    half = T // 2
    out = q_d.data.copy()
    for t in range(half, N - half + 1):
        window = np.ascontiguousarray(q_d.data[:, t - half:t + half])
        out[:, t] = model_forward(model, window)
    return Trajectory(out, q_d.sample_rate)


# -- closed loop ----------------------------------------------------------------


@dataclass
class ClosedLoopResult:
    q: Trajectory     # measured response
    q_c: Trajectory   # commanded setpoints actually sent


def run_closed_loop(plant_config: PlantConfig, q_d: Trajectory,
                    q_f: Trajectory = None, controller: ControllerConfig = None,
                    step_fn=None, init_fn=None) -> ClosedLoopResult:
    """Apply the command law against the plant, sample by sample.

    q_f supplies the feedforward trajectory for the compensated law; with
    q_f = None or mode = "baseline" the baseline law runs. `step_fn`/`init_fn`
    may replace the plant for testing (step_fn(state, q_c) -> (state, q)).
    """
    controller = controller or ControllerConfig()
    if controller.mode == "baseline":
        q_f = None
    if q_f is not None:
        if q_f.data.shape != q_d.data.shape:
            raise ShapeError("q_f and q_d must have equal shapes")
        if q_f.sample_rate != q_d.sample_rate:
            raise ValueError("q_f and q_d must share a sample rate")
    ff = q_f.data if q_f is not None else q_d.data

    if step_fn is None:
        if abs(q_d.sample_rate - plant_config.sample_rate) > 1e-9:
            raise ValueError("q_d sample rate must match the plant rate")
        state = plant_init(plant_config, q_d.data[:, 0])

        def step_fn(s, cmd):
            return plant_step(s, plant_config, cmd)
    else:
        state = init_fn(q_d.data[:, 0]) if init_fn is not None else None

    n, total = q_d.data.shape
    k = controller.k
    q_log = np.empty((n, total))
    qc_log = np.empty((n, total))
    q_prev = q_d.data[:, 0]  # plant starts at rest on the reference
    for t in range(total):
        if t == 0:
            q_c = ff[:, 0].copy()
        else:
            q_c = ff[:, t] - k * (q_prev - q_d.data[:, t - 1])
        state, q_meas = step_fn(state, q_c)
        q_log[:, t] = q_meas
        qc_log[:, t] = q_c
        q_prev = q_meas
    return ClosedLoopResult(
        q=Trajectory(q_log, q_d.sample_rate),
        q_c=Trajectory(qc_log, q_d.sample_rate),
    )
