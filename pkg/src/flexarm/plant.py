"""Simulated flexible-joint manipulator.

Stand-in for the inner-loop dynamics of a series-elastic 7-DOF arm: the map
from a commanded joint setpoint to the measured joint position. Each joint is
a two-mass system (motor and link) connected by a spring/damper; the motor is
driven by an inner PD servo acting on a transport-delayed command; link
accelerations are mixed across joints by a constant symmetric coupling matrix
and perturbed by a gravity-like sin(q) torque.

Discrete update (semi-implicit Euler at dt, velocity damping handled
implicitly per body - the fully explicit form is unstable at the default
gains):

    (J_m + dt (kd + ds)) v_m' = J_m v_m + dt (kp (u - q_m) - ks (q_m - q_l) + ds v_l)
    (I + dt C diag(ds/J_l)) v_l' = v_l + dt C [(ks (q_m - q_l) + ds v_m - g sin(q_l)) / J_l]
    q_m' = q_m + dt v_m'
    q_l' = q_l + dt v_l'

where u is the command delayed by `delay_steps` samples. The measured output
is the link position, so the response is strictly proper: the output at
sample t depends on commands up to sample t - 1 - delay_steps only.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import DivergenceError, JointLimitError, ShapeError
from .kinematics import KinematicChain, default_chain_7dof
from .trajectory import Trajectory

DIVERGENCE_LIMIT = 1e3

DEFAULT_JOINT_LIMITS = np.array([1.7, 2.1, 3.0, 2.6, 3.0, 2.0, 3.0])


def _per_joint(value, n, name) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ShapeError(f"{name} must be scalar or length {n}, got shape {arr.shape}")
    return arr


def adjacent_coupling(n: int, strength: float = 0.05) -> np.ndarray:
    """Symmetric unit-diagonal coupling with `strength` between adjacent joints."""
    c = np.eye(n)
    idx = np.arange(n - 1)
    c[idx, idx + 1] = strength
    c[idx + 1, idx] = strength
    return c


@dataclass
class PlantConfig:
    """Parameters of the simulated flexible-joint arm.

    All per-joint fields accept a scalar (broadcast) or a length-n array.
    `joint_limits` is an (n, 2) array of [lo, hi] per joint.
    """

    n_joints: int = 7
    dt: float = 0.01
    motor_inertia: np.ndarray = 0.01
    link_inertia: np.ndarray = 0.1
    spring_stiffness: np.ndarray = 50.0
    spring_damping: np.ndarray = 1.0
    servo_kp: np.ndarray = 100.0
    servo_kd: np.ndarray = 10.0
    coupling: np.ndarray = None
    gravity_gain: np.ndarray = 0.5
    delay_steps: int = 2
    joint_limits: np.ndarray = None
    kinematic_params: KinematicChain = None

    def __post_init__(self):
        n = self.n_joints
        if n < 1:
            raise ValueError("n_joints must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.delay_steps < 0:
            raise ValueError("delay_steps must be >= 0")
        self.motor_inertia = _per_joint(self.motor_inertia, n, "motor_inertia")
        self.link_inertia = _per_joint(self.link_inertia, n, "link_inertia")
        self.spring_stiffness = _per_joint(self.spring_stiffness, n, "spring_stiffness")
        self.spring_damping = _per_joint(self.spring_damping, n, "spring_damping")
        self.servo_kp = _per_joint(self.servo_kp, n, "servo_kp")
        self.servo_kd = _per_joint(self.servo_kd, n, "servo_kd")
        self.gravity_gain = _per_joint(self.gravity_gain, n, "gravity_gain")
        if self.coupling is None:
            self.coupling = adjacent_coupling(n) if n > 1 else np.eye(1)
        self.coupling = np.asarray(self.coupling, dtype=np.float64)
        if self.coupling.shape != (n, n):
            raise ShapeError(f"coupling must be {n}x{n}")
        if not np.allclose(self.coupling, self.coupling.T, atol=1e-12):
            raise ValueError("coupling matrix must be symmetric")
        if not np.allclose(np.diag(self.coupling), 1.0, atol=1e-12):
            raise ValueError("coupling matrix must have unit diagonal")
        if np.any(self.spring_stiffness <= 0):
            raise ValueError("spring_stiffness must be positive elementwise")
        if self.joint_limits is None:
            if n == 7:
                lim = DEFAULT_JOINT_LIMITS
            else:
                lim = np.full(n, 3.0)
            self.joint_limits = np.column_stack([-lim, lim])
        self.joint_limits = np.asarray(self.joint_limits, dtype=np.float64)
        if self.joint_limits.shape != (n, 2):
            raise ShapeError(f"joint_limits must be ({n}, 2)")
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ValueError("joint_limits lo must be < hi")
        if self.kinematic_params is None and n == 7:
            self.kinematic_params = default_chain_7dof()

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt

    def check_within_limits(self, q: np.ndarray):
        q = np.asarray(q, dtype=np.float64)
        for j in range(self.n_joints):
            if q[j] < self.joint_limits[j, 0] or q[j] > self.joint_limits[j, 1]:
                raise JointLimitError(j, q[j], *self.joint_limits[j])

    def link_solve_matrix(self) -> np.ndarray:
        """Constant matrix of the implicit link-velocity solve, prefactored as an inverse."""
        n = self.n_joints
        m = np.eye(n) + self.dt * self.coupling @ np.diag(
            self.spring_damping / self.link_inertia
        )
        return np.linalg.inv(m)


@dataclass
class PlantState:
    """Full dynamic state of the simulated arm plus cached solve matrices."""

    motor_pos: np.ndarray
    motor_vel: np.ndarray
    link_pos: np.ndarray
    link_vel: np.ndarray
    delay_buffer: tuple  # FIFO of delay_steps command vectors, oldest first
    link_solve_inv: np.ndarray = field(repr=False, default=None)

    def copy(self) -> "PlantState":
        return PlantState(
            self.motor_pos.copy(),
            self.motor_vel.copy(),
            self.link_pos.copy(),
            self.link_vel.copy(),
            tuple(v.copy() for v in self.delay_buffer),
            self.link_solve_inv,
        )


def plant_init(config: PlantConfig, q0) -> PlantState:
    """Initial state at rest at q0 with the delay buffer filled with q0."""
    q0 = np.asarray(q0, dtype=np.float64).reshape(config.n_joints)
    config.check_within_limits(q0)
    zeros = np.zeros(config.n_joints)
    return PlantState(
        motor_pos=q0.copy(),
        motor_vel=zeros.copy(),
        link_pos=q0.copy(),
        link_vel=zeros.copy(),
        delay_buffer=tuple(q0.copy() for _ in range(config.delay_steps)),
        link_solve_inv=config.link_solve_matrix(),
    )


def plant_step(state: PlantState, config: PlantConfig, q_c) -> tuple:
    """Advance the plant exactly one sample under command q_c.

    Returns (new_state, q) where q is the measured joint position (link side).
    """
    q_c = np.asarray(q_c, dtype=np.float64).reshape(config.n_joints)
    if not np.all(np.isfinite(q_c)):
        raise ValueError("plant_step: command contains non-finite values")

    if config.delay_steps > 0:
        u = state.delay_buffer[0]
        buffer = state.delay_buffer[1:] + (q_c.copy(),)
    else:
        u = q_c
        buffer = ()

    dt = config.dt
    qm, vm = state.motor_pos, state.motor_vel
    ql, vl = state.link_pos, state.link_vel
    ks, ds = config.spring_stiffness, config.spring_damping

    spring = ks * (qm - ql)
    motor_rhs = (
        config.motor_inertia * vm
        + dt * (config.servo_kp * (u - qm) - spring + ds * vl)
    )
    vm_new = motor_rhs / (config.motor_inertia + dt * (config.servo_kd + ds))

    link_acc_raw = (spring + ds * vm - config.gravity_gain * np.sin(ql)) / config.link_inertia
    link_solve_inv = (
        state.link_solve_inv if state.link_solve_inv is not None else config.link_solve_matrix()
    )
    vl_new = link_solve_inv @ (vl + dt * (config.coupling @ link_acc_raw))

    qm_new = qm + dt * vm_new
    ql_new = ql + dt * vl_new

    if np.any(np.abs(ql_new) > DIVERGENCE_LIMIT) or np.any(np.abs(qm_new) > DIVERGENCE_LIMIT):
        raise DivergenceError(
            f"plant state exceeded {DIVERGENCE_LIMIT} rad "
            f"(max |q| = {max(np.abs(ql_new).max(), np.abs(qm_new).max()):.3g}); "
            f"config: n={config.n_joints} dt={config.dt} kp={config.servo_kp} kd={config.servo_kd}"
        )

    new_state = PlantState(qm_new, vm_new, ql_new, vl_new, buffer, link_solve_inv)
    return new_state, ql_new.copy()


def simulate(config: PlantConfig, q_c: Trajectory) -> Trajectory:
    """Fold plant_step over a command trajectory from rest at its first sample."""
    if abs(q_c.sample_rate - config.sample_rate) > 1e-9:
        raise ValueError(
            f"command sample rate {q_c.sample_rate} Hz does not match plant rate "
            f"{config.sample_rate} Hz"
        )
    if q_c.n_joints != config.n_joints:
        raise ShapeError(
            f"command has {q_c.n_joints} joints, plant has {config.n_joints}"
        )
    state = plant_init(config, q_c.data[:, 0])
    out = np.empty_like(q_c.data)
    for t in range(q_c.n_samples):
        state, q = plant_step(state, config, q_c.data[:, t])
        out[:, t] = q
    return Trajectory(out, q_c.sample_rate)


# -- config file I/O ---------------------------------------------------------

_CONFIG_KEYS = (
    "n_joints", "dt", "motor_inertia", "link_inertia", "spring_stiffness",
    "spring_damping", "servo_kp", "servo_kd", "coupling", "gravity_gain",
    "delay_steps", "joint_limits", "kinematic_params",
)


def load_plant_config(path) -> PlantConfig:
    """Load a PlantConfig from a YAML (or JSON) file.

    Recognized keys match the PlantConfig field names exactly; missing keys
    take the defaults. `kinematic_params` uses the KinematicChain dict layout.
    """
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"plant config file {path} must contain a mapping")
    unknown = set(raw) - set(_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown plant config keys: {sorted(unknown)}")
    kwargs = dict(raw)
    if "kinematic_params" in kwargs and kwargs["kinematic_params"] is not None:
        kwargs["kinematic_params"] = KinematicChain.from_dict(kwargs["kinematic_params"])
    for key in ("motor_inertia", "link_inertia", "spring_stiffness", "spring_damping",
                "servo_kp", "servo_kd", "gravity_gain", "coupling", "joint_limits"):
        if key in kwargs and kwargs[key] is not None and not np.isscalar(kwargs[key]):
            kwargs[key] = np.asarray(kwargs[key], dtype=np.float64)
    return PlantConfig(**kwargs)


def save_plant_config(config: PlantConfig, path):
    """Write a PlantConfig to YAML with the documented key names."""
    doc = {
        "n_joints": config.n_joints,
        "dt": config.dt,
        "motor_inertia": config.motor_inertia.tolist(),
        "link_inertia": config.link_inertia.tolist(),
        "spring_stiffness": config.spring_stiffness.tolist(),
        "spring_damping": config.spring_damping.tolist(),
        "servo_kp": config.servo_kp.tolist(),
        "servo_kd": config.servo_kd.tolist(),
        "coupling": config.coupling.tolist(),
        "gravity_gain": config.gravity_gain.tolist(),
        "delay_steps": config.delay_steps,
        "joint_limits": config.joint_limits.tolist(),
        "kinematic_params": config.kinematic_params.to_dict()
        if config.kinematic_params is not None
        else None,
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def config_fingerprint(config: PlantConfig) -> str:
    """Short stable hash of the physical parameters, for dataset provenance."""
    import hashlib

    h = hashlib.sha256()
    for arr in (
        config.motor_inertia, config.link_inertia, config.spring_stiffness,
        config.spring_damping, config.servo_kp, config.servo_kd,
        config.coupling, config.gravity_gain, config.joint_limits,
    ):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(np.float64(config.dt).tobytes())
    h.update(np.int64(config.delay_steps).tobytes())
    h.update(np.int64(config.n_joints).tobytes())
    return h.hexdigest()[:16]
