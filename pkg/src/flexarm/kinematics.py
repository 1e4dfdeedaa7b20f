"""Forward kinematics, geometric Jacobian and manipulability.

Chains are described per joint by a rotation axis and a point on that axis,
both expressed in the base frame at the zero configuration (product of
exponentials). All joints are revolute.

Jacobian row convention: rows 0:3 are angular velocity (rad/s), rows 3:6 are
linear velocity (m/s), matching the [omega; v] ordering of commanded spatial
velocities elsewhere in the package.
"""

from dataclasses import dataclass, field

import numpy as np

from .trajectory import Pose


def _hat(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def axis_angle_rotation(axis, angle) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    k = _hat(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_to_quaternion(r) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0 from a rotation matrix."""
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (r[2, 1] - r[1, 2]) / s,
            (r[0, 2] - r[2, 0]) / s,
            (r[1, 0] - r[0, 1]) / s,
        ])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(r[i, i] - r[j, j] - r[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[i + 1] = 0.25 * s
        q[j + 1] = (r[j, i] + r[i, j]) / s
        q[k + 1] = (r[k, i] + r[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def rotation_log(r) -> np.ndarray:
    """Rotation vector (axis * angle) of a rotation matrix."""
    cos_a = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_a)
    if angle < 1e-12:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # near-pi: extract axis from the symmetric part
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        # fix signs from off-diagonals
        if m[0, 1] < 0:
            axis[1] = -axis[1]
        if m[0, 2] < 0:
            axis[2] = -axis[2]
        return axis / np.linalg.norm(axis) * angle
    vee = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return vee * angle / (2.0 * np.sin(angle))


@dataclass
class RevoluteJoint:
    axis: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(self.axis)
        if norm < 1e-12:
            raise ValueError("joint axis must be nonzero")
        self.axis = self.axis / norm
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)


@dataclass
class KinematicChain:
    """Serial revolute chain; axes/origins in the base frame at zero pose."""

    joints: list
    tool_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tool_orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.joints = [
            j if isinstance(j, RevoluteJoint) else RevoluteJoint(**j) for j in self.joints
        ]
        self.tool_position = np.asarray(self.tool_position, dtype=np.float64).reshape(3)
        self.tool_orientation = np.asarray(self.tool_orientation, dtype=np.float64).reshape(3, 3)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def to_dict(self) -> dict:
        return {
            "joints": [
                {"axis": j.axis.tolist(), "origin": j.origin.tolist()} for j in self.joints
            ],
            "tool_position": self.tool_position.tolist(),
            "tool_orientation": self.tool_orientation.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "KinematicChain":
        kwargs = {"joints": d["joints"]}
        if "tool_position" in d:
            kwargs["tool_position"] = np.asarray(d["tool_position"], dtype=np.float64)
        if "tool_orientation" in d:
            kwargs["tool_orientation"] = np.asarray(d["tool_orientation"], dtype=np.float64)
        return cls(**kwargs)


def _frames(chain: KinematicChain, q):
    """Rotation/translation accumulated before each joint, plus the final frame."""
    q = np.asarray(q, dtype=np.float64).reshape(chain.n_joints)
    if not np.all(np.isfinite(q)):
        raise ValueError("joint vector contains non-finite values")
    r = np.eye(3)
    p = np.zeros(3)
    pre = []
    for joint, angle in zip(chain.joints, q):
        pre.append((r.copy(), p.copy()))
        rj = axis_angle_rotation(joint.axis, angle)
        # rotation about the axis line through joint.origin
        r_new = r @ rj
        p_new = r @ (joint.origin - rj @ joint.origin) + p
        r, p = r_new, p_new
    return pre, r, p


def forward_kinematics(chain: KinematicChain, q) -> Pose:
    """End-effector pose for joint vector q."""
    _, r, p = _frames(chain, q)
    position = r @ chain.tool_position + p
    orientation = rotation_to_quaternion(r @ chain.tool_orientation)
    return Pose(position, orientation)


def fk_position_rotation(chain: KinematicChain, q):
    """(position, rotation matrix) without the quaternion conversion."""
    _, r, p = _frames(chain, q)
    return r @ chain.tool_position + p, r @ chain.tool_orientation


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """6 x n geometric Jacobian in the base frame; rows [omega; v]."""
    pre, r, p = _frames(chain, q)
    p_ee = r @ chain.tool_position + p
    jac = np.zeros((6, chain.n_joints))
    for i, joint in enumerate(chain.joints):
        r_pre, p_pre = pre[i]
        omega = r_pre @ joint.axis
        point = r_pre @ joint.origin + p_pre
        jac[0:3, i] = omega
        jac[3:6, i] = np.cross(omega, p_ee - point)
    return jac


def manipulability_of(jac: np.ndarray) -> float:
    """Yoshikawa measure sqrt(det(J J^T)) of an arbitrary Jacobian block."""
    g = jac @ jac.T
    det = np.linalg.det(g)
    return float(np.sqrt(max(det, 0.0)))


def manipulability(chain: KinematicChain, q, rows=None) -> float:
    """Manipulability at q; `rows` optionally selects Jacobian rows
    (e.g. (3, 4) for the planar x-y positional block)."""
    jac = jacobian(chain, q)
    if rows is not None:
        jac = jac[list(rows), :]
    return manipulability_of(jac)


def planar_chain_2link(l1: float = 1.0, l2: float = 1.0) -> KinematicChain:
    """Two z-axis revolute joints in the x-y plane; tool at the second link tip."""
    return KinematicChain(
        joints=[
            RevoluteJoint(axis=[0, 0, 1], origin=[0, 0, 0]),
            RevoluteJoint(axis=[0, 0, 1], origin=[l1, 0, 0]),
        ],
        tool_position=[l1 + l2, 0, 0],
    )


def default_chain_7dof() -> KinematicChain:
    """Baxter-like 7R chain: alternating roll/pitch joints along +x at shoulder height."""
    z, y, x = [0, 0, 1], [0, 1, 0], [1, 0, 0]
    shoulder = [0.08, 0.0, 0.30]
    elbow = [0.43, 0.0, 0.30]
    wrist = [0.78, 0.0, 0.30]
    return KinematicChain(
        joints=[
            RevoluteJoint(axis=z, origin=[0.0, 0.0, 0.30]),
            RevoluteJoint(axis=y, origin=shoulder),
            RevoluteJoint(axis=x, origin=shoulder),
            RevoluteJoint(axis=y, origin=elbow),
            RevoluteJoint(axis=x, origin=elbow),
            RevoluteJoint(axis=y, origin=wrist),
            RevoluteJoint(axis=x, origin=wrist),
        ],
        tool_position=[0.88, 0.0, 0.30],
    )


def ik_position(chain: KinematicChain, target_pos, q0, target_rotation=None,
                max_iters: int = 200, tol: float = 1e-10, damping: float = 1e-6,
                step_scale: float = 0.5):
    """Damped least-squares IK to a target position (and optional orientation).

    Returns the joint vector; raises if the residual does not converge.
    """
    q = np.asarray(q0, dtype=np.float64).copy()
    target_pos = np.asarray(target_pos, dtype=np.float64).reshape(3)
    for _ in range(max_iters):
        pos, rot = fk_position_rotation(chain, q)
        err_p = target_pos - pos
        if target_rotation is not None:
            err_w = rotation_log(target_rotation @ rot.T)
            err = np.concatenate([err_w, err_p])
            jac = jacobian(chain, q)
        else:
            err = err_p
            jac = jacobian(chain, q)[3:6]
        if np.linalg.norm(err) < tol:
            return q
        jtj = jac.T @ jac + damping * np.eye(chain.n_joints)
        dq = np.linalg.solve(jtj, jac.T @ err)
        q = q + step_scale * dq
    if np.linalg.norm(err) < 1e-6:
        return q
    raise RuntimeError(
        f"IK did not converge: residual {np.linalg.norm(err):.3g} at target {target_pos}"
    )
