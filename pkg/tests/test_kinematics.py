import numpy as np
import pytest

from flexarm.kinematics import (
    KinematicChain,
    default_chain_7dof,
    fk_position_rotation,
    forward_kinematics,
    ik_position,
    jacobian,
    manipulability,
    manipulability_of,
    planar_chain_2link,
    rotation_log,
)


def quat_to_rot(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def fd_jacobian(chain, q, delta=1e-7):
    """Central-difference oracle: linear rows from FK positions, angular rows
    from the rotation log of R(q+d) R(q-d)^T."""
    n = len(q)
    out = np.zeros((6, n))
    for i in range(n):
        qp = np.array(q, dtype=float)
        qm = np.array(q, dtype=float)
        qp[i] += delta
        qm[i] -= delta
        pp, rp = fk_position_rotation(chain, qp)
        pm, rm = fk_position_rotation(chain, qm)
        out[3:6, i] = (pp - pm) / (2 * delta)
        out[0:3, i] = rotation_log(rp @ rm.T) / (2 * delta)
    return out


class TestForwardKinematics:
    def test_straight_planar_arm(self):
        chain = planar_chain_2link(1.0, 1.0)
        pose = forward_kinematics(chain, [0.0, 0.0])
        assert np.allclose(pose.position, [2.0, 0.0, 0.0])

    def test_elbow_bent_90(self):
        chain = planar_chain_2link(1.0, 1.0)
        pose = forward_kinematics(chain, [0.0, np.pi / 2])
        assert np.allclose(pose.position, [1.0, 1.0, 0.0], atol=1e-12)

    def test_hand_trig_oracle_random_angles(self, rng):
        chain = planar_chain_2link(1.3, 0.7)
        for _ in range(20):
            q1, q2 = rng.uniform(-np.pi, np.pi, size=2)
            pose = forward_kinematics(chain, [q1, q2])
            x = 1.3 * np.cos(q1) + 0.7 * np.cos(q1 + q2)
            y = 1.3 * np.sin(q1) + 0.7 * np.sin(q1 + q2)
            assert np.allclose(pose.position, [x, y, 0.0], atol=1e-12)

    def test_periodicity(self, rng):
        chain = default_chain_7dof()
        q = rng.uniform(-1, 1, size=7)
        q2 = q.copy()
        q2[3] += 2 * np.pi
        a = forward_kinematics(chain, q)
        b = forward_kinematics(chain, q2)
        assert np.allclose(a.position, b.position, atol=1e-12)
        assert np.allclose(a.orientation, b.orientation, atol=1e-12)

    def test_quaternion_is_unit_and_matches_rotation(self, rng):
        chain = default_chain_7dof()
        for _ in range(10):
            q = rng.uniform(-1.5, 1.5, size=7)
            pose = forward_kinematics(chain, q)
            _, rot = fk_position_rotation(chain, q)
            assert abs(np.linalg.norm(pose.orientation) - 1.0) < 1e-12
            assert np.allclose(quat_to_rot(pose.orientation), rot, atol=1e-10)

    def test_nonfinite_rejected(self):
        chain = planar_chain_2link()
        with pytest.raises(ValueError):
            forward_kinematics(chain, [np.nan, 0.0])


class TestJacobian:
    def test_planar_positional_determinant(self):
        chain = planar_chain_2link(1.0, 1.0)
        jac = jacobian(chain, [0.0, np.pi / 2])
        det = np.linalg.det(jac[3:5, :])  # x, y rows
        assert abs(det - 1.0) < 1e-12

    def test_matches_finite_differences(self, rng):
        chain = default_chain_7dof()
        for _ in range(100):
            q = rng.uniform(-1.5, 1.5, size=7)
            assert np.max(np.abs(jacobian(chain, q) - fd_jacobian(chain, q))) < 1e-6

    def test_planar_matches_finite_differences(self, rng):
        chain = planar_chain_2link(0.8, 1.1)
        for _ in range(20):
            q = rng.uniform(-np.pi, np.pi, size=2)
            assert np.max(np.abs(jacobian(chain, q) - fd_jacobian(chain, q))) < 1e-6

    def test_straight_arm_singular(self):
        chain = planar_chain_2link(1.0, 1.0)
        jac = jacobian(chain, [0.3, 0.0])  # straight arm at any base angle
        pos_xy = jac[3:5, :]
        assert np.linalg.matrix_rank(pos_xy, tol=1e-10) < 2


class TestManipulability:
    def test_planar_value(self):
        chain = planar_chain_2link(1.0, 1.0)
        w = manipulability(chain, [0.0, np.pi / 2], rows=(3, 4))
        assert abs(w - 1.0) < 1e-12

    def test_analytic_l1_l2_sin(self, rng):
        chain = planar_chain_2link(1.2, 0.5)
        for _ in range(20):
            q = rng.uniform(-np.pi, np.pi, size=2)
            w = manipulability(chain, q, rows=(3, 4))
            assert abs(w - 1.2 * 0.5 * abs(np.sin(q[1]))) < 1e-10

    def test_singular_is_zero(self):
        chain = planar_chain_2link(1.0, 1.0)
        assert manipulability(chain, [0.0, 0.0], rows=(3, 4)) == 0.0

    def test_definitional_identity(self, rng):
        chain = default_chain_7dof()
        for _ in range(20):
            q = rng.uniform(-1.5, 1.5, size=7)
            jac = jacobian(chain, q)
            w = manipulability(chain, q)
            assert abs(w * w - np.linalg.det(jac @ jac.T)) < 1e-9


class TestIk:
    def test_reaches_target_position(self):
        chain = default_chain_7dof()
        target = np.array([0.55, 0.1, 0.2])
        q = ik_position(chain, target, np.array([0, -0.6, 0, 1.2, 0, 0.6, 0.0]))
        pos, _ = fk_position_rotation(chain, q)
        assert np.linalg.norm(pos - target) < 1e-8

    def test_chain_dict_round_trip(self):
        chain = default_chain_7dof()
        rebuilt = KinematicChain.from_dict(chain.to_dict())
        q = np.linspace(-0.5, 0.5, 7)
        a = forward_kinematics(chain, q)
        b = forward_kinematics(rebuilt, q)
        assert np.array_equal(a.position, b.position)
