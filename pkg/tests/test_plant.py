import numpy as np
import pytest

from flexarm.errors import DivergenceError, JointLimitError
from flexarm.plant import (
    PlantConfig,
    load_plant_config,
    plant_init,
    plant_step,
    save_plant_config,
    simulate,
)
from flexarm.trajectory import Trajectory

from reference_lti import simulate_lti, single_joint_state_space


def single_joint_config(**overrides):
    base = dict(n_joints=1, gravity_gain=0.0, delay_steps=0, coupling=np.eye(1))
    base.update(overrides)
    return PlantConfig(**base)


class TestPlantInit:
    def test_zero_init_default_config(self):
        cfg = PlantConfig()
        state = plant_init(cfg, np.zeros(7))
        assert np.all(state.motor_pos == 0)
        assert np.all(state.link_pos == 0)
        assert np.all(state.motor_vel == 0)
        assert np.all(state.link_vel == 0)
        assert len(state.delay_buffer) == 2
        assert all(np.all(v == 0) for v in state.delay_buffer)

    def test_zero_delay_gives_empty_buffer(self):
        cfg = PlantConfig(delay_steps=0)
        state = plant_init(cfg, np.zeros(7))
        assert len(state.delay_buffer) == 0

    def test_out_of_limits_names_joint(self):
        cfg = PlantConfig()
        q0 = np.zeros(7)
        q0[3] = cfg.joint_limits[3, 1] + 0.1
        with pytest.raises(JointLimitError) as err:
            plant_init(cfg, q0)
        assert err.value.joint == 3


class TestPlantStep:
    def test_zero_equilibrium(self):
        cfg = PlantConfig(gravity_gain=0.0)
        state = plant_init(cfg, np.zeros(7))
        for _ in range(10):
            state, q = plant_step(state, cfg, np.zeros(7))
            assert np.all(q == 0)

    def test_matches_dense_state_space_oracle(self):
        cfg = single_joint_config()
        a, b = single_joint_state_space(
            cfg.motor_inertia[0], cfg.link_inertia[0], cfg.spring_stiffness[0],
            cfg.spring_damping[0], cfg.servo_kp[0], cfg.servo_kd[0], cfg.dt,
        )
        steps = 400
        expected = simulate_lti(a, b, np.ones(steps))
        state = plant_init(cfg, [0.0])
        got = np.empty(steps)
        for t in range(steps):
            state, q = plant_step(state, cfg, [1.0])
            got[t] = q[0]
        assert np.max(np.abs(got - expected)) < 1e-10
        # sanity: response actually tracks the unit step
        assert abs(got[-1] - 1.0) < 1e-3

    def test_oracle_on_random_commands(self, rng):
        cfg = single_joint_config(spring_stiffness=30.0, servo_kd=5.0)
        a, b = single_joint_state_space(
            cfg.motor_inertia[0], cfg.link_inertia[0], cfg.spring_stiffness[0],
            cfg.spring_damping[0], cfg.servo_kp[0], cfg.servo_kd[0], cfg.dt,
        )
        commands = rng.normal(scale=0.5, size=300)
        expected = simulate_lti(a, b, commands)
        state = plant_init(cfg, [0.0])
        got = np.empty(300)
        for t in range(300):
            state, q = plant_step(state, cfg, [commands[t]])
            got[t] = q[0]
        assert np.max(np.abs(got - expected)) < 1e-10

    def test_coupled_joints_pick_up_driven_frequency(self):
        cfg = PlantConfig()
        n_samples = 2000
        t = np.arange(n_samples) * cfg.dt
        freq = 0.8
        data = np.zeros((7, n_samples))
        data[3] = 0.5 * np.sin(2 * np.pi * freq * t)
        out = simulate(cfg, Trajectory(data, cfg.sample_rate))
        spectrum_bins = np.fft.rfftfreq(n_samples, cfg.dt)
        target_bin = np.argmin(np.abs(spectrum_bins - freq))
        for j in (2, 4):  # neighbours of the driven joint
            spec = np.abs(np.fft.rfft(out.data[j]))
            spec[0] = 0.0  # ignore DC
            assert np.linalg.norm(out.data[j]) > 1e-6
            assert np.argmax(spec) == target_bin

    def test_nonfinite_command_rejected(self):
        cfg = PlantConfig()
        state = plant_init(cfg, np.zeros(7))
        bad = np.zeros(7)
        bad[0] = np.nan
        with pytest.raises(ValueError):
            plant_step(state, cfg, bad)

    def test_divergence_guard(self):
        # negative spring damping destabilizes the link subsystem
        cfg = single_joint_config(spring_damping=-5.0, servo_kp=500.0, servo_kd=0.0)
        state = plant_init(cfg, [0.0])
        with pytest.raises(DivergenceError):
            for _ in range(20000):
                state, _ = plant_step(state, cfg, [1.0])


class TestSimulate:
    def test_constant_at_equilibrium(self):
        cfg = PlantConfig(gravity_gain=0.0)
        traj = Trajectory(np.zeros((7, 100)), cfg.sample_rate)
        out = simulate(cfg, traj)
        assert np.all(out.data == 0)

    def test_equals_fold_of_plant_step(self, rng):
        cfg = PlantConfig()
        data = 0.3 * rng.standard_normal((7, 50)).cumsum(axis=1) * 0.05
        traj = Trajectory(data, cfg.sample_rate)
        out = simulate(cfg, traj)
        state = plant_init(cfg, data[:, 0])
        for t in range(50):
            state, q = plant_step(state, cfg, data[:, t])
            assert np.array_equal(q, out.data[:, t])

    def test_sample_count_preserved_at_paper_scale(self):
        cfg = PlantConfig()
        traj = Trajectory(np.zeros((7, 2500)), cfg.sample_rate)
        out = simulate(cfg, traj)
        assert out.n_samples == 2500

    def test_rate_mismatch_rejected(self):
        cfg = PlantConfig()
        with pytest.raises(ValueError):
            simulate(cfg, Trajectory(np.zeros((7, 10)), 50.0))


class TestInvariants:
    def test_determinism_bit_identical(self, rng):
        cfg = PlantConfig()
        data = 0.2 * np.sin(np.linspace(0, 6, 300))[None, :] * np.ones((7, 1))
        traj = Trajectory(data, cfg.sample_rate)
        a = simulate(cfg, traj)
        b = simulate(cfg, traj)
        assert np.array_equal(a.data, b.data)

    def test_strict_properness(self, rng):
        # output before sample s + 1 + delay is independent of command s
        cfg = PlantConfig(delay_steps=2)
        base = 0.1 * rng.standard_normal((7, 60))
        changed = base.copy()
        s = 30
        changed[:, s:] += 0.5
        out_a = simulate(cfg, Trajectory(base, cfg.sample_rate))
        out_b = simulate(cfg, Trajectory(changed, cfg.sample_rate))
        lag = 1 + cfg.delay_steps
        assert np.array_equal(out_a.data[:, : s + lag], out_b.data[:, : s + lag])
        assert not np.allclose(out_a.data[:, s + lag], out_b.data[:, s + lag])

    def test_bounded_over_many_steps(self):
        cfg = PlantConfig()
        state = plant_init(cfg, np.zeros(7))
        lim = cfg.joint_limits[:, 1]
        rng = np.random.default_rng(5)
        for i in range(100000):
            cmd = 0.9 * lim * np.sin(0.01 * i + rng.random(7) * 0.01)
            state, q = plant_step(state, cfg, cmd)
        assert np.all(np.abs(q) < 10.0)

    def test_diagonal_coupling_isolates_joints(self, rng):
        cfg = PlantConfig(coupling=np.eye(7))
        base = 0.1 * rng.standard_normal((7, 80))
        changed = base.copy()
        changed[2] += 0.4
        out_a = simulate(cfg, Trajectory(base, cfg.sample_rate))
        out_b = simulate(cfg, Trajectory(changed, cfg.sample_rate))
        others = [j for j in range(7) if j != 2]
        assert np.array_equal(out_a.data[others], out_b.data[others])
        assert not np.allclose(out_a.data[2], out_b.data[2])

    def test_free_response_decays(self):
        cfg = PlantConfig()
        state = plant_init(cfg, np.full(7, 0.5))
        for _ in range(3000):
            state, q = plant_step(state, cfg, np.zeros(7))
        assert np.max(np.abs(q)) < 1e-3


class TestConfigFile:
    def test_yaml_round_trip(self, tmp_path):
        cfg = PlantConfig(servo_kp=np.linspace(80, 120, 7))
        path = tmp_path / "plant.yaml"
        save_plant_config(cfg, path)
        loaded = load_plant_config(path)
        assert loaded.n_joints == cfg.n_joints
        assert np.array_equal(loaded.servo_kp, cfg.servo_kp)
        assert np.array_equal(loaded.coupling, cfg.coupling)
        assert np.array_equal(loaded.joint_limits, cfg.joint_limits)
        assert loaded.kinematic_params.n_joints == 7

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("n_joints: 3\nbogus_key: 1\n")
        with pytest.raises(ValueError, match="bogus_key"):
            load_plant_config(path)

    def test_validation(self):
        with pytest.raises(ValueError):
            PlantConfig(spring_stiffness=-1.0)
        with pytest.raises(ValueError):
            PlantConfig(coupling=np.eye(7) + 0.1 * np.tri(7, k=-1))  # asymmetric
        with pytest.raises(ValueError):
            PlantConfig(dt=0.0)
