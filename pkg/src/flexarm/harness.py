"""Experiment orchestration: tracking metrics, reference generation, the four
benchmark experiments (sinusoid / random / Cartesian square / teleop replay)
and report emission.

All experiments compare the baseline feedback law against the two feedforward
approaches (forward-model ILC, inverse-model filtering) on held-out references
whose seeds are disjoint from the training campaign.
"""

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .control import ControllerConfig, filter_trajectory, run_closed_loop
from .dataset import CampaignSpec, gen_random, gen_sinusoid
from .errors import ShapeError
from .ilc import IlcConfig, ilc_on_plant, ilc_refine
from .kinematics import (
    fk_position_rotation,
    ik_position,
    rotation_log,
)
from .plant import PlantConfig
from .qp import QpProblem, resolved_velocity_solve
from .seeding import DOMAIN_HELDOUT, child_seed_seq
from .trajectory import Trajectory

BASELINE = "baseline"
APPROACH_ILC = "rnn_ilc_feedback"
APPROACH_BRNN = "brnn_feedback"
APPROACH_ILC_PLANT = "rnn_ilc_feedback_plant_ilc"
APPROACH_BRNN_PLANT = "brnn_feedback_plant_ilc"


@dataclass
class Metrics:
    """Per-row (joint or axis) l2 and l-infinity tracking errors."""

    l2_per_joint: list
    linf_per_joint: list

    def __post_init__(self):
        self.l2_per_joint = [float(v) for v in self.l2_per_joint]
        self.linf_per_joint = [float(v) for v in self.linf_per_joint]


def compute_metrics(q: Trajectory, q_d: Trajectory) -> Metrics:
    """l2 = sqrt(sum_t e^2) and linf = max_t |e| per joint."""
    if q.data.shape != q_d.data.shape:
        raise ShapeError(
            f"trajectory shapes differ: {q.data.shape} vs {q_d.data.shape}"
        )
    err = q.data - q_d.data
    return Metrics(
        l2_per_joint=np.sqrt(np.sum(err * err, axis=1)).tolist(),
        linf_per_joint=np.max(np.abs(err), axis=1).tolist(),
    )


def compute_metrics_arrays(a: np.ndarray, b: np.ndarray) -> Metrics:
    err = np.asarray(a) - np.asarray(b)
    return Metrics(
        l2_per_joint=np.sqrt(np.sum(err * err, axis=1)).tolist(),
        linf_per_joint=np.max(np.abs(err), axis=1).tolist(),
    )


def improvement_pct(baseline: Metrics, other: Metrics):
    """Per-row 100 * (1 - l2_other / l2_baseline); the headline number is the
    unweighted mean over rows."""
    per_row = [
        100.0 * (1.0 - o / b) if b > 0 else 0.0
        for b, o in zip(baseline.l2_per_joint, other.l2_per_joint)
    ]
    return per_row, float(np.mean(per_row))


# -- held-out references -------------------------------------------------------


def heldout_sinusoid(plant_config: PlantConfig, spec: CampaignSpec,
                     n_samples: int, seed_index: int = 0) -> Trajectory:
    """Sinusoid reference drawn from the held-out seed domain."""
    s = CampaignSpec(**{**spec.to_dict(), "samples_per_traj": n_samples})
    seed = child_seed_seq(spec.rng_seed, DOMAIN_HELDOUT, seed_index)
    return gen_sinusoid(s, plant_config.joint_limits, seed)


def heldout_random(plant_config: PlantConfig, spec: CampaignSpec,
                   n_samples: int, seed_index: int = 1) -> Trajectory:
    s = CampaignSpec(**{**spec.to_dict(), "samples_per_traj": n_samples})
    seed = child_seed_seq(spec.rng_seed, DOMAIN_HELDOUT, seed_index)
    return gen_random(s, plant_config.joint_limits, seed)


def cartesian_square_reference(chain, side_m: float = 0.2, z_m: float = 0.2,
                               period_s: float = 20.0, rate: float = 100.0,
                               center_xy=(0.55, 0.0), seed_posture=None,
                               rot_gain: float = 5.0, qdot_max: float = 2.0,
                               feasibility_tol: float = 1e-3):
    """Joint-space reference tracing a square in the x-y plane at fixed z with
    the end-effector orientation held at its starting value.

    Resolved-velocity integration: each sample solves the QP for the joint
    velocity that follows the square at constant speed while an equality block
    pins the angular velocity to a small orientation-correction term. Returns
    (q_d, xyz_ref); raises if the reference cannot stay within the stated
    feasibility tolerances (unreachable geometry).
    """
    n_samples = int(round(period_s * rate))
    dt = 1.0 / rate
    cx, cy = center_xy
    half = side_m / 2.0
    corners = np.array([
        [cx + half, cy + half, z_m],
        [cx - half, cy + half, z_m],
        [cx - half, cy - half, z_m],
        [cx + half, cy - half, z_m],
    ])
    # piecewise-linear, constant-speed closed path through the 4 corners
    xyz_ref = np.empty((3, n_samples))
    per_side = n_samples / 4.0
    for i in range(n_samples):
        side = int(i // per_side) % 4
        frac = (i - side * per_side) / per_side
        a = corners[side]
        b = corners[(side + 1) % 4]
        xyz_ref[:, i] = a + frac * (b - a)

    if seed_posture is None:
        seed_posture = np.array([0.0, -0.6, 0.0, 1.2, 0.0, 0.6, 0.0])[: chain.n_joints]
    q0 = ik_position(chain, xyz_ref[:, 0], seed_posture)
    _, rot0 = fk_position_rotation(chain, q0)

    if side_m == 0.0:
        q_d = Trajectory(np.tile(q0[:, None], (1, n_samples)), rate)
        return q_d, xyz_ref

    from .kinematics import jacobian  # local import keeps module deps tidy

    q = q0.copy()
    out = np.empty((chain.n_joints, n_samples))
    out[:, 0] = q
    for t in range(1, n_samples):
        pos, rot = fk_position_rotation(chain, q)
        v_lin = (xyz_ref[:, t] - pos) / dt
        omega = rot_gain * rotation_log(rot0 @ rot.T)
        problem = QpProblem(
            J=jacobian(chain, q),
            v_d=np.concatenate([omega, v_lin]),
            orientation_lock=True,
            qdot_max=np.full(chain.n_joints, qdot_max),
        )
        sol = resolved_velocity_solve(problem)
        q = q + sol.qdot * dt
        out[:, t] = q

    # feasibility audit of the generated reference
    max_pos_err = 0.0
    max_rot_err = 0.0
    for t in range(n_samples):
        pos, rot = fk_position_rotation(chain, out[:, t])
        max_pos_err = max(max_pos_err, float(np.linalg.norm(pos - xyz_ref[:, t])))
        max_rot_err = max(max_rot_err, float(np.linalg.norm(rotation_log(rot0 @ rot.T))))
    if max_pos_err > feasibility_tol or max_rot_err > 1e-3:
        raise RuntimeError(
            f"square reference infeasible: position dev {max_pos_err:.2e} m, "
            f"orientation dev {max_rot_err:.2e} rad"
        )
    return Trajectory(out, rate), xyz_ref


def joint_to_cartesian(chain, q: Trajectory) -> np.ndarray:
    """(3, N) end-effector positions along a joint trajectory."""
    out = np.empty((3, q.n_samples))
    for t in range(q.n_samples):
        pos, _ = fk_position_rotation(chain, q.data[:, t])
        out[:, t] = pos
    return out


# -- experiments ----------------------------------------------------------------


@dataclass
class ExperimentSpec:
    experiment: str                    # sinusoid | random | cartesian_square | teleop_replay
    plant_config: PlantConfig
    campaign: CampaignSpec
    controller: ControllerConfig
    ilc: IlcConfig
    forward_model: object = None       # RecurrentModel
    inverse_model: object = None       # RecurrentModel
    n_samples: int = 500
    square_period_s: float = 10.0
    with_plant_ilc: bool = False
    seed: int = 0
    out_dir: str = None


@dataclass
class Report:
    experiment: str
    seed: int
    row_labels: list
    controllers: list
    l2: dict          # controller -> list per row
    linf: dict        # controller -> list per row
    improvement: dict  # controller -> {"per_row": [...], "mean": float}

    def metrics(self, controller: str) -> Metrics:
        return Metrics(self.l2[controller], self.linf[controller])


def _reference_for(spec: ExperimentSpec):
    if spec.experiment == "sinusoid":
        q_d = heldout_sinusoid(spec.plant_config, spec.campaign, spec.n_samples)
        return q_d, None
    if spec.experiment == "random":
        q_d = heldout_random(spec.plant_config, spec.campaign, spec.n_samples)
        return q_d, None
    if spec.experiment == "cartesian_square":
        chain = spec.plant_config.kinematic_params
        q_d, xyz = cartesian_square_reference(
            chain, period_s=spec.square_period_s, rate=spec.plant_config.sample_rate
        )
        return q_d, xyz
    raise ValueError(f"unknown experiment {spec.experiment!r}")


def run_experiment(spec: ExperimentSpec) -> Report:
    """Run baseline + both approaches on the experiment's reference.

    For the Cartesian square the reported rows are the x/y/z axes (via forward
    kinematics); otherwise they are the joints.
    """
    if spec.experiment == "teleop_replay":
        from .teleop import teleop_replay_experiment

        return teleop_replay_experiment(spec)

    q_d, _xyz_ref = _reference_for(spec)
    feedback = ControllerConfig(k=spec.controller.k, mode="baseline")
    comp = ControllerConfig(k=spec.controller.k, mode="feedforward")

    runs = {}
    runs[BASELINE] = run_closed_loop(spec.plant_config, q_d, None, feedback)

    feedforwards = {}
    if spec.forward_model is not None:
        u_star, _hist = ilc_refine(spec.forward_model, q_d, spec.ilc)
        feedforwards[APPROACH_ILC] = u_star
        runs[APPROACH_ILC] = run_closed_loop(spec.plant_config, q_d, u_star, comp)
    if spec.inverse_model is not None:
        q_f = filter_trajectory(spec.inverse_model, q_d)
        feedforwards[APPROACH_BRNN] = q_f
        runs[APPROACH_BRNN] = run_closed_loop(spec.plant_config, q_d, q_f, comp)

    if spec.with_plant_ilc and spec.forward_model is not None:
        for name, plant_name in ((APPROACH_ILC, APPROACH_ILC_PLANT),
                                 (APPROACH_BRNN, APPROACH_BRNN_PLANT)):
            if name not in feedforwards:
                continue
            u_more, _ = ilc_on_plant(
                spec.plant_config, q_d, feedforwards[name], spec.ilc, spec.forward_model
            )
            runs[plant_name] = run_closed_loop(spec.plant_config, q_d, u_more, comp)

    if spec.experiment == "cartesian_square":
        chain = spec.plant_config.kinematic_params
        ref_xyz = joint_to_cartesian(chain, q_d)
        row_labels = ["x", "y", "z"]
        all_metrics = {
            name: compute_metrics_arrays(joint_to_cartesian(chain, res.q), ref_xyz)
            for name, res in runs.items()
        }
    else:
        row_labels = [f"joint_{i + 1}" for i in range(q_d.n_joints)]
        all_metrics = {name: compute_metrics(res.q, q_d) for name, res in runs.items()}

    improvements = {}
    for name, metr in all_metrics.items():
        if name == BASELINE:
            continue
        per_row, mean = improvement_pct(all_metrics[BASELINE], metr)
        improvements[name] = {"per_row": per_row, "mean": mean}

    report = Report(
        experiment=spec.experiment,
        seed=spec.seed,
        row_labels=row_labels,
        controllers=list(runs.keys()),
        l2={name: m.l2_per_joint for name, m in all_metrics.items()},
        linf={name: m.linf_per_joint for name, m in all_metrics.items()},
        improvement=improvements,
    )
    if spec.out_dir is not None:
        out = Path(spec.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_trajectory_log(out / f"{spec.experiment}_trajectories.csv", q_d, runs)
        emit_report(report, "json", out)
        emit_report(report, "csv", out)
        emit_report(report, "markdown", out)
    return report


def _write_trajectory_log(path, q_d: Trajectory, runs: dict):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        names = list(runs.keys())
        header = ["t", "joint", "q_d"] + [f"q_{name}" for name in names]
        writer.writerow(header)
        for t in range(q_d.n_samples):
            for j in range(q_d.n_joints):
                row = [t, j, repr(q_d.data[j, t])]
                row += [repr(runs[name].q.data[j, t]) for name in names]
                writer.writerow(row)


# -- report emission -------------------------------------------------------------


def report_to_json(report: Report) -> str:
    return json.dumps(asdict(report), indent=2)


def report_from_json(text: str) -> Report:
    return Report(**json.loads(text))


def emit_report(report: Report, fmt: str, out_dir) -> Path:
    """Write the report as csv / markdown / json; returns the file path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"report_{report.experiment}"
    if fmt == "json":
        path = out_dir / f"{stem}.json"
        path.write_text(report_to_json(report))
    elif fmt == "csv":
        path = out_dir / f"{stem}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["experiment", "controller", "row", "l2", "linf"])
            for ctrl in report.controllers:
                for i, label in enumerate(report.row_labels):
                    writer.writerow([
                        report.experiment, ctrl, label,
                        repr(report.l2[ctrl][i]), repr(report.linf[ctrl][i]),
                    ])
    elif fmt == "markdown":
        path = out_dir / f"{stem}.md"
        lines = [f"# {report.experiment} tracking errors", ""]
        header = ["#", "row"]
        for ctrl in report.controllers:
            header += [f"{ctrl} l2", f"{ctrl} linf"]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for i, label in enumerate(report.row_labels):
            row = [str(i + 1), label]
            for ctrl in report.controllers:
                row += [f"{report.l2[ctrl][i]:.6g}", f"{report.linf[ctrl][i]:.6g}"]
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
        for ctrl, imp in report.improvement.items():
            lines.append(f"- mean l2 improvement of {ctrl} vs baseline: {imp['mean']:.2f} %")
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path
