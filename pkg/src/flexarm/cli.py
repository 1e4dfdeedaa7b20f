"""Command-line interface.

Subcommands: collect, train-forward, train-inverse, refine, evaluate, report,
serve, replay. Global flags: --config (plant YAML), --seed, --out, --profile
{desk|paper}. Exits 0 on success; failures print one JSON error object to
stderr and exit nonzero.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .control import ControllerConfig
from .dataset import (
    collect_campaign,
    export_csv,
    forward_arrays,
    inverse_arrays,
    load_dataset,
    manipulability_histogram,
    save_dataset,
)
from .harness import ExperimentSpec, emit_report, report_from_json, run_experiment
from .ilc import ilc_refine
from .model import (
    BIDIRECTIONAL,
    UNIDIRECTIONAL,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .plant import PlantConfig, load_plant_config
from .profiles import get_profile
from .teleop import (
    TeleopConfig,
    load_command_log,
    load_teleop_config,
    replay,
    serve,
    synth_command_log,
)
from .trajectory import Trajectory
from .training import train


def _load_plant(args) -> PlantConfig:
    if args.config:
        return load_plant_config(args.config)
    return PlantConfig()


def traj_to_csv(traj: Trajectory, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "joint", "value"])
        for t in range(traj.n_samples):
            for j in range(traj.n_joints):
                writer.writerow([t, j, repr(traj.data[j, t])])


def traj_from_csv(path, sample_rate: float = 100.0) -> Trajectory:
    rows = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows[(int(row["t"]), int(row["joint"]))] = float(row["value"])
    n = max(j for _, j in rows) + 1
    num = max(t for t, _ in rows) + 1
    data = np.zeros((n, num))
    for (t, j), v in rows.items():
        data[j, t] = v
    return Trajectory(data, sample_rate)


def cmd_collect(args):
    profile = get_profile(args.profile, args.seed)
    plant = _load_plant(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    pairs = collect_campaign(plant, profile.campaign)
    save_dataset(pairs, profile.campaign, plant, out / "dataset.bin")
    if plant.kinematic_params is not None:
        edges, counts = manipulability_histogram(pairs, plant.kinematic_params)
        with open(out / "manipulability_hist.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for i, c in enumerate(counts):
                writer.writerow([repr(edges[i]), repr(edges[i + 1]), int(c)])
    if args.csv:
        export_csv(pairs, out / "dataset.csv")
    print(f"collected {len(pairs)} trajectory pairs in {time.perf_counter() - t0:.1f}s "
          f"-> {out / 'dataset.bin'}")
    return 0


def _train_common(args, direction):
    profile = get_profile(args.profile, args.seed)
    pairs, spec, _header = load_dataset(args.data)
    if direction == UNIDIRECTIONAL:
        inputs, targets = forward_arrays(pairs, profile.window_len)
        depth = profile.forward_depth
        cfg = profile.train_forward
        name = "forward_model.ckpt"
    else:
        inputs, targets = inverse_arrays(pairs, profile.window_len)
        depth = profile.inverse_depth
        cfg = profile.train_inverse
        name = "inverse_model.ckpt"
    n = pairs[0].q_d.n_joints
    model = build_model(direction, n, profile.window_len,
                        hidden_size=profile.hidden_size, depth=depth, seed=args.seed)
    t0 = time.perf_counter()
    trained, history = train(model, inputs, targets, cfg)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_bytes(save_checkpoint(trained))
    (out / name.replace(".ckpt", "_history.json")).write_text(json.dumps(history, indent=2))
    final = history[-1] if history else {}
    print(f"trained {direction} model on {inputs.shape[0]} samples in {elapsed:.0f}s; "
          f"final val mse {final.get('val_mse', float('nan')):.3e} -> {out / name}")
    return 0


def cmd_train_forward(args):
    return _train_common(args, UNIDIRECTIONAL)


def cmd_train_inverse(args):
    return _train_common(args, BIDIRECTIONAL)


def cmd_refine(args):
    profile = get_profile(args.profile, args.seed)
    plant = _load_plant(args)
    model = load_checkpoint(Path(args.model).read_bytes(), expect_direction=UNIDIRECTIONAL)
    if args.trajectory:
        q_d = traj_from_csv(args.trajectory, plant.sample_rate)
    else:
        from .harness import heldout_sinusoid

        q_d = heldout_sinusoid(plant, profile.campaign, profile.experiment_samples)
    cfg = profile.ilc
    cfg.joint_limits = plant.joint_limits
    t0 = time.perf_counter()
    u_star, history = ilc_refine(model, q_d, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj_to_csv(u_star, out / "refined_input.csv")
    (out / "refine_history.json").write_text(json.dumps(history, indent=2))
    print(f"ILC refined in {time.perf_counter() - t0:.1f}s: predicted l2 "
          f"{history[0]:.4f} -> {history[-1]:.4f} over {len(history) - 1} iterations")
    return 0


def cmd_evaluate(args):
    profile = get_profile(args.profile, args.seed)
    plant = _load_plant(args)
    forward = load_checkpoint(Path(args.forward).read_bytes(),
                              expect_direction=UNIDIRECTIONAL) if args.forward else None
    inverse = load_checkpoint(Path(args.inverse).read_bytes(),
                              expect_direction=BIDIRECTIONAL) if args.inverse else None
    cfg = profile.ilc
    cfg.joint_limits = plant.joint_limits
    experiments = args.experiments.split(",")
    for name in experiments:
        spec = ExperimentSpec(
            experiment=name.strip(),
            plant_config=plant,
            campaign=profile.campaign,
            controller=ControllerConfig(k=profile.feedback_gain),
            ilc=cfg,
            forward_model=forward,
            inverse_model=inverse,
            n_samples=profile.experiment_samples,
            square_period_s=profile.square_period_s,
            with_plant_ilc=args.with_plant_ilc,
            seed=args.seed,
            out_dir=args.out,
        )
        t0 = time.perf_counter()
        report = run_experiment(spec)
        elapsed = time.perf_counter() - t0
        print(f"[{name}] done in {elapsed:.0f}s")
        for ctrl, imp in report.improvement.items():
            print(f"  {ctrl}: mean l2 improvement {imp['mean']:.1f} %")
    return 0


def cmd_report(args):
    report = report_from_json(Path(args.input).read_text())
    path = emit_report(report, args.format, args.out)
    print(f"wrote {path}")
    return 0


def cmd_serve(args):
    if args.teleop_config:
        config = load_teleop_config(args.teleop_config)
    else:
        plant = _load_plant(args)
        model = None
        if args.inverse:
            model = load_checkpoint(Path(args.inverse).read_bytes(),
                                    expect_direction=BIDIRECTIONAL)
        config = TeleopConfig(plant_config=plant, inverse_model=model, port=args.port)
    serve(config)
    return 0


def cmd_replay(args):
    plant = _load_plant(args)
    model = load_checkpoint(Path(args.inverse).read_bytes(),
                            expect_direction=BIDIRECTIONAL)
    config = TeleopConfig(plant_config=plant, inverse_model=model,
                          window_len=model.window_len)
    if args.log:
        log = load_command_log(args.log)
    else:
        log = synth_command_log(args.seed, args.ticks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    telemetry = replay(config, log, args.ticks, comp_on=not args.baseline)
    with open(out / "telemetry.jsonl", "w") as fh:
        for msg in telemetry:
            fh.write(json.dumps(msg) + "\n")
    final = telemetry[-1]
    print(f"replayed {args.ticks} ticks (comp_on={not args.baseline}); "
          f"final windowed l2 {final['err_l2_window']:.4f} -> {out / 'telemetry.jsonl'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flexarm",
        description="Learned feedforward compensation testbed for a simulated "
                    "flexible-joint arm",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="plant config YAML", default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--profile", choices=["desk", "paper"], default="desk")

    p = sub.add_parser("collect", help="run the excitation campaign")
    common(p)
    p.add_argument("--csv", action="store_true", help="also export dataset.csv")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train-forward", help="train the forward-dynamics model")
    common(p)
    p.add_argument("--data", required=True, help="dataset.bin from collect")
    p.set_defaults(func=cmd_train_forward)

    p = sub.add_parser("train-inverse", help="train the inverse-dynamics model")
    common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_train_inverse)

    p = sub.add_parser("refine", help="ILC-refine an input trajectory offline")
    common(p)
    p.add_argument("--model", required=True, help="forward model checkpoint")
    p.add_argument("--trajectory", help="desired trajectory CSV (t,joint,value); "
                                        "default: held-out sinusoid")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("evaluate", help="run tracking experiments and reports")
    common(p)
    p.add_argument("--forward", help="forward model checkpoint")
    p.add_argument("--inverse", help="inverse model checkpoint")
    p.add_argument("--experiments", default="sinusoid,random,cartesian_square")
    p.add_argument("--with-plant-ilc", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="re-emit a report JSON in another format")
    common(p)
    p.add_argument("--input", required=True, help="report JSON file")
    p.add_argument("--format", choices=["csv", "markdown", "json"], default="markdown")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the websocket teleop service")
    common(p, out_required=False)
    p.add_argument("--teleop-config", help="service config YAML")
    p.add_argument("--inverse", help="inverse model checkpoint")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="headless replay of a teleop command log")
    common(p)
    p.add_argument("--inverse", required=True)
    p.add_argument("--log", help="command log (JSON lines); default: synthetic")
    p.add_argument("--ticks", type=int, default=600)
    p.add_argument("--baseline", action="store_true",
                   help="replay with compensation off")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI error funnel
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
