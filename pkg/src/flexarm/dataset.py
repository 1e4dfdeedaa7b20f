"""Excitation campaigns, window samples and dataset persistence.

A campaign drives the simulated plant with a mix of random (low-pass filtered
noise) and sinusoidal joint trajectories and records the responses. Window
samples pair a T-step input slice with a single-step target:

  forward model:  input q_d(t .. t+T-1), target q(t+T)      -> N - T samples
  inverse model:  input q(t-T/2 .. t+T/2-1), target q_d(t)  -> N - T + 1 samples
"""

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import DatasetFormatError, ShapeError
from .kinematics import manipulability
from .plant import PlantConfig, config_fingerprint, simulate
from .seeding import DOMAIN_CAMPAIGN, child_seed_seq
from .trajectory import Trajectory

DATASET_MAGIC = b"FXDS"
DATASET_VERSION = 1


@dataclass
class WindowSample:
    input: np.ndarray   # (n, T)
    target: np.ndarray  # (n,)

    def __post_init__(self):
        self.input = np.asarray(self.input, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.input.ndim != 2 or self.target.shape != (self.input.shape[0],):
            raise ShapeError("WindowSample needs input (n, T) and target (n,)")


def stack_samples(samples):
    """(B, n, T) inputs and (B, n) targets from a WindowSample list."""
    inputs = np.stack([s.input for s in samples])
    targets = np.stack([s.target for s in samples])
    return inputs, targets


@dataclass
class CampaignSpec:
    n_random: int = 100
    n_sinusoid: int = 400
    samples_per_traj: int = 2500
    sample_rate: float = 100.0
    amplitude_range: tuple = (0.1, 0.5)    # rad, per joint, fraction of nothing: absolute
    frequency_range: tuple = (0.1, 1.0)    # Hz (sinusoid trajectories)
    cutoff_range: tuple = (0.5, 2.0)       # Hz (random-trajectory low-pass)
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_random < 0 or self.n_sinusoid < 0:
            raise ValueError("trajectory counts must be >= 0")
        if self.samples_per_traj < 1:
            raise ValueError("samples_per_traj must be >= 1")

    @property
    def n_total(self) -> int:
        return self.n_random + self.n_sinusoid

    def to_dict(self) -> dict:
        return {
            "n_random": self.n_random,
            "n_sinusoid": self.n_sinusoid,
            "samples_per_traj": self.samples_per_traj,
            "sample_rate": self.sample_rate,
            "amplitude_range": list(self.amplitude_range),
            "frequency_range": list(self.frequency_range),
            "cutoff_range": list(self.cutoff_range),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d) -> "CampaignSpec":
        d = dict(d)
        for key in ("amplitude_range", "frequency_range", "cutoff_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class TrajectoryPair:
    q_d: Trajectory  # commanded
    q: Trajectory    # plant response

    def __post_init__(self):
        if self.q_d.data.shape != self.q.data.shape:
            raise ShapeError("q_d and q must have equal shapes")
        if self.q_d.sample_rate != self.q.sample_rate:
            raise ValueError("q_d and q must share a sample rate")


def _draw_center_amplitude(rng, limits, amp_range):
    """Per-joint amplitude and center such that c +- A stays within limits."""
    n = limits.shape[0]
    amp = rng.uniform(amp_range[0], amp_range[1], size=n)
    span = limits[:, 1] - limits[:, 0]
    amp = np.minimum(amp, 0.45 * span)  # infeasible draws are clipped, not rejected
    lo = limits[:, 0] + amp
    hi = limits[:, 1] - amp
    center = lo + rng.random(n) * (hi - lo)
    return center, amp


def gen_sinusoid(spec: CampaignSpec, limits: np.ndarray, seed) -> Trajectory:
    """Per-joint sinusoid c_i + A_i sin(2 pi f_i t + phi_i) within limits."""
    rng = np.random.default_rng(seed)
    n = limits.shape[0]
    center, amp = _draw_center_amplitude(rng, limits, spec.amplitude_range)
    freq = rng.uniform(*spec.frequency_range, size=n)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n)
    t = np.arange(spec.samples_per_traj) / spec.sample_rate
    data = center[:, None] + amp[:, None] * np.sin(
        2.0 * np.pi * freq[:, None] * t[None, :] + phase[:, None]
    )
    return Trajectory(data, spec.sample_rate)


def gen_random(spec: CampaignSpec, limits: np.ndarray, seed,
               noise_scale: float = 1.0) -> Trajectory:
    """Low-pass filtered white noise, rescaled into the drawn amplitude band.

    Filtering is zero-phase (4th-order Butterworth in second-order sections,
    designed at 0.8x the drawn cutoff) over a padded noise sequence whose edge
    transients are trimmed, so the spectral energy above the cutoff stays well
    under 5 % of the total.
    """
    rng = np.random.default_rng(seed)
    n = limits.shape[0]
    center, amp = _draw_center_amplitude(rng, limits, spec.amplitude_range)
    cutoff = rng.uniform(*spec.cutoff_range)
    if noise_scale == 0.0 or spec.samples_per_traj < 12:
        rng.normal(size=(n, spec.samples_per_traj))  # keep the stream aligned
        return Trajectory(np.tile(center[:, None], (1, spec.samples_per_traj)),
                          spec.sample_rate)
    pad = int(round(3.0 * spec.sample_rate / cutoff))
    noise = rng.normal(scale=noise_scale,
                       size=(n, spec.samples_per_traj + 2 * pad))
    sos = butter(4, 0.8 * cutoff / (spec.sample_rate / 2.0), output="sos")
    smooth = sosfiltfilt(sos, noise, axis=1)[:, pad:pad + spec.samples_per_traj]
    smooth = smooth - smooth.mean(axis=1, keepdims=True)
    peak = np.abs(smooth).max(axis=1)
    peak[peak == 0.0] = 1.0
    data = center[:, None] + amp[:, None] * smooth / peak[:, None]
    return Trajectory(data, spec.sample_rate)


def campaign_trajectories(spec: CampaignSpec, limits: np.ndarray):
    """The campaign's command trajectories (randoms first, then sinusoids)."""
    out = []
    for i in range(spec.n_random):
        seed = child_seed_seq(spec.rng_seed, DOMAIN_CAMPAIGN, i)
        out.append(gen_random(spec, limits, seed))
    for i in range(spec.n_sinusoid):
        seed = child_seed_seq(spec.rng_seed, DOMAIN_CAMPAIGN, spec.n_random + i)
        out.append(gen_sinusoid(spec, limits, seed))
    return out


def collect_campaign(plant_config: PlantConfig, spec: CampaignSpec):
    """Drive the plant with every campaign trajectory; returns TrajectoryPair list."""
    if abs(spec.sample_rate - plant_config.sample_rate) > 1e-9:
        raise ValueError("campaign sample rate must match the plant rate")
    pairs = []
    for idx, q_d in enumerate(campaign_trajectories(spec, plant_config.joint_limits)):
        try:
            q = simulate(plant_config, q_d)
        except Exception as exc:
            raise RuntimeError(f"plant diverged on campaign trajectory {idx}: {exc}") from exc
        pairs.append(TrajectoryPair(q_d=q_d, q=q))
    return pairs


# -- windowing ----------------------------------------------------------------


def make_forward_samples(pair: TrajectoryPair, window_len: int):
    """Forward-dynamics samples: input q_d(t..t+T-1), target q(t+T); N - T of them."""
    n_samples = pair.q_d.n_samples
    if n_samples <= window_len:
        raise ValueError(f"need more than T={window_len} samples, got {n_samples}")
    qd = pair.q_d.data
    q = pair.q.data
    return [
        WindowSample(qd[:, t:t + window_len], q[:, t + window_len])
        for t in range(n_samples - window_len)
    ]


def make_inverse_samples(pair: TrajectoryPair, window_len: int):
    """Inverse-dynamics samples: input q(t-T/2..t+T/2-1), target q_d(t); N - T + 1."""
    if window_len % 2 != 0:
        raise ValueError("inverse windows need an even T")
    n_samples = pair.q.n_samples
    if n_samples < window_len:
        raise ValueError(f"need at least T={window_len} samples, got {n_samples}")
    half = window_len // 2
    q = pair.q.data
    qd = pair.q_d.data
    return [
        WindowSample(q[:, t - half:t + half], qd[:, t])
        for t in range(half, n_samples - half + 1)
    ]


def forward_arrays(pairs, window_len: int):
    """All forward samples of a campaign as (B, n, T) / (B, n) arrays."""
    xs, ys = [], []
    for pair in pairs:
        qd, q = pair.q_d.data, pair.q.data
        n_samples = qd.shape[1]
        if n_samples <= window_len:
            raise ValueError(f"need more than T={window_len} samples, got {n_samples}")
        windows = np.lib.stride_tricks.sliding_window_view(
            qd, window_len, axis=1
        )  # (n, N-T+1, T)
        xs.append(windows[:, : n_samples - window_len].transpose(1, 0, 2))
        ys.append(q[:, window_len:].T)
    return np.ascontiguousarray(np.concatenate(xs)), np.ascontiguousarray(np.concatenate(ys))


def inverse_arrays(pairs, window_len: int):
    """All inverse samples of a campaign as (B, n, T) / (B, n) arrays."""
    if window_len % 2 != 0:
        raise ValueError("inverse windows need an even T")
    half = window_len // 2
    xs, ys = [], []
    for pair in pairs:
        qd, q = pair.q_d.data, pair.q.data
        n_samples = qd.shape[1]
        if n_samples < window_len:
            raise ValueError(f"need at least T={window_len} samples, got {n_samples}")
        windows = np.lib.stride_tricks.sliding_window_view(q, window_len, axis=1)
        xs.append(windows.transpose(1, 0, 2))
        ys.append(qd[:, half: n_samples - half + 1].T)
    return np.ascontiguousarray(np.concatenate(xs)), np.ascontiguousarray(np.concatenate(ys))


# -- persistence ---------------------------------------------------------------


def save_dataset(pairs, spec: CampaignSpec, plant_config: PlantConfig, path=None) -> bytes:
    """Container: magic, version, JSON header, packed float64 blocks per pair."""
    header = {
        "version": DATASET_VERSION,
        "spec": spec.to_dict(),
        "plant_fingerprint": config_fingerprint(plant_config),
        "n_pairs": len(pairs),
        "n_joints": pairs[0].q_d.n_joints if pairs else plant_config.n_joints,
        "samples_per_traj": pairs[0].q_d.n_samples if pairs else 0,
        "sample_rate": pairs[0].q_d.sample_rate if pairs else spec.sample_rate,
    }
    header_bytes = json.dumps(header).encode("utf-8")
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(np.uint32(DATASET_VERSION).tobytes())
    buf.write(np.uint32(len(header_bytes)).tobytes())
    buf.write(header_bytes)
    for pair in pairs:
        buf.write(np.ascontiguousarray(pair.q_d.data).tobytes())
        buf.write(np.ascontiguousarray(pair.q.data).tobytes())
    blob = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


def load_dataset(source):
    """Inverse of save_dataset; accepts bytes or a path.

    Returns (pairs, spec, header dict).
    """
    data = Path(source).read_bytes() if not isinstance(source, (bytes, bytearray)) else bytes(source)
    if len(data) < 12 or data[:4] != DATASET_MAGIC:
        raise DatasetFormatError("not a dataset container (bad magic)")
    version = int(np.frombuffer(data[4:8], dtype=np.uint32)[0])
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    header_len = int(np.frombuffer(data[8:12], dtype=np.uint32)[0])
    if len(data) < 12 + header_len:
        raise DatasetFormatError("truncated dataset header")
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"corrupt dataset header: {exc}") from exc
    n = int(header["n_joints"])
    n_samples = int(header["samples_per_traj"])
    rate = float(header["sample_rate"])
    block = n * n_samples * 8
    offset = 12 + header_len
    pairs = []
    for i in range(int(header["n_pairs"])):
        if offset + 2 * block > len(data):
            raise DatasetFormatError(f"truncated dataset: pair {i} incomplete")
        qd = np.frombuffer(data[offset:offset + block], dtype=np.float64).reshape(n, n_samples)
        offset += block
        q = np.frombuffer(data[offset:offset + block], dtype=np.float64).reshape(n, n_samples)
        offset += block
        pairs.append(TrajectoryPair(
            q_d=Trajectory(qd.copy(), rate), q=Trajectory(q.copy(), rate)
        ))
    if offset != len(data):
        raise DatasetFormatError("trailing bytes after dataset payload")
    spec = CampaignSpec.from_dict(header["spec"])
    return pairs, spec, header


def export_csv(pairs, path):
    """Inspection CSV: traj_id, t, joint, q_d, q."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["traj_id", "t", "joint", "q_d", "q"])
        for traj_id, pair in enumerate(pairs):
            qd, q = pair.q_d.data, pair.q.data
            for t in range(qd.shape[1]):
                for j in range(qd.shape[0]):
                    writer.writerow([traj_id, t, j, repr(qd[j, t]), repr(q[j, t])])


def manipulability_histogram(pairs, chain, bins: int = 40, stride: int = 10):
    """Histogram of manipulability over the collected responses (Fig.-4 style
    coverage report). Returns (bin_edges, counts)."""
    values = []
    for pair in pairs:
        for t in range(0, pair.q.n_samples, stride):
            values.append(manipulability(chain, pair.q.data[:, t]))
    values = np.asarray(values)
    counts, edges = np.histogram(values, bins=bins)
    return edges, counts
