"""Joint trajectories and end-effector poses.

A Trajectory is the universal currency of the testbed: desired trajectories,
plant responses, feedforward commands and ILC iterates all share this shape
(n_joints x n_samples at a fixed sample rate).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class Trajectory:
    """n_joints x N joint-position samples (rad) at a fixed rate (Hz)."""

    data: np.ndarray
    sample_rate: float = 100.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ShapeError(f"trajectory data must be 2-d, got shape {self.data.shape}")
        if self.data.shape[1] < 1:
            raise ShapeError("trajectory must contain at least one sample")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("trajectory contains non-finite values")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_joints(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    def copy(self) -> "Trajectory":
        return Trajectory(self.data.copy(), self.sample_rate)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass
class Pose:
    """End-effector position (m) and orientation as a unit quaternion (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0])
    )

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(self.orientation)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {norm} deviates from 1 by more than 1e-9")
