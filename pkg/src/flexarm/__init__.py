"""flexarm: desk-scale testbed for learned feedforward compensation on a
simulated flexible-joint manipulator."""

__version__ = "0.1.0"

from .trajectory import Pose, Trajectory  # noqa: F401
