"""Exception types shared across the package."""


class FlexArmError(Exception):
    """Base class for package errors."""


class JointLimitError(FlexArmError, ValueError):
    """A joint position or setpoint violates the configured limits."""

    def __init__(self, joint, value, lo, hi):
        self.joint = joint
        self.value = value
        super().__init__(
            f"joint {joint}: value {value:.6g} outside limits [{lo:.6g}, {hi:.6g}]"
        )


class DivergenceError(FlexArmError, RuntimeError):
    """Simulated plant state blew past the divergence guard."""


class ShapeError(FlexArmError, ValueError):
    """Array arguments have inconsistent shapes."""


class CheckpointError(FlexArmError, ValueError):
    """Checkpoint bytes are corrupt, truncated, or topology-incompatible."""


class DatasetFormatError(FlexArmError, ValueError):
    """Dataset container bytes are corrupt or version-incompatible."""


class QpInfeasibleError(FlexArmError, RuntimeError):
    """QP constraints are inconsistent (no feasible point found)."""
