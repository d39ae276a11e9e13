"""Exception types shared across deskgrasp modules."""


class DegenerateGrasp(ValueError):
    """Contact points coincide (closing axis shorter than 1e-6 m)."""


class ShapeMismatch(ValueError):
    """Array shapes incompatible with the requested tape operation."""


class NonScalarRoot(ValueError):
    """backward() called on a non-scalar node."""


class DoubleBackward(RuntimeError):
    """backward() called twice on a tape without an adjoint reset."""


class NeighborhoodTooLarge(ValueError):
    """Requested more neighbors than the cloud contains."""


class EmptySet(ValueError):
    """Point-set loss called with an empty operand."""


class EmptyGroundTruth(ValueError):
    """No positive ground-truth grasps available."""


class EmptyPredictions(ValueError):
    """Metric computation called with no predictions."""


class LengthMismatch(ValueError):
    """Paired sequences have different lengths."""


class TooManyPoints(ValueError):
    """Asked to select more points than exist."""


class InvalidDimensions(ValueError):
    """Shape dimensions outside the allowed range."""


class EmptyView(RuntimeError):
    """No surface region faces the camera."""


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimization."""
