"""Error messages and exception types."""

ERROR_LABEL_RANGE: str = "Label {label} outside [0, {labels})"
ERROR_PIXEL_RANGE: str = "Pixel {pixel} outside grid {height}x{width}"
ERROR_NON_FINITE: str = "{name} contains non-finite entries"
ERROR_NEGATIVE: str = "{name} must be non-negative"
ERROR_TEMPERATURE: str = "Temperature must be positive, got {value}"
ERROR_FEW_LABELS: str = "Inference needs at least 2 labels, got {labels}"
ERROR_SHAPE_MISMATCH: str = "{name} has shape {actual}, expected {expected}"
ERROR_TAPE_MISMATCH: str = "Gradient shape {actual} does not match the recorded forward pass {expected}"
ERROR_NO_VALID_PIXELS: str = "No valid pixels to average over"
ERROR_ENUMERATION_TOO_LARGE: str = "Enumeration of {count} labelings exceeds the limit of {limit}"
ERROR_NON_FINITE_EVALUATION: str = "Function evaluation at a perturbed point is not finite"
ERROR_NON_FINITE_LOSS: str = "Loss became {loss} at step {step}"
ERROR_MAX_DISP: str = "Maximum disparity {max_disp} must be in [1, {width})"
ERROR_RADIUS: str = "Flow radius {radius} must be in [1, {limit})"
ERROR_IMAGE_TOO_SMALL: str = "Image {height}x{width} is too small for {levels} pyramid levels"
ERROR_LEVEL_DIVISIBILITY: str = "{name}={value} must be divisible by {factor} for {levels} pyramid levels"
ERROR_COARSE_LABELS: str = "{name}={value} leaves fewer than 2 labels on the coarsest of {levels} pyramid levels"
ERROR_UPSAMPLE_SHAPE: str = "Cannot upsample {coarse} to {fine}"
ERROR_CENSUS_WINDOW: str = "Census window must be odd and at least 3, got {window}"
ERROR_BAD_FILE: str = "{path}: {reason}"
ERROR_MISSING_ROW: str = "{path}: missing row {row} of {rows}"
ERROR_UNKNOWN_SUITE: str = "Unknown check suite {name!r}; choose from {choices}"
ERROR_COEFFS: str = "Redistribution coefficients must lie in [0, 1]"
ERROR_ITERATIONS: str = "{name} needs at least one iteration, got {iters}"
ERROR_HUBER_DELTA: str = "Huber delta must be positive, got {delta}"
ERROR_REFINE_WINDOW: str = "Refinement window must be at least 1, got {tau}"
ERROR_NO_LEVELS: str = "Deep supervision needs at least one level"
ERROR_NO_SAMPLES: str = "Training needs at least one sample"


class BPLayerError(Exception):
    """Base class of all errors raised by bp_layer."""


class InputError(BPLayerError, ValueError):
    """Invalid user input: bad files, shapes or parameter values."""


class NoValidPixelsError(InputError):
    """A loss or metric was asked to average over an empty mask."""

    def __init__(self, message: str = ERROR_NO_VALID_PIXELS) -> None:
        super().__init__(message)


class CheckFailure(BPLayerError):
    """A property suite found a failing case."""


class NonFiniteLossError(BPLayerError, ArithmeticError):
    """Training produced a NaN or infinite loss."""
