"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid quantization, layer, or core configuration."""


class ShapeError(ValueError):
    """Tensor shapes do not match the layer configuration."""


class ScheduleError(RuntimeError):
    """A schedule broke one of its structural invariants (planning bug)."""


class RegisterError(RuntimeError):
    """Boundary register overflow or underflow."""


class DescriptorError(ValueError):
    """Malformed network descriptor or tensor file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
