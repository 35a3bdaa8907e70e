"""
Error hierarchy for sdmseg
Every failure carries the process exit code the command line reports
"""


class SdmsegError(Exception):
    """Runtime failure (exit code 2)"""

    exit_code = 2


class ValidationError(SdmsegError, ValueError):
    """Invalid input, configuration or file (exit code 1)"""

    exit_code = 1


class ConfigurationError(ValidationError):
    """Invalid configuration value; ``key`` names the offending setting"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class ShapeMismatchError(ValidationError):
    pass


class VolumeFormatError(ValidationError):
    """Malformed volume header or payload; ``reason`` is a short code"""

    def __init__(self, path, reason: str, detail: str = ''):
        self.path = str(path)
        self.reason = reason
        message = f"{self.path}: {reason}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class ShapeOutOfBoundsError(ValidationError):
    pass


class NoForegroundError(ValidationError):
    pass


class UndefinedSurfaceMetricError(ValidationError):
    pass


class MissingVolumeError(SdmsegError):
    pass


class NonFiniteLossError(SdmsegError):
    """Training produced a NaN or infinite loss"""

    def __init__(self, iteration: int, losses: dict):
        self.iteration = iteration
        self.losses = losses
        super().__init__(f"non-finite loss at iteration {iteration}: {losses}")
