"""Exception hierarchy shared across the pipeline.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented exit statuses (1 validation, 2 I/O, 3 numerical).
"""


class CrustProbeError(Exception):
    exit_code = 1


class ValidationError(CrustProbeError, ValueError):
    """Invalid argument, configuration, or violated input contract."""

    exit_code = 1


class StateError(ValidationError):
    """Operation invoked before its required state exists (e.g. unfitted scaler)."""


class ExtrapolationError(ValidationError):
    """Timestamp outside the navigation track; silent extrapolation is refused."""


class EdgeTruncationError(ValidationError):
    """Tile window would fall outside the echogram bounds."""


class FormatError(CrustProbeError, IOError):
    """Corrupt or structurally invalid file content."""

    exit_code = 2


class NumericalError(CrustProbeError):
    exit_code = 3


class NoSeafloorError(NumericalError):
    """No seafloor return could be located in a ping."""


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training loss became non-finite at epoch {epoch}")
