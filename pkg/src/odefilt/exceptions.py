"""Exception types shared across the package."""


class FilterDivergedError(RuntimeError):
    """Forward solve produced a non-finite state.

    Carries the index of the offending filter step so callers can report
    where the blow-up happened.
    """

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"filter diverged at step {step}")


class CalibrationError(RuntimeError):
    """Diffusion-scale calibration hit a non-positive innovation variance."""


class ContractError(ValueError):
    """Shapes or values violate an interface contract."""
