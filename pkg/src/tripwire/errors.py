"""Exception hierarchy shared by every tripwire component."""

from __future__ import annotations


class TripwireError(Exception):
    """Base class for all errors raised by this package."""

    code = "tripwire-error"


class ValidationError(TripwireError, ValueError):
    code = "validation-error"


class DuplicateError(ValidationError):
    code = "duplicate-id"


class NotFoundError(TripwireError, LookupError):
    code = "not-found"

    def __str__(self) -> str:
        # LookupError would repr() the message otherwise
        return str(self.args[0]) if self.args else self.code


class DeploymentError(TripwireError):
    code = "deployment-error"


class CapabilityMismatchError(DeploymentError):
    code = "capability-mismatch"


class IneligibleTargetError(DeploymentError):
    code = "ineligible-target"


class StageError(TripwireError):
    """A run stage failed; ``stage`` names where."""

    code = "stage-error"

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
