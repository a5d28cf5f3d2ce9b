"""Exception hierarchy shared by all simulator stages."""


class SkylinkError(Exception):
    """Base class for simulator errors."""


class ConfigurationError(SkylinkError, ValueError):
    pass


class DomainError(SkylinkError, ValueError):
    pass


class InsufficientDataError(SkylinkError, ValueError):
    pass


class AlignmentError(SkylinkError, ValueError):
    pass


class LengthMismatchError(SkylinkError, ValueError):
    pass


class SequencingError(SkylinkError, ValueError):
    """Events delivered out of time order."""


class ReconstructionError(SkylinkError):
    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class ProtocolAbort(SkylinkError):
    """A protocol stage refused to continue; no key may be produced."""


class ProtocolViolationError(ProtocolAbort):
    """Transmitter left a quantum pulse above single-photon level."""


class ReconciliationError(ProtocolAbort):
    pass


class KeyDepletionError(ProtocolAbort):
    """Authentication secret exhausted."""


class ScenarioValidationError(SkylinkError, ValueError):
    """Scenario file failed validation; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
