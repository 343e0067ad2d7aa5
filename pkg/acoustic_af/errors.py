"""
Exception hierarchy for the acoustic AF pipeline.

Every failure raised by the library derives from AcousticAFError so the CLI
and the plugin tools can turn it into an exit code or a response message.
"""

from typing import Optional


class AcousticAFError(Exception):
    """Base class for all pipeline errors"""


class ConfigurationError(AcousticAFError):
    """A configuration value violates an invariant"""

    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        message = f"configuration invariant violated: {invariant}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class DegenerateSignalError(AcousticAFError):
    """The signal carries no usable content (no carrier, zero energy, zero variance)"""


class UndefinedSimilarityError(AcousticAFError):
    """Cosine similarity requested for a zero-norm sequence"""


class InsufficientChannelsError(AcousticAFError):
    """Fewer valid channels than the metric needs"""


class SelectionError(AcousticAFError):
    """No channel can be selected"""


class QualityGateError(AcousticAFError):
    """A record failed the quality gate and the caller did not force it through"""


class ContractError(AcousticAFError):
    """Input shape or rate does not match the stage contract"""


class TrainingDivergedError(AcousticAFError):
    """Loss became NaN or infinite"""


class ModelFormatError(AcousticAFError):
    """A model file cannot be read"""


class CorruptModelError(ModelFormatError):
    """Model file is truncated or its contents are inconsistent"""


class ModelVersionError(ModelFormatError):
    """Model file carries an unknown format version"""


class ScenarioParseError(AcousticAFError):
    """A scenario or config file is malformed"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
