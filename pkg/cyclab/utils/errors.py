"""Exception hierarchy shared by every cyclab module"""
from typing import Optional


__all__ = [
    'LabError', 'DimensionError', 'NumericError', 'ContractError', 'EmptyBasisError',
    'DomainError', 'GenerationError', 'SamplingError', 'HookError', 'TrainingError',
    'ProbeTrainingError', 'UndefinedScoreError', 'ConfigError', 'ArtifactError', 'ResolutionError'
]


class LabError(Exception):
    """Base class of all errors raised by cyclab"""
    exit_code: int = 1


class DimensionError(LabError):
    pass


class NumericError(LabError):
    exit_code = 4


class ContractError(LabError):
    pass


class EmptyBasisError(LabError):
    pass


class DomainError(LabError):
    pass


class GenerationError(LabError):
    pass


class SamplingError(LabError):
    pass


class HookError(LabError):
    pass


class TrainingError(LabError):
    """Raised when training diverges. Keeps the path of the last good checkpoint (if any)."""
    exit_code = 4

    def __init__(self, message: str, checkpoint: Optional[str]=None):
        super().__init__(message if checkpoint is None else message + " (last good checkpoint: " + checkpoint + ")")
        self.checkpoint = checkpoint


class ProbeTrainingError(LabError):
    pass


class UndefinedScoreError(LabError):
    pass


class ConfigError(LabError):
    exit_code = 2


class ArtifactError(LabError):
    """Corrupted or inconsistent artifact. `offset` is the byte offset of the failure, when known."""
    exit_code = 3

    def __init__(self, message: str, path: Optional[str]=None, offset: Optional[int]=None):
        details = []
        if path is not None: details.append("path=" + str(path))
        if offset is not None: details.append("offset=" + str(offset))
        super().__init__(message + ("" if not details else " [" + ", ".join(details) + "]"))
        self.path, self.offset = path, offset


class ResolutionError(LabError):
    """A stage input resolves to neither a prior stage output nor an existing artifact"""
    exit_code = 3

    def __init__(self, message: str, stage: str):
        super().__init__("stage '" + stage + "': " + message)
        self.stage = stage
