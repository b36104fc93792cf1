# Exception hierarchy for racegear.
# Library modules raise these; only core.py turns them into exit codes.

from __future__ import annotations


class RacegearError(Exception):
    """Base class for every error raised on purpose by racegear."""


class ConfigError(RacegearError):
    """Configuration file or CLI parameter problem."""


class ValidationError(RacegearError, ValueError):
    """Input violates a documented precondition."""


class TrackParseError(ValidationError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ExtractionError(RacegearError):
    def __init__(self, status: str):
        super().__init__(f"cannot extract a trajectory from a solve with status '{status}'")
        self.status = status


class StepInfeasibleError(RacegearError):
    def __init__(self, step: int, message: str = "no feasible gear"):
        super().__init__(f"step {step}: {message}")
        self.step = step


class SolverFailure(RacegearError):
    def __init__(self, status: str, message: str = ""):
        super().__init__(message or f"solver finished with status '{status}'")
        self.status = status
