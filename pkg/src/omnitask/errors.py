"""Exception hierarchy shared by every subsystem."""

from __future__ import annotations


class OmnitaskError(Exception):
    pass


class ValidationError(OmnitaskError, ValueError):
    """Bad input. ``problems`` lists every offending field when known."""

    def __init__(self, message: str, problems: list[str] | None = None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + ":\n  " + "\n  ".join(self.problems)
        super().__init__(message)


class StateError(OmnitaskError):
    """Operation not permitted in the entity's current lifecycle state."""


class CycleError(ValidationError):
    def __init__(self, cycle: list[str]):
        self.cycle = list(cycle)
        super().__init__("dependency cycle: " + " -> ".join(self.cycle))


class UnknownDependencyError(ValidationError):
    pass


class RuntimeHaltedError(StateError):
    pass


class SequencingError(OmnitaskError):
    pass


class StartupError(OmnitaskError):
    pass


class ScenarioError(ValidationError):
    pass


class JudgeContractError(OmnitaskError):
    pass


class AdapterError(OmnitaskError):
    """Raised by adapters (captioner, proposer, evaluator) when a call fails."""
