"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A configuration is invalid (unsupported shape pair, bad mode, bad dims)."""


class ContractViolationError(RuntimeError):
    """An API was called outside its contract (stepping a done episode, shape mismatch)."""


class SimulationDivergedError(RuntimeError):
    """A state variable went non-finite during integration."""

    def __init__(self, body_id: int, message: str = ""):
        self.body_id = body_id
        super().__init__(message or f"simulation diverged: non-finite state on body {body_id}")


class UnsupportedModeError(ConfigurationError):
    """Operation not available for the given tactile mode."""


class InfeasibleDemoError(RuntimeError):
    """A scripted demonstration cannot reach its grasp under the per-step action caps."""


class TrainingDivergedError(RuntimeError):
    """A training loss became non-finite; carries a diagnostic summary."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
