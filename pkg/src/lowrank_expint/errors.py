"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Operands have incompatible shapes."""


class SizeCapExceededError(ValueError):
    """A dense reduced-system object exceeds the configured size cap."""


class SylvesterSingularError(ArithmeticError):
    """The algebraic Sylvester operator X -> As X + X Bs is (near-)singular."""


class ShiftedSolveError(ArithmeticError):
    """A shifted solve (Op - rho*I)^{-1} failed; the shift hits the spectrum."""


class SpectrumIterationError(RuntimeError):
    """Eigenvalue iteration for operator metadata did not converge."""


class IntegrationError(RuntimeError):
    """A time step failed; carries the index of the failing step."""

    def __init__(self, step_index: int, message: str):
        super().__init__(f"step {step_index}: {message}")
        self.step_index = step_index


class ConfigError(ValueError):
    """Invalid benchmark configuration (unknown names, malformed flags)."""
