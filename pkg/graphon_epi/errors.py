"""
Exception hierarchy for graphon-epi.
The CLI maps validation-type errors to exit code 2 and solver failures to exit code 3.
"""
from typing import Any, Dict, Optional


class GraphonEpiError(Exception):
    """Base class for all graphon-epi errors"""

    def payload(self) -> Dict[str, Any]:
        """Machine-readable description written to diagnostics.json"""
        return {"error": type(self).__name__, "message": str(self)}


class DomainError(GraphonEpiError, ValueError):
    """An index, control or aggregate lies outside its domain"""


class DimensionError(GraphonEpiError, ValueError):
    """Array shapes disagree, a sample is empty, or two grids do not match"""


class ModelBoundError(GraphonEpiError):
    """A transition rate exceeds the model-declared bound q_max"""

    def __init__(self, rate: float, q_max: float):
        super().__init__(f"rate {rate:.6g} exceeds model bound q_max={q_max:.6g}")
        self.rate = rate
        self.q_max = q_max


class NonFiniteError(GraphonEpiError, ArithmeticError):
    """A derivative or state became NaN/inf"""

    def __init__(self, message: str, t: Optional[float] = None, step: Optional[int] = None):
        super().__init__(message)
        self.t = t
        self.step = step

    def payload(self) -> Dict[str, Any]:
        return {**super().payload(), "t": self.t, "step": self.step}


class StepSizeError(GraphonEpiError):
    """The forward distribution left the probability simplex"""

    def __init__(self, drift: float, t: float):
        super().__init__(f"distribution left the simplex by {drift:.3g} at t={t:.6g}; retry with a smaller dt")
        self.drift = drift
        self.t = t

    def payload(self) -> Dict[str, Any]:
        return {**super().payload(), "drift": self.drift, "t": self.t}


class NonConvergence(GraphonEpiError):
    """Picard iteration on the aggregate path hit max_iter"""

    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"no fixed point after {iterations} iterations (last residual {residual:.3e}); "
            f"retry with a smaller damping"
        )
        self.iterations = iterations
        self.residual = residual

    def payload(self) -> Dict[str, Any]:
        return {**super().payload(), "iterations": self.iterations, "residual": self.residual}


class TrainingDivergence(GraphonEpiError):
    """Shooting loss blew up or became non-finite"""

    def __init__(self, iteration: int, loss: float):
        super().__init__(f"training diverged at iteration {iteration} (loss={loss:.3e}); lower the learning rate")
        self.iteration = iteration
        self.loss = loss

    def payload(self) -> Dict[str, Any]:
        return {**super().payload(), "iteration": self.iteration, "loss": self.loss}


class ScenarioError(GraphonEpiError, ValueError):
    """A scenario file failed to parse or validate"""

    def __init__(self, field: str, constraint: str):
        super().__init__(f"{field}: {constraint}")
        self.field = field
        self.constraint = constraint

    def payload(self) -> Dict[str, Any]:
        return {**super().payload(), "field": self.field, "constraint": self.constraint}
