class NeuralBOError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigurationError(NeuralBOError):
    pass


class InputError(NeuralBOError):
    pass


class KernelDomainError(InputError):
    """Correlation is undefined for a zero-norm input."""


class TrainingDivergenceError(NeuralBOError):
    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class NumericalDegeneracyError(NeuralBOError):
    pass


class InvariantViolationError(NeuralBOError):
    pass


class NumericalError(NeuralBOError):
    def __init__(self, message: str, eigenvalues=None):
        self.eigenvalues = eigenvalues
        super().__init__(message)


class ObjectiveEvaluationError(NeuralBOError):
    def __init__(self, iteration: int, cause: Exception):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"objective evaluation failed at iteration {iteration}: {cause}")
