"""Exception types shared across the solver."""


class ConfigError(ValueError):
    """Invalid parameters or configuration."""


class GridConditionError(ConfigError):
    """A required grid inequality does not hold."""

    def __init__(self, inequality: str, detail: str = ""):
        self.inequality = inequality
        msg = f"grid condition violated: {inequality}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class KernelConvergenceError(RuntimeError):
    def __init__(self, alpha: int, test1: float, test2: float):
        self.alpha, self.test1, self.test2 = alpha, test1, test2
        super().__init__(
            f"weight selection did not converge by alpha={alpha}: "
            f"test1={test1:.3e}, test2={test2:.3e}"
        )


class BracketError(RuntimeError):
    """Fee bracket does not contain a sign change."""


class FeeConvergenceError(RuntimeError):
    pass


class MissingControlsError(RuntimeError):
    """Controls were not stored on the solution."""


class StabilityError(RuntimeError):
    pass
