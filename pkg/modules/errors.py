from typing import Dict, List, Optional


class HybridTranslateError(Exception):
    """Base class for every error raised by the modules package."""


class InvalidInputError(HybridTranslateError, ValueError):
    pass


class InvalidBudgetError(InvalidInputError):
    pass


class EmptyDatasetError(InvalidInputError):
    pass


class ConfigError(HybridTranslateError, ValueError):
    pass


class ContractViolationError(HybridTranslateError, RuntimeError):
    pass


class NonFiniteLossError(HybridTranslateError, RuntimeError):
    """Raised by the trainer when a loss component is NaN or infinite."""

    def __init__(self, step: int, components: Dict[str, float]):
        self.step = step
        self.components = dict(components)
        detail = ", ".join(f"{k}={v:.6g}" for k, v in self.components.items())
        super().__init__(f"Non-finite loss at step {step}: {detail}")


class MissingFileError(HybridTranslateError, FileNotFoundError):
    def __init__(self, missing: List[str], context: Optional[str] = None):
        self.missing = list(missing)
        head = ", ".join(self.missing[:5])
        more = f" (+{len(self.missing) - 5} more)" if len(self.missing) > 5 else ""
        prefix = f"{context}: " if context else ""
        super().__init__(f"{prefix}missing files: {head}{more}")
