"""Exception hierarchy shared by all services"""

from typing import Optional


class UgwError(Exception):
    """Base class for every error raised by the package"""


class InvalidLawError(UgwError, ValueError):
    """Offspring law or initial law violates its invariants"""


class InvalidArgumentError(UgwError, ValueError):
    """Caller passed parameters outside the documented range"""


class RetryExhaustedError(UgwError, RuntimeError):
    """A rejection sampler used up its retry budget"""


class DivergedError(UgwError, ArithmeticError):
    """Simulated state left the finite range"""

    def __init__(self, step: int, message: Optional[str] = None):
        self.step = step
        super().__init__(message or f"state diverged at step {step}")


class InsufficientEnsembleError(UgwError, ValueError):
    """Ensemble too small for the requested regression"""


class InsufficientDataError(UgwError, ValueError):
    """Too few samples satisfy the conditioning event"""


class SingularDiffusionError(UgwError, ArithmeticError):
    """Diffusion matrix not invertible at some evaluation"""

    def __init__(self, step: int, message: Optional[str] = None):
        self.step = step
        super().__init__(message or f"singular diffusion matrix at step {step}")


class ContractViolationError(UgwError, ValueError):
    """Drift or diffusion failed a runtime contract check"""


class InvalidTestFunctionError(UgwError, ValueError):
    """Mass-transport test function exceeded its declared bound"""


class InvalidComparisonError(UgwError, ValueError):
    """Two systems compared with mismatched coefficients"""


class ConfigError(UgwError, ValueError):
    """Run configuration could not be resolved"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class RunLockedError(UgwError, RuntimeError):
    """Another run holds the output directory"""
