"""Mean-field, truncated-Wigner and exact dynamics of the driven, dissipative Dicke model."""

__version__ = "0.1.0"

from .errors import ConfigurationError, DickeSimError, DomainError, NumericalError  # noqa: E402
from .model import (DisorderDraw, InitialCondition, ModelParams, NoiseParams,  # noqa: E402
                    SpinAxis, chi, critical_drive_dpt, critical_drive_qpt, renyi_entropy,
                    thermal_log_ratio)

__all__ = [
    "__version__", "ConfigurationError", "DickeSimError", "DomainError", "NumericalError",
    "DisorderDraw", "InitialCondition", "ModelParams", "NoiseParams", "SpinAxis", "chi",
    "critical_drive_dpt", "critical_drive_qpt", "renyi_entropy", "thermal_log_ratio",
]
