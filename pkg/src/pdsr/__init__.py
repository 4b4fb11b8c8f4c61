"""Two-stage image super-resolution under a low-frequency agreement constraint.

The package couples a fidelity-focused upscaling stage and a
perception-focused refinement stage by requiring their outputs to agree on
a low-frequency statistic, optimized with an alternating consensus scheme
(quadratic coupling plus per-image dual ascent). It ships its own reverse-
mode autodiff engine, orthonormal wavelet transforms, trainers, metrics,
data tooling, a command-line pipeline, and scikit-learn style estimators.
"""

from .estimators import BicubicUpscaler, PdAdmmSuperResolver, RegularizedSuperResolver
from .exceptions import (
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    FormatError,
    NumericError,
    PdsrError,
    StateError,
)

__version__ = "0.1.0"

__all__ = [
    "BicubicUpscaler",
    "PdAdmmSuperResolver",
    "RegularizedSuperResolver",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DivergenceError",
    "FormatError",
    "NumericError",
    "PdsrError",
    "StateError",
    "__version__",
]
