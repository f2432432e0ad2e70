"""Video anomaly detection from learned appearance and motion representations.

Three pipelines (appearance, motion, and their pixel-level early fusion) each
learn a stacked denoising autoencoder; bottleneck features are scored by a
one-class SVM per pipeline and the three scores are late-fused with weights
learned without labels.
"""

__version__ = "0.1.0"

from ._kernels import backend  # noqa: E402
from .errors import (  # noqa: E402
    AlignmentError,
    AmdnError,
    ConfigError,
    ConvergenceError,
    DivergenceError,
    DomainError,
    FormatError,
    LayoutError,
    ShapeError,
)

__all__ = [
    "AlignmentError",
    "AmdnError",
    "ConfigError",
    "ConvergenceError",
    "DivergenceError",
    "DomainError",
    "FormatError",
    "LayoutError",
    "ShapeError",
    "__version__",
    "backend",
]
