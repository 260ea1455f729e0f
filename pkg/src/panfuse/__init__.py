"""panfuse: pansharpening toolkit with an unsupervised generative fuser.

Modules
-------
raster    image containers, resampling, MTF degradation, detail injection, IO
metrics   reduced- and full-resolution quality metrics and reports
autodiff  minimal reverse-mode automatic differentiation and Adam
gan       generator, spectral/spatial discriminators, losses, training loop
harness   synthetic scenes, Wald reduction, baseline fusers, experiments
cli       `panfuse` command-line pipelines
"""

from .errors import (
    ConfigError,
    DegenerateInputError,
    FormatError,
    InvalidInputError,
    NumericalError,
    PanfuseError,
    ShapeError,
    TrainingDivergenceError,
)

__all__ = [
    "ConfigError",
    "DegenerateInputError",
    "FormatError",
    "InvalidInputError",
    "NumericalError",
    "PanfuseError",
    "ShapeError",
    "TrainingDivergenceError",
]

__version__ = "0.1.0"
