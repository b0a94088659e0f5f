"""Gated-convolution document image binarization.

Subpackages: image containers (imagecore), classical thresholding
(classical), tensor machinery (tensorops), the network graph (networks),
training losses (losses), training/inference pipeline (pipeline),
evaluation metrics (metrics), checkpoint format (checkpoint), and the
command-line interface (cli).
"""

from . import (checkpoint, classical, cli, imagecore, losses, metrics,
               networks, pipeline, tensorops)

__version__ = "0.1.0"

__all__ = [
    "checkpoint", "classical", "cli", "imagecore", "losses", "metrics",
    "networks", "pipeline", "tensorops", "__version__",
]
