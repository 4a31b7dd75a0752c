"""Cascade feed-forward network with frequency-domain output validation,
trained on a physics-synthesized thin-metal surface-plasmon dataset."""

from . import cascade, cli, dataset, nncore, omegaval, physics, pipeline

__version__ = "0.1.0"

__all__ = [
    "cascade",
    "cli",
    "dataset",
    "nncore",
    "omegaval",
    "physics",
    "pipeline",
    "__version__",
]
