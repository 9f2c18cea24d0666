"""Bayesian mixture-prior toolkit for studying in-context algorithm selection."""

from .prior import (
    Component,
    ContextSequence,
    Hyper,
    MixturePrior,
    PosteriorSummary,
    posterior,
    sample_pretrain_sequence,
    weight_ratio,
)

__version__ = "0.1.0"

__all__ = [
    "Component",
    "ContextSequence",
    "Hyper",
    "MixturePrior",
    "PosteriorSummary",
    "posterior",
    "sample_pretrain_sequence",
    "weight_ratio",
    "__version__",
]
