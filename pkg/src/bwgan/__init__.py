"""Banach-space Wasserstein GAN toolkit at desk scale.

Subpackages: ``autodiff`` (graph-valued reverse-mode differentiation),
``spaces`` (norm / dual-norm algebra), ``lipschitz`` (gradient and
difference-quotient machinery), ``transport`` (exact optimal transport),
``training`` (the adversarial loop and parameter heuristics), ``cli``.
"""

from . import autodiff, checkpoint, datasets, lipschitz, nets, spaces, training, transport

__all__ = [
    "autodiff",
    "checkpoint",
    "datasets",
    "lipschitz",
    "nets",
    "spaces",
    "training",
    "transport",
]

__version__ = "0.1.0"
