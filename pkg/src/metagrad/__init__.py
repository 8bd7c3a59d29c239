"""Gradient-based meta-learning lab.

Taped higher-order autodiff, MAML-style training on regression task
distributions, and numerical certificates for the embedded-learner
construction that a single adaptation step can realize.
"""

from .autodiff import Tape, Tensor, backward, finite_diff

__all__ = ["Tape", "Tensor", "backward", "finite_diff"]
__version__ = "0.1.0"
