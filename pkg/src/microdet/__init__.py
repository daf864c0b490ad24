"""microdet: a desk-scale, gradient-checked anchor-detection toolkit.

Numpy-backed float64 tensors with tape-recorded reverse-mode gradients
power a micro anchor detector whose architectural pieces (coordinate
attention, dynamic task-aware activation, strengthened neck, clustered
anchors, DIoU regression) are individually verified against independent
oracles.
"""

from .tensor import Parameter, Tape, Tensor, backward

__all__ = ["Parameter", "Tape", "Tensor", "backward"]

__version__ = "0.1.0"
