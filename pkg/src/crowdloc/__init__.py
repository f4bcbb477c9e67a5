"""Crowd localization as dense head segmentation.

A numpy/scipy implementation of a trainable pipeline: a windowed-attention
encoder with dilated-conv context blocks, an FPN decoder ending in a
full-resolution score map, connected-component instance extraction, and
distance-gated point matching metrics.
"""

from .tensor import Tensor, ConvSpec, no_grad

__all__ = ["Tensor", "ConvSpec", "no_grad"]

__version__ = "0.1.0"
