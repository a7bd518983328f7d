"""Weakly-supervised audiovisual sound recognition toolkit.

Single-modal audio/visual models over a small autodiff engine, four late
fusion schemes (average, regression, MLP, attention), multi-label
ranking metrics, and a synthetic desk-scale benchmark.
"""

__version__ = "0.1.0"
