"""Backpropagation-free multi-task echo analysis.

An unsupervised Saab/VoxelHop encoder feeds two supervised heads: a
coarse-to-fine residual-regression segmenter and a pooled-descriptor
ejection-fraction classifier. Every learned stage is either a PCA-style
linear transform or a gradient-boosted tree ensemble.
"""

__version__ = "0.1.0"
