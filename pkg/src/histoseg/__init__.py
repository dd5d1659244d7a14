"""histoseg: a desk-scale nucleus segmentation pipeline.

Mask decoding, dataset exploration and splitting, preprocessing and
augmentation, a micro U-Net trained with a combined overlap/cross-entropy
loss under plateau scheduling and early stopping, and a per-class
confusion-matrix evaluation suite with SVG/overlay reports.
"""

__version__ = "0.1.0"
