"""Cross-scene hyperspectral classification: feature alignment + self-training.

A numpy library implementing the full pipeline: a small reverse-mode autodiff
engine, scene/patch data handling, a center-attention convolutional network
with two classification heads, class-conditional kernel alignment between a
labeled source scene and an unlabeled target scene, confidence-thresholded
self-training, and confusion-matrix evaluation.
"""

__version__ = "0.1.0"
