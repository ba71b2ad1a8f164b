"""Semi-supervised training with asynchronous offline pseudo-labeling.

Online phase: thresholded weak/strong consistency on the parametric head.
Offline phase (every few epochs): anchored k-means over encoder features,
per-class adaptive filtering of the cluster labels, and a frozen prototype
classifier that supervises the features until the next refresh.
"""

__version__ = "0.1.0"
