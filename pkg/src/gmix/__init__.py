"""Generative mixture classification heads with latent moment constraints.

Provides a small tape-based autodiff engine, axis-aligned Gaussian
mixture / KMeans / linear-softmax final layers, method-of-moments
embedding losses against a standard-normal target, a Mahalanobis
outlier gate, synthetic datasets, and a semi-supervised pseudo-labeling
training pipeline, all driven by the ``gmix`` command-line tool.
"""

__version__ = "0.1.0"
