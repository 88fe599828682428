"""imbalance-forge: oversampling strategies, IoU-surrogate losses and
grouped segmentation evaluation for long-tail training."""

__version__ = "0.1.0"
