"""CHF surrogate models: a conditional VAE and a DNN regressor with UQ and hull-based domain checks."""

__version__ = "0.1.0"
