"""Channel-aware low-rank adaptation (C-LoRA) for multivariate forecasting."""

__version__ = "0.1.0"
