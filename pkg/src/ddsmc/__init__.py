"""SMC inference with trainable data-driven proposals, demonstrated on a
dependent Dirichlet process mixture for detection-free multi-object
tracking."""

__version__ = "0.1.0"
