"""Two-stage source-free domain adaptation with a prompt-tuned prior model."""

__version__ = "0.1.0"
