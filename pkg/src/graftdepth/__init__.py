"""Self-supervised monocular depth with data grafting, full-scale self-distillation and SGM hints."""

__version__ = "0.1.0"
