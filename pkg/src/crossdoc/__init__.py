"""Cross-modal contrastive representation learning on synthetic paired documents."""

__version__ = "0.1.0"
