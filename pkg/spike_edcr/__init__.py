__all__ = [
    "config",
    "edcr",
    "main",
]
