"""Late-interaction retrieval engine with whole-word bags and learned pruning."""

__version__ = "0.1.0"
