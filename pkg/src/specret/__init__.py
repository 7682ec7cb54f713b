"""Two-stage spectrum-to-molecule retrieval: contrastive pre-retrieval followed by
candidate-conditioned generation and re-ranking."""

__version__ = "0.1.0"
