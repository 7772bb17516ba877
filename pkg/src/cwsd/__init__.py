"""Coarse-grained word sense disambiguation toolkit.

Builds per-sense centroid embeddings from contextual vectors, classifies
by nearest centroid with MFS fallback, trains a linear supervised
baseline, and evaluates with micro/macro F1, MFS/LFS breakdowns, and a
sense-bias metric; includes samplers for few-shot, fractional-size, and
balanced training studies plus a dataset-construction pipeline.
"""

from .corpus import (
    Instance,
    SenseLabel,
    WordDataset,
    WordStats,
    load_word_dataset,
    normalized_entropy,
    word_stats,
    write_word_dataset,
)
from .embedding import (
    EmbeddingCache,
    InstanceEmbedding,
    PoolingSpec,
    ProviderInfo,
    fetch_embeddings,
    pool,
    read_cache,
    write_cache,
)
from .errors import CwsdError

__version__ = "0.1.0"

__all__ = [
    "CwsdError",
    "EmbeddingCache",
    "Instance",
    "InstanceEmbedding",
    "PoolingSpec",
    "ProviderInfo",
    "SenseLabel",
    "WordDataset",
    "WordStats",
    "fetch_embeddings",
    "load_word_dataset",
    "normalized_entropy",
    "pool",
    "read_cache",
    "word_stats",
    "write_cache",
    "write_word_dataset",
    "__version__",
]
