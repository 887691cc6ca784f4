"""Transformer-based deep hashing: training, encoding, and Hamming retrieval.

The heavy lifting lives in the compiled `_core` extension; this package just
re-exports its surface.
"""

from ._core import (
    CodeSet,
    Dataset,
    Model,
    __version__,
    apply_protocol,
    encode_split,
    hamming,
    load_cifar10,
    load_dataset,
    load_weights,
    map_at_k,
    pr_curve,
    protocols,
    rank,
    save_dataset,
    synth_dataset,
    train,
)

__all__ = [
    "CodeSet",
    "Dataset",
    "Model",
    "__version__",
    "apply_protocol",
    "encode_split",
    "hamming",
    "load_cifar10",
    "load_dataset",
    "load_weights",
    "map_at_k",
    "pr_curve",
    "protocols",
    "rank",
    "save_dataset",
    "synth_dataset",
    "train",
]
