"""Multi-domain recommendation toolkit: multi-embedding models with a
cross-expert covariance penalty, plus the ranking metrics and representation
diagnostics used to compare them."""

from ._core import (
    CrocError,
    auc,
    checkpoint_info,
    covloss,
    dataset_info,
    diversity_index,
    evaluate,
    gauc,
    generate_dataset,
    information_abundance,
    train,
    __version__,
)

__all__ = [
    "CrocError",
    "auc",
    "checkpoint_info",
    "covloss",
    "dataset_info",
    "diversity_index",
    "evaluate",
    "gauc",
    "generate_dataset",
    "information_abundance",
    "train",
    "__version__",
]
