"""Python access to the coca capsule-network library."""

from ._coca import (
    CheckpointError,
    DataError,
    Model,
    dynamic_routing,
    knn_evaluate,
    knn_predict,
    nt_xent,
    nt_xent_with_grad,
    profile,
    read_batch_file,
    squash,
)

__all__ = [
    "CheckpointError",
    "DataError",
    "Model",
    "dynamic_routing",
    "knn_evaluate",
    "knn_predict",
    "nt_xent",
    "nt_xent_with_grad",
    "profile",
    "read_batch_file",
    "squash",
]
