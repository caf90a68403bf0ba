from .model import EmbedderConfig, RffExtractor
from .training import TrainConfig, euclidean, train, triplet_loss, triplet_loss_batch
from .weights_io import load_model, load_weights, save_weights, weight_file_hash

__all__ = [
    "EmbedderConfig",
    "RffExtractor",
    "TrainConfig",
    "euclidean",
    "train",
    "triplet_loss",
    "triplet_loss_batch",
    "load_model",
    "load_weights",
    "save_weights",
    "weight_file_hash",
]
