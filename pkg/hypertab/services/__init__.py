"""Service modules."""

from hypertab.services.importer import EmbeddingCache
from hypertab.services.inference import EnsembleModel, fit_task, predict
from hypertab.services.meta_train import MetaTrainer

__all__ = ["EmbeddingCache", "EnsembleModel", "MetaTrainer", "fit_task", "predict"]
