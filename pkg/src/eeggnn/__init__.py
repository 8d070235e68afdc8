"""Graph neural network benchmarking for multi-channel EEG feature data."""

__version__ = "0.1.0"

from .dataio import Dataset, SynthSpec, load_dataset, save_dataset, synth_generate, validate_dataset
from .graph import GraphSpec, init_adjacency, normalize_adjacency
from .models import GraphClassifier, ModelConfig, ModelFactory, TrainConfig, evaluate, train_epoch
from .protocols import cv_run, cv_summary, fcv_run, fcv_summary, ncv_run
from .splitting import FoldPlan, split_cross, split_intra

__all__ = [
    "Dataset", "SynthSpec", "load_dataset", "save_dataset", "synth_generate", "validate_dataset",
    "GraphSpec", "init_adjacency", "normalize_adjacency",
    "GraphClassifier", "ModelConfig", "ModelFactory", "TrainConfig", "evaluate", "train_epoch",
    "cv_run", "cv_summary", "fcv_run", "fcv_summary", "ncv_run",
    "FoldPlan", "split_cross", "split_intra",
]
