"""Recommend which resource classes a microservice should monitor.

Modules:
    model: monitor ontology and the service/dataset records.
    ingest: JSONL loading, feature encodings and label matrices.
    stats: class distributions, phi coefficients and chi-squared tests.
    evalkit: AUC, ROC, Youden threshold and precision/recall.
    cf: similarity-based collaborative filtering baseline.
    protonet: prototype network with hand-written backpropagation.
    svd: truncated SVD and the matrix-completion ablation.
    synth: seeded synthetic fleets with planted rules.
    pipeline: per-class training, checkpoints and recommendation.
    cli: the ``monreco`` command.
"""

from .errors import MonrecoError
from .ingest import FeatureKind, load_dataset, save_dataset
from .model import Dataset, MonitorRecord, ResourceClass, ServiceRecord, SloClass

__all__ = [
    "Dataset",
    "FeatureKind",
    "MonitorRecord",
    "MonrecoError",
    "ResourceClass",
    "ServiceRecord",
    "SloClass",
    "load_dataset",
    "save_dataset",
]
