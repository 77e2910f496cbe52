from polvis.data.synth import (
    ATTRIBUTE_NAMES,
    Dataset,
    DatasetManifest,
    PairedSample,
    bayes_attribute_oracle,
    generate_synthetic_dataset,
)
from polvis.data.dog import dog_filter, preprocess_dataset
from polvis.data.pairs import PairBatch, sample_balanced_pairs
from polvis.data.store import (
    ChecksumError,
    DatasetFormatError,
    MagicError,
    TruncatedError,
    VersionError,
    load_dataset,
    save_dataset,
)

__all__ = [
    "ATTRIBUTE_NAMES",
    "ChecksumError",
    "Dataset",
    "DatasetFormatError",
    "DatasetManifest",
    "MagicError",
    "PairBatch",
    "PairedSample",
    "TruncatedError",
    "VersionError",
    "bayes_attribute_oracle",
    "dog_filter",
    "generate_synthetic_dataset",
    "load_dataset",
    "preprocess_dataset",
    "sample_balanced_pairs",
    "save_dataset",
]
