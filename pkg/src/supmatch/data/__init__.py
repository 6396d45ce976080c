from .datasets import (
    BiasTable,
    LabeledDataset,
    UnlabeledDataset,
    apply_bias,
    balance_test_set,
)
from .colored_mnist import (
    BIAS_TABLES,
    COLOR_NAMES,
    PALETTE,
    build_colored_mnist,
    build_colored_split,
    colorize,
    load_digit_corpus,
    load_mnist_idx,
)
from .adult import build_adult, encode_adult, locate_adult_file, read_adult_records, synthesize_adult_like
from .synthetic import build_synthetic_gmm, default_source_means
from .cache import load_dataset_bundle, save_dataset_bundle

__all__ = [
    "BIAS_TABLES",
    "BiasTable",
    "COLOR_NAMES",
    "LabeledDataset",
    "PALETTE",
    "UnlabeledDataset",
    "apply_bias",
    "balance_test_set",
    "build_adult",
    "build_colored_mnist",
    "build_colored_split",
    "build_synthetic_gmm",
    "colorize",
    "default_source_means",
    "encode_adult",
    "load_dataset_bundle",
    "load_digit_corpus",
    "load_mnist_idx",
    "locate_adult_file",
    "read_adult_records",
    "save_dataset_bundle",
    "synthesize_adult_like",
]
