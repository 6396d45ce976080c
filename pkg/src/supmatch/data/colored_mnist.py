"""Colored digit datasets: tinted, zero-padded digit images split into
training / deployment / evaluation pools, with the canonical biasing tables
for the subgroup-bias and missing-subgroup settings.

The primary corpus is MNIST read from IDX files under a configurable root
(``SUPMATCH_DATA_ROOT`` or an explicit path). When those files are absent
the loader can fall back to the bundled scikit-learn handwritten digits
(real 8x8 scans, upscaled and deterministically jittered into a larger
corpus) so that desk-scale runs work offline; which corpus was used is
recorded in the dataset manifest.
"""

from __future__ import annotations

import gzip
import os
import struct
from pathlib import Path

import numpy as np

from ..exceptions import IngestionError, ValidationError
from ..validation import new_rng
from .datasets import BiasTable, LabeledDataset, UnlabeledDataset

DATA_ROOT_ENV = "SUPMATCH_DATA_ROOT"

# Fixed 10-color RGB palette (unit scale). Subgroup index == palette index;
# the 2-color experiments use {purple, green}, the 3-color ones add blue.
PALETTE = np.array(
    [
        [0.58, 0.29, 0.82],  # purple
        [0.20, 0.80, 0.20],  # green
        [0.25, 0.45, 0.95],  # blue
        [0.90, 0.20, 0.20],  # red
        [0.95, 0.60, 0.10],  # orange
        [0.15, 0.80, 0.80],  # cyan
        [0.90, 0.30, 0.80],  # magenta
        [0.90, 0.90, 0.20],  # yellow
        [0.60, 0.40, 0.20],  # brown
        [0.60, 0.60, 0.60],  # gray
    ],
    dtype=np.float32,
)
COLOR_NAMES = (
    "purple", "green", "blue", "red", "orange",
    "cyan", "magenta", "yellow", "brown", "gray",
)

# Proportion of each (s=color, y=digit-class) source retained, in dense
# indices with digit 2 -> class 0, digit 4 -> class 1, purple -> 0, green -> 1.
SB_TRAIN_BIAS = BiasTable({(0, 0): 1.0, (1, 0): 0.3, (0, 1): 0.0, (1, 1): 1.0})
SB_DEPLOY_BIAS = BiasTable({(0, 0): 0.7, (1, 0): 0.4, (0, 1): 0.2, (1, 1): 1.0})
MS_TRAIN_BIAS = BiasTable({(0, 0): 0.0, (1, 0): 0.85, (0, 1): 0.0, (1, 1): 1.0})
MS_DEPLOY_BIAS = BiasTable({(0, 0): 0.7, (1, 0): 0.6, (0, 1): 0.4, (1, 1): 1.0})

BIAS_TABLES = {
    ("sb", "train"): SB_TRAIN_BIAS,
    ("sb", "deployment"): SB_DEPLOY_BIAS,
    ("ms", "train"): MS_TRAIN_BIAS,
    ("ms", "deployment"): MS_DEPLOY_BIAS,
}


def _read_idx(path: Path) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        magic = fh.read(4)
        if len(magic) != 4 or magic[0] != 0 or magic[1] != 0:
            raise IngestionError(f"{path} is not an IDX file")
        dtype_code, ndim = magic[2], magic[3]
        if dtype_code != 0x08:
            raise IngestionError(f"{path}: unsupported IDX element type 0x{dtype_code:02x}")
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
        if data.size != int(np.prod(dims)):
            raise IngestionError(f"{path}: truncated IDX payload")
        return data.reshape(dims)


def load_mnist_idx(root) -> tuple:
    """Read the four standard MNIST IDX files from ``root``.

    Returns (train_images, train_labels, test_images, test_labels) with
    images as float arrays in [0, 1] of shape (n, 28, 28).
    """
    root = Path(root)
    names = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    arrays = {}
    for key, stem in names.items():
        candidates = [root / stem, root / (stem + ".gz")]
        found = next((p for p in candidates if p.exists()), None)
        if found is None:
            raise IngestionError(
                f"MNIST file {stem}[.gz] not found under {root}; download the four "
                f"IDX files into that directory or set {DATA_ROOT_ENV}"
            )
        arrays[key] = _read_idx(found)
    return (
        arrays["train_images"].astype(np.float32) / 255.0,
        arrays["train_labels"].astype(np.int64),
        arrays["test_images"].astype(np.float32) / 255.0,
        arrays["test_labels"].astype(np.int64),
    )


def _upscale(images: np.ndarray, factor: int) -> np.ndarray:
    return images.repeat(factor, axis=1).repeat(factor, axis=2)


def _jitter(images: np.ndarray, labels: np.ndarray, copies: int, rng) -> tuple:
    """Expand a small corpus with seeded integer pixel shifts."""
    out_images = [images]
    out_labels = [labels]
    for _ in range(copies - 1):
        shifted = np.empty_like(images)
        dx = rng.integers(-2, 3, size=len(images))
        dy = rng.integers(-2, 3, size=len(images))
        for i, img in enumerate(images):
            shifted[i] = np.roll(np.roll(img, int(dy[i]), axis=0), int(dx[i]), axis=1)
        out_images.append(shifted)
        out_labels.append(labels)
    return np.concatenate(out_images), np.concatenate(out_labels)


def load_digit_substrate(copies: int = 6) -> tuple:
    """Bundled fallback corpus: scikit-learn 8x8 digit scans at 28x28.

    The base scans are split into train/test pools before expansion so the
    two sides never share a source image. Deterministic by construction.
    """
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = (digits.images / 16.0).astype(np.float32)
    labels = digits.target.astype(np.int64)
    rng = new_rng(20240001)
    order = rng.permutation(len(labels))
    images, labels = images[order], labels[order]
    cut = int(0.7 * len(labels))
    train_img, train_lab = _jitter(_upscale(images[:cut], 3), labels[:cut], copies, rng)
    test_img, test_lab = _jitter(_upscale(images[cut:], 3), labels[cut:], copies, rng)
    pad = ((0, 0), (2, 2), (2, 2))  # 24 -> 28 to match the MNIST frame
    return (
        np.pad(train_img, pad),
        train_lab,
        np.pad(test_img, pad),
        test_lab,
    )


def load_digit_corpus(root=None, allow_substrate=True) -> tuple:
    """MNIST when available, otherwise the bundled substrate.

    Returns (train_images, train_labels, test_images, test_labels, corpus_name).
    """
    root = root or os.environ.get(DATA_ROOT_ENV)
    if root is not None:
        mnist_dir = Path(root) / "mnist" if (Path(root) / "mnist").is_dir() else Path(root)
        try:
            tr_x, tr_y, te_x, te_y = load_mnist_idx(mnist_dir)
            return tr_x, tr_y, te_x, te_y, "mnist"
        except IngestionError:
            if not allow_substrate:
                raise
    if not allow_substrate:
        raise IngestionError(
            f"no MNIST root configured; set {DATA_ROOT_ENV} or pass a path"
        )
    tr_x, tr_y, te_x, te_y = load_digit_substrate()
    return tr_x, tr_y, te_x, te_y, "sklearn-digits"


def colorize(gray: np.ndarray, color_ids: np.ndarray, palette: np.ndarray = PALETTE) -> np.ndarray:
    """Tint grayscale images: per-channel scaling by the palette RGB.

    Background (zero intensity) stays black for every color.
    """
    if gray.ndim != 3:
        raise ValidationError(f"expected (n, h, w) grayscale stack, got shape {gray.shape}")
    rgb = palette[np.asarray(color_ids, dtype=np.int64)]  # (n, 3)
    return gray[:, None, :, :] * rgb[:, :, None, None]


def _pad_to_32(images: np.ndarray) -> np.ndarray:
    h = images.shape[-1]
    margin = (32 - h) // 2
    extra = 32 - h - 2 * margin
    pad = ((0, 0), (0, 0), (margin, margin + extra), (margin, margin + extra))
    return np.pad(images, pad)


def build_colored_split(images, labels, digits, n_colors, seed) -> LabeledDataset:
    """Tint one pool of digit images and pad to 3 x 32 x 32.

    ``digits`` lists the retained digit values in class-index order; each
    sample is assigned one of the first ``n_colors`` palette colors uniformly.
    """
    digits = list(digits)
    if n_colors > len(PALETTE):
        raise ValidationError(f"at most {len(PALETTE)} colors available")
    if any(d not in range(10) for d in digits):
        raise ValidationError("digits must be in 0..9")
    rng = new_rng(seed)
    mask = np.isin(labels, digits)
    gray = images[mask]
    remap = np.argsort(digits)  # class index follows the given digit order
    dense_y = remap[np.searchsorted(np.sort(digits), labels[mask])]
    colors = rng.integers(n_colors, size=len(gray))
    tinted = _pad_to_32(colorize(gray, colors))
    return LabeledDataset(tinted, colors, dense_y, n_s=n_colors, n_y=len(digits))


def build_colored_mnist(
    digits=(2, 4),
    n_colors=2,
    setting="sb",
    seed=0,
    root=None,
    allow_substrate=True,
    train_fraction=0.8,
    missing_sources=None,
):
    """Assemble the (train, deployment, test) triple for a colored-digit task.

    The source train pool is carved ``train_fraction`` / rest into train and
    deployment pools before biasing; the evaluation pool comes from the held
    out test split. ``setting`` chooses the canonical 2x2 bias tables ("sb",
    "ms"); ``setting="none"`` applies no biasing, with ``missing_sources``
    (dense (s, y) pairs) removed outright from the training pool, as in the
    3-digit variant.

    Returns (train: LabeledDataset, deployment: UnlabeledDataset,
    test: LabeledDataset, manifest: dict).
    """
    from .datasets import apply_bias, balance_test_set

    tr_x, tr_y, te_x, te_y, corpus = load_digit_corpus(root, allow_substrate)
    rng = new_rng(seed)

    pool = build_colored_split(tr_x, tr_y, digits, n_colors, seed=rng.integers(2**31))
    order = rng.permutation(len(pool))
    cut = int(train_fraction * len(pool))
    train_pool = pool.subset(np.sort(order[:cut]))
    deploy_pool = pool.subset(np.sort(order[cut:]))
    test_pool = build_colored_split(te_x, te_y, digits, n_colors, seed=rng.integers(2**31))

    if setting in ("sb", "ms"):
        if (len(digits), n_colors) != (2, 2):
            raise ValidationError("canonical sb/ms bias tables are defined for the 2x2 task")
        train_pool = apply_bias(train_pool, BIAS_TABLES[(setting, "train")], rng.integers(2**31))
        deploy_pool = apply_bias(
            deploy_pool, BIAS_TABLES[(setting, "deployment")], rng.integers(2**31)
        )
    elif setting == "none":
        if missing_sources:
            table = BiasTable(
                {
                    (s, y): (0.0 if (s, y) in set(map(tuple, missing_sources)) else 1.0)
                    for s in range(n_colors)
                    for y in range(len(digits))
                }
            )
            train_pool = apply_bias(train_pool, table, rng.integers(2**31))
    else:
        raise ValidationError(f"unknown setting {setting!r}")

    test = balance_test_set(test_pool, rng.integers(2**31))
    deployment = UnlabeledDataset(
        deploy_pool.features, deploy_pool.s, deploy_pool.y, n_colors, len(digits)
    )
    manifest = {
        "corpus": corpus,
        "digits": list(digits),
        "n_colors": n_colors,
        "setting": setting,
        "seed": int(seed),
        "sizes": {"train": len(train_pool), "deployment": len(deployment), "test": len(test)},
    }
    return train_pool, deployment, test, manifest
