"""Built-dataset caching: a directory of flat binary tensors plus a JSON
manifest recording shapes, seeds, bias tables and checksums."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..exceptions import IngestionError
from .datasets import LabeledDataset, UnlabeledDataset


def _checksum(array: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(array).tobytes()).hexdigest()[:16]


def save_dataset_bundle(directory, train, deployment, test, manifest):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {
        "train_x": train.features.numpy(),
        "train_s": train.s,
        "train_y": train.y,
        "dep_x": deployment.features.numpy(),
        "test_x": test.features.numpy(),
        "test_s": test.s,
        "test_y": test.y,
    }
    with deployment.oracle_labels():
        arrays["dep_hidden_s"] = deployment.hidden_s
        arrays["dep_hidden_y"] = deployment.hidden_y
    checksums = {}
    for name, arr in arrays.items():
        np.save(directory / f"{name}.npy", arr)
        checksums[name] = {"shape": list(arr.shape), "sha256_16": _checksum(arr)}
    full = dict(manifest)
    full["arrays"] = checksums
    full["n_s"] = train.n_s
    full["n_y"] = train.n_y
    (directory / "manifest.json").write_text(json.dumps(full, indent=2, sort_keys=True))
    return directory


def load_dataset_bundle(directory):
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise IngestionError(f"no dataset manifest at {manifest_path}; run prepare-data first")
    manifest = json.loads(manifest_path.read_text())
    arrays = {}
    for name, info in manifest["arrays"].items():
        arr = np.load(directory / f"{name}.npy")
        if _checksum(arr) != info["sha256_16"]:
            raise IngestionError(f"checksum mismatch for cached array {name}")
        arrays[name] = arr
    n_s, n_y = manifest["n_s"], manifest["n_y"]
    train = LabeledDataset(arrays["train_x"], arrays["train_s"], arrays["train_y"], n_s, n_y)
    deployment = UnlabeledDataset(
        arrays["dep_x"], arrays["dep_hidden_s"], arrays["dep_hidden_y"], n_s, n_y
    )
    test = LabeledDataset(arrays["test_x"], arrays["test_s"], arrays["test_y"], n_s, n_y)
    return train, deployment, test, manifest
