"""Adult Income ingestion and encoding.

Parses the classic comma-separated census records (no header, ``?`` for
missing), encodes them into one-hot categorical plus standardized
continuous features with gender as the subgroup label and income>50K as
the class, and carves train / deployment / test splits with the subgroup
bias or missing-subgroup support applied to the training split.

``synthesize_adult_like`` writes records in the identical raw schema with
the documented gender-conditional income base rates, for offline runs
where the real file is unavailable.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pandas as pd

from ..exceptions import IngestionError, ValidationError
from ..validation import new_rng
from .datasets import LabeledDataset, UnlabeledDataset, balance_test_set

RAW_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
]

CONTINUOUS = ["age", "education-num", "capital-gain", "capital-loss", "hours-per-week"]

# Fixed vocabularies keep the encoded width independent of which categories
# happen to survive a particular subsample. fnlwgt (a survey weight) and the
# subgroup column itself are not encoded as features; native-country is
# collapsed to a US indicator.
VOCAB = {
    "workclass": [
        "Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov",
        "Local-gov", "State-gov", "Without-pay", "Never-worked",
    ],
    "education": [
        "Bachelors", "Some-college", "11th", "HS-grad", "Prof-school",
        "Assoc-acdm", "Assoc-voc", "9th", "7th-8th", "12th", "Masters",
        "1st-4th", "10th", "Doctorate", "5th-6th", "Preschool",
    ],
    "marital-status": [
        "Married-civ-spouse", "Divorced", "Never-married", "Separated",
        "Widowed", "Married-spouse-absent", "Married-AF-spouse",
    ],
    "occupation": [
        "Tech-support", "Craft-repair", "Other-service", "Sales",
        "Exec-managerial", "Prof-specialty", "Handlers-cleaners",
        "Machine-op-inspct", "Adm-clerical", "Farming-fishing",
        "Transport-moving", "Priv-house-serv", "Protective-serv", "Armed-Forces",
    ],
    "relationship": ["Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"],
    "race": ["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"],
}


def read_adult_records(source_file) -> pd.DataFrame:
    """Load raw records, dropping rows with missing fields."""
    path = Path(source_file)
    if not path.exists():
        raise IngestionError(
            f"Adult records not found at {path}; place adult.data there or point "
            "the config at a CSV in the standard 15-column census schema"
        )
    df = pd.read_csv(path, header=None, skipinitialspace=True, comment="|")
    if df.shape[1] != len(RAW_COLUMNS):
        raise IngestionError(
            f"{path}: expected {len(RAW_COLUMNS)} columns, found {df.shape[1]}"
        )
    df.columns = RAW_COLUMNS
    df = df[(df != "?").all(axis=1)].reset_index(drop=True)
    bad = [c for c in VOCAB if not set(df[c]) <= set(VOCAB[c])]
    if bad:
        raise IngestionError(f"{path}: unrecognized categories in columns {bad}")
    return df


def encode_adult(df: pd.DataFrame):
    """Encode raw records into (features, s, y, feature_blocks, column_names).

    Continuous columns come first (unstandardized here; standardization uses
    train-split statistics downstream), then one-hot blocks, then the US
    indicator. Subgroup s: 1 = Male, 0 = Female. Class y: 1 = income > 50K.
    """
    parts = [df[CONTINUOUS].to_numpy(dtype=np.float64)]
    names = list(CONTINUOUS)
    blocks = [("continuous", 0, len(CONTINUOUS))]
    offset = len(CONTINUOUS)
    for col, vocab in VOCAB.items():
        codes = pd.Categorical(df[col], categories=vocab).codes
        onehot = np.eye(len(vocab), dtype=np.float64)[codes]
        parts.append(onehot)
        names.extend(f"{col}={v}" for v in vocab)
        blocks.append(("categorical", offset, offset + len(vocab)))
        offset += len(vocab)
    us = (df["native-country"] == "United-States").to_numpy(dtype=np.float64)[:, None]
    parts.append(us)
    names.append("native-country=United-States")
    blocks.append(("categorical", offset, offset + 1))
    features = np.concatenate(parts, axis=1)
    s = (df["sex"] == "Male").to_numpy(dtype=np.int64)
    y = df["income"].str.rstrip(".").eq(">50K").to_numpy(dtype=np.int64)
    return features, s, y, blocks, names


def build_adult(source_file, setting="sb", seed=0, splits=(0.4, 0.4, 0.2)):
    """(train, deployment, test, manifest) for the income task.

    ``setting``: "sb" keeps only males among high earners in the training
    split; "ms" removes females from the training split entirely; "none"
    leaves the training split unrestricted. The deployment split is an
    unrestricted random subset; the test split is source-balanced.
    """
    if abs(sum(splits) - 1.0) > 1e-9:
        raise ValidationError("splits must sum to 1")
    df = read_adult_records(source_file)
    features, s, y, blocks, names = encode_adult(df)
    rng = new_rng(seed)
    order = rng.permutation(len(y))
    n_train = int(splits[0] * len(y))
    n_dep = int(splits[1] * len(y))
    idx_train = order[:n_train]
    idx_dep = order[n_train : n_train + n_dep]
    idx_test = order[n_train + n_dep :]

    keep = np.ones(len(idx_train), dtype=bool)
    if setting == "sb":
        keep = ~((s[idx_train] == 0) & (y[idx_train] == 1))
    elif setting == "ms":
        keep = s[idx_train] != 0
    elif setting != "none":
        raise ValidationError(f"unknown setting {setting!r}")
    idx_train = idx_train[keep]

    cont = slice(0, len(CONTINUOUS))
    mean = features[idx_train, cont].mean(axis=0)
    std = features[idx_train, cont].std(axis=0)
    std[std == 0] = 1.0
    standardized = features.copy()
    standardized[:, cont] = (standardized[:, cont] - mean) / std

    train = LabeledDataset(standardized[idx_train], s[idx_train], y[idx_train], 2, 2)
    deployment = UnlabeledDataset(standardized[idx_dep], s[idx_dep], y[idx_dep], 2, 2)
    test_pool = LabeledDataset(standardized[idx_test], s[idx_test], y[idx_test], 2, 2)
    test = balance_test_set(test_pool, rng.integers(2**31))
    manifest = {
        "source": str(source_file),
        "setting": setting,
        "seed": int(seed),
        "feature_width": standardized.shape[1],
        "feature_blocks": blocks,
        "sizes": {"train": len(train), "deployment": len(deployment), "test": len(test)},
    }
    return train, deployment, test, manifest


# -- offline stand-in ------------------------------------------------------

_EDU_BY_NUM = {
    1: "Preschool", 2: "1st-4th", 3: "5th-6th", 4: "7th-8th", 5: "9th", 6: "10th",
    7: "11th", 8: "12th", 9: "HS-grad", 10: "Some-college", 11: "Assoc-voc",
    12: "Assoc-acdm", 13: "Bachelors", 14: "Masters", 15: "Prof-school", 16: "Doctorate",
}


def _calibrate_intercept(score: np.ndarray, target_rate: float) -> float:
    lo, hi = -20.0, 20.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if (1.0 / (1.0 + np.exp(-(score + mid)))).mean() > target_rate:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def synthesize_adult_like(n: int, seed: int, path=None) -> pd.DataFrame:
    """Generate records in the raw census schema with the documented base
    rates (roughly 30% of males and 11% of females labeled high income).

    Income depends on education, age, hours, capital gain and marital
    status, so the task is learnable from the encoded features; the gender
    gap is calibrated per subgroup. Writes a header-less CSV when ``path``
    is given and returns the frame.
    """
    rng = new_rng(seed)
    male = rng.random(n) < 2 / 3
    age = np.clip(rng.normal(38, 13, n).round(), 17, 90)
    edu_num = np.clip(rng.normal(10, 2.6, n).round(), 1, 16).astype(int)
    hours = np.clip(rng.normal(40, 12, n) + 3 * male, 1, 99).round()
    cap_gain = np.where(rng.random(n) < 0.08, np.exp(rng.normal(8.5, 1.0, n)).round(), 0.0)
    cap_loss = np.where(rng.random(n) < 0.045, np.exp(rng.normal(7.4, 0.5, n)).round(), 0.0)
    married = rng.random(n) < np.clip(0.25 + 0.012 * (age - 20), 0.05, 0.8)

    score = (
        0.45 * (edu_num - 10)
        + 0.035 * (age - 38)
        + 0.03 * (hours - 40)
        + 1.6 * (cap_gain > 0)
        + 1.1 * married
    )
    income = np.zeros(n, dtype=bool)
    for flag, rate in ((male, 0.30), (~male, 0.11)):
        if flag.any():
            b = _calibrate_intercept(score[flag], rate)
            income[flag] = rng.random(flag.sum()) < 1.0 / (1.0 + np.exp(-(score[flag] + b)))

    marital = np.where(
        married,
        "Married-civ-spouse",
        rng.choice(["Never-married", "Divorced", "Separated", "Widowed"], n, p=[0.6, 0.25, 0.08, 0.07]),
    )
    relationship = np.where(
        married, np.where(male, "Husband", "Wife"),
        rng.choice(["Not-in-family", "Own-child", "Unmarried", "Other-relative"], n, p=[0.5, 0.25, 0.18, 0.07]),
    )
    df = pd.DataFrame(
        {
            "age": age.astype(int),
            "workclass": rng.choice(VOCAB["workclass"][:6], n, p=[0.7, 0.08, 0.04, 0.03, 0.07, 0.08]),
            "fnlwgt": rng.integers(20000, 500000, n),
            "education": [_EDU_BY_NUM[e] for e in edu_num],
            "education-num": edu_num,
            "marital-status": marital,
            "occupation": rng.choice(VOCAB["occupation"], n),
            "relationship": relationship,
            "race": rng.choice(VOCAB["race"], n, p=[0.85, 0.03, 0.01, 0.01, 0.10]),
            "sex": np.where(male, "Male", "Female"),
            "capital-gain": cap_gain.astype(int),
            "capital-loss": cap_loss.astype(int),
            "hours-per-week": hours.astype(int),
            "native-country": rng.choice(["United-States", "Mexico", "Philippines"], n, p=[0.9, 0.06, 0.04]),
            "income": np.where(income, ">50K", "<=50K"),
        }
    )
    if path is not None:
        df.to_csv(path, header=False, index=False)
    return df


def locate_adult_file(root=None, allow_synthetic=True, n_synthetic=8000, seed=0):
    """Path to adult.data under the data root, synthesizing a stand-in when
    the real file is absent and ``allow_synthetic`` is set."""
    from .colored_mnist import DATA_ROOT_ENV

    root = Path(root or os.environ.get(DATA_ROOT_ENV, "."))
    for candidate in (root / "adult" / "adult.data", root / "adult.data"):
        if candidate.exists():
            return candidate, "adult"
    if not allow_synthetic:
        raise IngestionError(f"adult.data not found under {root}")
    target = root / "adult_synthetic.csv"
    if not target.exists():
        target.parent.mkdir(parents=True, exist_ok=True)
        synthesize_adult_like(n_synthetic, seed, target)
    return target, "adult-synthetic"
