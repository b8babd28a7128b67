"""Tabular dataset loading, encoding, normalization and splitting."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "?", "na", "nan", "null", "none"})
BUNDLED = {"iris": ("iris.csv", "species"), "haberman": ("haberman.csv", "survival")}


class DataError(Exception):
    """Base class for dataset problems."""


class CsvParseError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class SingleClassError(DataError):
    pass


@dataclass
class Dataset:
    """Feature matrix plus integer labels and the metadata to interpret them.

    ``lo``/``hi`` are the per-feature min/max (original units) used for
    min-max scaling; they are set once :func:`normalize` has been applied.
    ``categories`` maps a categorical column name to its ordinal codes.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    class_names: list[str]
    categories: dict[str, list[str]] = field(default_factory=dict)
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    constant: np.ndarray | None = None
    n_dropped: int = 0
    name: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"X shape {self.X.shape} does not match {self.y.shape[0]} labels")
        if self.X.shape[1] != len(self.feature_names):
            raise DataError("feature_names length does not match X")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def normalized(self) -> bool:
        return self.lo is not None

    def subset(self, index) -> "Dataset":
        return replace(self, X=self.X[index], y=self.y[index])

    def select_features(self, features: Sequence[int]) -> "Dataset":
        features = list(features)
        return replace(
            self,
            X=self.X[:, features],
            feature_names=[self.feature_names[i] for i in features],
            lo=None if self.lo is None else self.lo[features],
            hi=None if self.hi is None else self.hi[features],
            constant=None if self.constant is None else self.constant[features],
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        h.update("\x1f".join(self.feature_names + self.class_names).encode())
        return h.hexdigest()


def _is_missing(token: str) -> bool:
    return token.strip().lower() in MISSING_TOKENS


def _as_float(token: str) -> float | None:
    try:
        return float(token)
    except ValueError:
        return None


def load_csv(
    path,
    label_col: str | int | None = None,
    categorical: Sequence[str] = (),
    categories: dict[str, list[str]] | None = None,
    class_names: Sequence[str] | None = None,
    name: str | None = None,
) -> Dataset:
    """Read a headed CSV into a :class:`Dataset` (not yet normalized).

    The label column defaults to the last column. Columns listed in
    ``categorical`` or containing any non-numeric value are ordinal-encoded
    by first appearance, unless ``categories`` fixes the code order (as when
    re-reading data for a saved model). Rows with a missing value anywhere
    are dropped and counted in ``n_dropped``.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise CsvParseError(f"cannot read {path}: {exc}") from exc
    if not rows or not any(h.strip() for h in rows[0]):
        raise CsvParseError(f"{path}: missing header")
    header = [h.strip() for h in rows[0]]
    # blank lines are skipped; rows of empty fields count as missing
    body = [r for r in rows[1:] if r and not (len(r) == 1 and not r[0].strip())]
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise CsvParseError(f"{path}:{lineno}: expected {len(header)} fields, found {len(r)}")

    if label_col is None:
        label_idx = len(header) - 1
    elif isinstance(label_col, int):
        label_idx = label_col
    elif label_col in header:
        label_idx = header.index(label_col)
    else:
        raise CsvParseError(f"{path}: label column {label_col!r} not in header {header}")

    kept = [r for r in body if not any(_is_missing(c) for c in r)]
    n_dropped = len(body) - len(kept)
    if n_dropped:
        logger.info("%s: dropped %d row(s) with missing values", path.name, n_dropped)
    if not kept:
        raise EmptyDatasetError(f"{path}: no rows left after dropping missing values")

    feature_idx = [i for i in range(len(header)) if i != label_idx]
    unknown = set(categorical) - set(header)
    if unknown:
        raise CsvParseError(f"{path}: unknown categorical column(s) {sorted(unknown)}")
    categories = {k: list(v) for k, v in (categories or {}).items()}
    columns = []
    for i in feature_idx:
        col = [r[i].strip() for r in kept]
        fname = header[i]
        values = [_as_float(c) for c in col]
        if fname in categories or fname in categorical or any(v is None for v in values):
            codes = categories.setdefault(fname, [])
            for c in col:
                if c not in codes:
                    codes.append(c)
            values = [float(codes.index(c)) for c in col]
        columns.append(values)

    labels = [r[label_idx].strip() for r in kept]
    classes = list(class_names) if class_names is not None else list(dict.fromkeys(labels))
    missing_cls = set(labels) - set(classes)
    if missing_cls:
        raise DataError(f"{path}: labels {sorted(missing_cls)} not among known classes")
    if len(set(labels)) < 2 and class_names is None:
        raise SingleClassError(f"{path}: labels contain a single class {classes}")
    index = {c: k for k, c in enumerate(classes)}

    return Dataset(
        X=np.array(columns, dtype=np.float64).T.reshape(len(kept), len(feature_idx)),
        y=np.array([index[c] for c in labels]),
        feature_names=[header[i] for i in feature_idx],
        class_names=classes,
        categories={k: v for k, v in categories.items() if k in header},
        n_dropped=n_dropped,
        name=name or path.stem,
    )


def bundled_path(name: str) -> Path:
    fname, _ = BUNDLED[name]
    return Path(str(resources.files("dndt.datasets").joinpath(fname)))


def load_bundled(name: str) -> Dataset:
    """Load one of the bundled datasets (``iris`` or ``haberman``)."""
    if name not in BUNDLED:
        raise DataError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED)}")
    _, label = BUNDLED[name]
    return load_csv(bundled_path(name), label_col=label, name=name)


def fit_normalizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    return lo, hi, hi <= lo


def apply_normalizer(X, lo, hi) -> np.ndarray:
    span = hi - lo
    constant = span <= 0
    scaled = (X - lo) / np.where(constant, 1.0, span)
    scaled[:, constant] = 0.5
    return np.clip(scaled, 0.0, 1.0)


def normalize(dataset: Dataset, reference: Dataset | None = None) -> Dataset:
    """Min-max scale features into [0, 1].

    Parameters come from ``reference`` (typically the training split) when
    given, else from ``dataset`` itself. Values outside the reference range
    are clipped. Constant features map to 0.5 and are flagged.
    """
    if dataset.normalized:
        raise DataError("dataset is already normalized")
    if reference is None:
        lo, hi, constant = fit_normalizer(dataset.X)
    else:
        if reference.normalized:
            raise DataError("reference must be in original units")
        lo, hi, constant = fit_normalizer(reference.X)
    if constant.any():
        logger.warning("constant feature(s) mapped to 0.5: %s",
                       [dataset.feature_names[i] for i in np.flatnonzero(constant)])
    return replace(dataset, X=apply_normalizer(dataset.X, lo, hi), lo=lo, hi=hi, constant=constant)


def denormalize(value, feature: int, lo, hi):
    """Map a normalized value of ``feature`` back to original units."""
    return lo[feature] + np.asarray(value, dtype=np.float64) * (hi[feature] - lo[feature])


def denormalize_cutpoint(value, feature: int, dataset: Dataset):
    if not dataset.normalized:
        raise DataError("dataset carries no normalization parameters")
    return denormalize(value, feature, dataset.lo, dataset.hi)


def split(dataset: Dataset, fraction: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test index split, deterministic under ``seed``."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.y == c)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise DataError(f"class {dataset.class_names[c]!r} has a single instance; cannot stratify")
        idx = rng.permutation(idx)
        k = min(max(int(round(fraction * idx.size)), 1), idx.size - 1)
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def train_test(dataset: Dataset, fraction: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Split, then normalize both parts with training-split statistics."""
    tr_idx, te_idx = split(dataset, fraction, seed)
    train_raw = dataset.subset(tr_idx)
    return normalize(train_raw), normalize(dataset.subset(te_idx), reference=train_raw)
