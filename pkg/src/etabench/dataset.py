"""Dataset loading, splitting, valid-range fitting and normalization."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    IoFailureError,
    MissingColumnError,
)
from .schema import ConstraintKind, FeatureSchema, FeatureSpec

__all__ = [
    "Dataset",
    "load_csv_dataset",
    "split_dataset",
    "fit_valid_ranges",
    "Normalizer",
    "fit_normalizer",
    "select_features",
]


@dataclass
class Dataset:
    """Feature matrix, binary labels (0 benign / 1 malicious) and their schema.

    ``dropped_rows`` counts rows discarded during CSV cleaning; splits and
    subsets carry 0 there.
    """

    X: np.ndarray
    y: np.ndarray
    schema: FeatureSchema
    dropped_rows: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DimensionMismatchError("X and y row counts disagree")
        if self.X.shape[1] != self.schema.n_features:
            raise DimensionMismatchError(
                f"matrix has {self.X.shape[1]} columns, schema expects "
                f"{self.schema.n_features}"
            )

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.schema)

    def malicious(self) -> "Dataset":
        return self.subset(self.y == 1)

    def benign(self) -> "Dataset":
        return self.subset(self.y == 0)


def load_csv_dataset(
    path,
    schema: FeatureSchema,
    benign_label: str = "0",
    malicious_label: str = "1",
) -> Dataset:
    """Read a CSV into the schema's feature order.

    Rows with unparseable or non-finite feature values, or labels outside the
    configured pair, are dropped and counted in ``Dataset.dropped_rows``.
    Extra CSV columns are ignored.
    """
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except OSError as exc:
        raise IoFailureError(f"cannot read {path}: {exc}") from exc
    except pd.errors.EmptyDataError:
        raise EmptyDatasetError(f"{path} has no rows")

    missing = [c for c in schema.names + [schema.label_column] if c not in frame.columns]
    if missing:
        raise MissingColumnError(f"{path} lacks columns: {', '.join(missing)}")

    n_raw = len(frame)
    feats = frame[schema.names].apply(pd.to_numeric, errors="coerce")
    X = feats.to_numpy(dtype=float)

    labels = frame[schema.label_column].astype(str).str.strip()
    y = np.full(n_raw, np.nan)
    y[labels == benign_label] = 0.0
    y[labels == malicious_label] = 1.0
    # numeric label columns: "0.0" should still match a configured "0"
    for configured, value in ((benign_label, 0.0), (malicious_label, 1.0)):
        try:
            target = float(configured)
        except ValueError:
            continue
        numeric = pd.to_numeric(labels, errors="coerce").to_numpy()
        y[np.isnan(y) & (numeric == target)] = value

    keep = np.isfinite(X).all(axis=1) & ~np.isnan(y)
    dropped = int(n_raw - keep.sum())
    if keep.sum() == 0:
        raise EmptyDatasetError(f"{path}: no usable rows after cleaning")
    return Dataset(X[keep], y[keep].astype(int), schema, dropped_rows=dropped)


def split_dataset(
    ds: Dataset, seed: int, ratios: tuple[int, int, int] = (3, 1, 1)
) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle with ``seed`` and split train/val/test by integer ratios.

    Sizes are floor(n / sum(ratios)) units per part; the remainder goes to
    train, so 5000 rows at 3:1:1 give (3000, 1000, 1000) and 7 give (5, 1, 1).
    """
    if ds.n_rows == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    r_train, r_val, r_test = ratios
    unit = ds.n_rows // (r_train + r_val + r_test)
    n_val, n_test = unit * r_val, unit * r_test
    order = np.random.default_rng(seed).permutation(ds.n_rows)
    n_train = ds.n_rows - n_val - n_test
    return (
        ds.subset(order[:n_train]),
        ds.subset(order[n_train : n_train + n_val]),
        ds.subset(order[n_train + n_val :]),
    )


def fit_valid_ranges(schema: FeatureSchema, ds: Dataset) -> FeatureSchema:
    """Return ``schema`` with each clip feature's range set to the observed
    (min, max) over the malicious rows of ``ds``.

    Ranges express what the traffic of this attack type has been seen to do,
    so only malicious rows inform them.
    """
    mal = ds.X[ds.y == 1]
    if mal.shape[0] == 0:
        raise EmptyDatasetError("valid ranges need at least one malicious row")
    if ds.schema.names != schema.names:
        raise DimensionMismatchError("dataset schema disagrees with target schema")
    fitted = []
    for i, spec in enumerate(schema.features):
        if spec.kind is ConstraintKind.RANGE_CLIPPED:
            rng = (float(mal[:, i].min()), float(mal[:, i].max()))
            fitted.append(replace(spec, valid_range=rng))
        else:
            fitted.append(spec)
    return schema.with_features(fitted)


@dataclass
class Normalizer:
    """Per-feature min-max transform fitted on a training split.

    Zero-span features map to 0. Values outside the fitted range are not
    clamped; constraint handling is the remap step's job, not the scaler's.
    """

    mins: np.ndarray
    spans: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.mins.shape[0]:
            raise DimensionMismatchError("normalizer width disagrees with input")
        safe = np.where(self.spans == 0.0, 1.0, self.spans)
        out = (X - self.mins) / safe
        return np.where(self.spans == 0.0, 0.0, out)

    def inverse(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.mins.shape[0]:
            raise DimensionMismatchError("normalizer width disagrees with input")
        return X * self.spans + self.mins

    def apply(self, ds: Dataset) -> Dataset:
        return Dataset(self.transform(ds.X), ds.y, ds.schema)


def fit_normalizer(ds: Dataset) -> Normalizer:
    if ds.n_rows == 0:
        raise EmptyDatasetError("cannot fit a normalizer on an empty dataset")
    mins = ds.X.min(axis=0)
    return Normalizer(mins=mins, spans=ds.X.max(axis=0) - mins)


def select_features(ds: Dataset, names) -> Dataset:
    """Project a dataset onto the named features (order taken from ``names``).

    Derived specs whose formulas reference excluded features fall back to
    free, since the relation can no longer be evaluated in the reduced space.
    """
    names = list(names)
    kept_idx = [ds.schema.index_of(n) for n in names]
    specs = []
    kept_set = set(names)
    for n in names:
        spec = ds.schema.features[ds.schema.index_of(n)]
        if spec.kind is ConstraintKind.DERIVED and not (
            spec.formula.references <= kept_set
        ):
            spec = FeatureSpec(spec.name, ConstraintKind.FREE)
        specs.append(spec)
    reduced = FeatureSchema(ds.schema.attack_type, ds.schema.label_column, specs)
    return Dataset(ds.X[:, kept_idx], ds.y, reduced)
