"""Detector zoo: training, prediction, analytic input gradients, persistence.

Six kinds behind one interface: logistic regression, a small ReLU MLP, a
decision tree, a random forest, gradient-boosted trees, and an
autoencoder-ensemble anomaly detector trained on benign rows only. All expose
a malicious-probability ``predict_proba`` over row batches; logistic
regression and the MLP additionally expose the exact input gradient of that
probability.

Training is delegated to scikit-learn with pinned seeds. The prediction path
for the differentiable kinds is re-derived from the fitted coefficients in
plain numpy so that value and gradient come from the same arithmetic.
"""

from __future__ import annotations

import math
import pickle
from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import GradientBoostingClassifier, RandomForestClassifier
from sklearn.linear_model import LogisticRegression
from sklearn.neural_network import MLPClassifier, MLPRegressor
from sklearn.tree import DecisionTreeClassifier

from .dataset import Dataset
from .errors import (
    DegenerateDataError,
    DimensionMismatchError,
    IoFailureError,
    NotDifferentiableError,
    SingleClassDataError,
)

__all__ = [
    "MODEL_KINDS",
    "TrainedModel",
    "EnsembleModel",
    "train_model",
    "make_ensemble",
    "ensemble_predict",
    "save_model",
    "load_model",
]

MODEL_KINDS = (
    "logistic_regression",
    "mlp",
    "decision_tree",
    "random_forest",
    "gradient_boosting",
    "autoencoder_ensemble",
)

_DIFFERENTIABLE = {"logistic_regression", "mlp"}


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


class _AutoencoderEnsemble:
    """Feature-subset autoencoders; score = mean member reconstruction RMSE."""

    def __init__(self, members):
        self.members = members  # list of (index array, fitted MLPRegressor)

    def score(self, X: np.ndarray) -> np.ndarray:
        total = np.zeros(X.shape[0])
        for idx, reg in self.members:
            sub = X[:, idx]
            rec = reg.predict(sub)
            if rec.ndim == 1:
                rec = rec[:, None]
            total += np.sqrt(np.mean((sub - rec) ** 2, axis=1))
        return total / len(self.members)


@dataclass
class TrainedModel:
    """A fitted detector bound to a feature order and a decision threshold.

    ``threshold`` lives in probability space; a row is flagged malicious when
    predict_proba >= threshold. The anomaly kind calibrates its raw score s to
    s/(s+tau), which lands its score threshold tau exactly on 0.5, so the same
    rule covers every kind. ``score_threshold`` keeps the uncalibrated tau for
    inspection.
    """

    kind: str
    feature_names: list[str]
    impl: object = field(compare=False, repr=False)
    threshold: float = 0.5
    seed: int = 0
    hyper: dict = field(default_factory=dict)
    score_threshold: float | None = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def differentiable(self) -> bool:
        return self.kind in _DIFFERENTIABLE

    def _check(self, X: np.ndarray) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatchError(
                f"model expects {self.n_features} features, got {X.shape[1]}"
            )
        return X, single

    def predict_proba(self, X):
        """Malicious probability; scalar in, scalar out."""
        X, single = self._check(X)
        if self.kind == "logistic_regression":
            coef, intercept = self.impl
            p = _sigmoid(X @ coef + intercept)
        elif self.kind == "mlp":
            p = self._mlp_forward(X)[0]
        elif self.kind == "autoencoder_ensemble":
            s = self.impl.score(X)
            p = s / (s + self.score_threshold)
        else:
            clf = self.impl
            col = list(clf.classes_).index(1)
            p = clf.predict_proba(X)[:, col]
        return float(p[0]) if single else p

    def predict_label(self, X):
        p = self.predict_proba(X)
        if np.isscalar(p):
            return int(p >= self.threshold)
        return (p >= self.threshold).astype(int)

    def _mlp_forward(self, X):
        coefs, intercepts = self.impl
        acts = [X]
        h = X
        for W, b in zip(coefs[:-1], intercepts[:-1]):
            h = np.maximum(h @ W + b, 0.0)
            acts.append(h)
        z = (h @ coefs[-1] + intercepts[-1]).ravel()
        return _sigmoid(z), acts

    def analytic_gradient(self, x) -> np.ndarray:
        """d predict_proba / dx at a single point."""
        if not self.differentiable:
            raise NotDifferentiableError(f"{self.kind} has no analytic gradient")
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != self.n_features:
            raise DimensionMismatchError("gradient expects one feature vector")
        if self.kind == "logistic_regression":
            coef, intercept = self.impl
            p = float(_sigmoid(x @ coef + intercept))
            return p * (1.0 - p) * coef
        coefs, intercepts = self.impl
        p, acts = self._mlp_forward(x[None, :])
        delta = coefs[-1].ravel().copy()  # dz/dh for the output layer
        for W, act in zip(reversed(coefs[:-1]), reversed(acts[1:])):
            delta = W @ (delta * (act[0] > 0))
        return float(p[0] * (1.0 - p[0])) * delta


def _require_both_classes(ds: Dataset):
    if len(np.unique(ds.y)) < 2:
        raise SingleClassDataError("supervised training needs both classes")


def train_model(
    kind: str,
    ds: Dataset,
    seed: int = 0,
    threshold: float = 0.5,
    **hyper,
) -> TrainedModel:
    """Fit one detector on (the relevant rows of) ``ds``.

    Supervised kinds use every row and need both classes; the anomaly kind
    trains on benign rows only and sets its score threshold at the
    ``benign_quantile`` (default 0.95) of its own training scores.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly inside (0, 1)")
    names = ds.schema.names
    if kind == "autoencoder_ensemble":
        return _train_autoencoder(ds, seed, threshold, names, hyper)
    _require_both_classes(ds)

    if kind == "logistic_regression":
        clf = LogisticRegression(
            C=hyper.get("C", 1.0), max_iter=hyper.get("max_iter", 1000)
        )
        clf.fit(ds.X, ds.y)
        col = list(clf.classes_).index(1)
        sign = 1.0 if col == 1 else -1.0
        impl = (sign * clf.coef_[0], sign * float(clf.intercept_[0]))
    elif kind == "mlp":
        hidden = tuple(hyper.get("hidden", (32,)))
        if not 1 <= len(hidden) <= 2:
            raise ValueError("mlp supports one or two hidden layers")
        clf = MLPClassifier(
            hidden_layer_sizes=hidden,
            activation="relu",
            random_state=seed,
            max_iter=hyper.get("max_iter", 400),
            alpha=hyper.get("alpha", 1e-4),
            learning_rate_init=hyper.get("learning_rate_init", 1e-3),
        )
        clf.fit(ds.X, ds.y)
        impl = ([W.copy() for W in clf.coefs_], [b.copy() for b in clf.intercepts_])
    elif kind == "decision_tree":
        clf = DecisionTreeClassifier(
            max_depth=hyper.get("max_depth"),
            min_samples_leaf=hyper.get("min_samples_leaf", 1),
            random_state=seed,
        )
        impl = clf.fit(ds.X, ds.y)
    elif kind == "random_forest":
        clf = RandomForestClassifier(
            n_estimators=hyper.get("n_estimators", 100),
            max_depth=hyper.get("max_depth"),
            random_state=seed,
            n_jobs=1,
        )
        impl = clf.fit(ds.X, ds.y)
    else:  # gradient_boosting
        clf = GradientBoostingClassifier(
            n_estimators=hyper.get("n_estimators", 100),
            learning_rate=hyper.get("learning_rate", 0.1),
            max_depth=hyper.get("max_depth", 3),
            random_state=seed,
        )
        impl = clf.fit(ds.X, ds.y)

    return TrainedModel(
        kind=kind, feature_names=list(names), impl=impl, threshold=threshold,
        seed=seed, hyper=dict(hyper),
    )


def _train_autoencoder(ds, seed, threshold, names, hyper):
    benign = ds.benign()
    if benign.n_rows == 0:
        raise DegenerateDataError("anomaly training needs benign rows")
    n = len(names)
    n_members = min(hyper.get("n_members", 3), n)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    chunks = np.array_split(order, n_members)
    members = []
    for ci, idx in enumerate(chunks):
        idx = np.sort(idx)
        d = len(idx)
        hidden = hyper.get("hidden") or (max(1, math.ceil(0.75 * d)),)
        reg = MLPRegressor(
            hidden_layer_sizes=tuple(hidden),
            activation="relu",
            random_state=seed + ci,
            max_iter=hyper.get("max_iter", 500),
        )
        target = benign.X[:, idx]
        reg.fit(target, target.ravel() if d == 1 else target)
        members.append((idx, reg))
    impl = _AutoencoderEnsemble(members)
    scores = impl.score(benign.X)
    tau = float(np.quantile(scores, hyper.get("benign_quantile", 0.95)))
    tau = max(tau, 1e-12)
    return TrainedModel(
        kind="autoencoder_ensemble", feature_names=list(names), impl=impl,
        threshold=threshold, seed=seed, hyper=dict(hyper), score_threshold=tau,
    )


@dataclass
class EnsembleModel:
    """Weighted substitute committee; weights live on the probability simplex."""

    members: list[TrainedModel]
    weights: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.members) == 0:
            raise ValueError("ensemble needs at least one member")
        if self.weights.shape != (len(self.members),):
            raise DimensionMismatchError("one weight per member required")
        if np.any(self.weights < -1e-12) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a point on the simplex")
        widths = {m.n_features for m in self.members}
        if len(widths) != 1:
            raise DimensionMismatchError("members disagree on feature count")

    @property
    def n_features(self) -> int:
        return self.members[0].n_features


def make_ensemble(members, gamma: float = 1.0) -> EnsembleModel:
    k = len(members)
    return EnsembleModel(list(members), np.full(k, 1.0 / k), gamma)


def ensemble_predict(ens: EnsembleModel, X):
    """Weighted mean of member malicious probabilities."""
    single = np.asarray(X).ndim == 1
    out = 0.0
    for w, m in zip(ens.weights, ens.members):
        out = out + w * m.predict_proba(X)
    return float(out) if single else out


_FORMAT = "etabench-model"
_VERSION = 1


def save_model(model, path) -> None:
    """Persist a TrainedModel or EnsembleModel (versioned pickle envelope)."""
    envelope = {"format": _FORMAT, "version": _VERSION, "object": model}
    try:
        with open(path, "wb") as fh:
            pickle.dump(envelope, fh)
    except OSError as exc:
        raise IoFailureError(f"cannot write model {path}: {exc}") from exc


def load_model(path):
    try:
        with open(path, "rb") as fh:
            envelope = pickle.load(fh)
    except (OSError, pickle.PickleError, EOFError) as exc:
        raise IoFailureError(f"cannot read model {path}: {exc}") from exc
    if (
        not isinstance(envelope, dict)
        or envelope.get("format") != _FORMAT
        or envelope.get("version") != _VERSION
    ):
        raise IoFailureError(f"{path} is not a supported model file")
    return envelope["object"]
