"""Model explanation: feature importance, sensitivity, and the
important-sensitive feature selection that narrows an attack to the features
worth perturbing.

Importance follows the sampling approximation of Shapley values: draw a row
and a feature permutation, reveal features one by one (hidden features are
imputed from the training marginals), and credit each feature with the loss
drop it causes on arrival. A mutual-information screen removes features that
carry no signal about the label before any sampling happens; screened
features are not players and score exactly zero.

Sensitivity measures how far restricted attacks get when only a chosen
feature subset may move. Selection keeps the top-ranked important features
whose sensitivity clears a threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .attack import AttackConfig, minmax_attack
from .dataset import Dataset
from .errors import EmptyDatasetError, EmptyFeatureSetError, TooManyPlayersError
from .models import EnsembleModel, TrainedModel, ensemble_predict, make_ensemble

__all__ = [
    "bce_loss",
    "mutual_info_screen",
    "FAIReport",
    "compute_fai",
    "exact_shapley",
    "feature_sensitivity",
    "sensitivity_scores",
    "ISFSSelection",
    "isfs_select",
    "isfs_pipeline",
    "jaccard",
]


def bce_loss(p, y):
    """Binary cross entropy with probability clipping for stability."""
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def _predict(model, X):
    if isinstance(model, EnsembleModel):
        return ensemble_predict(model, X)
    return model.predict_proba(X)


def mutual_info_screen(
    ds: Dataset, threshold: float = 0.01, bins: int = 16
) -> tuple[np.ndarray, list[int]]:
    """Equal-width-binned mutual information I(Y; X_i) in nats, per feature.

    Returns (mi values, sorted indices with mi strictly below ``threshold``).
    Constant features land in a single bin and score 0.
    """
    if ds.n_rows == 0:
        raise EmptyDatasetError("mutual information needs rows")
    m, n = ds.X.shape
    mi = np.zeros(n)
    y = ds.y
    p_y = np.array([(y == 0).mean(), (y == 1).mean()])
    for i in range(n):
        col = ds.X[:, i]
        lo, hi = col.min(), col.max()
        if hi == lo:
            continue
        cells = np.minimum(((col - lo) / (hi - lo) * bins).astype(int), bins - 1)
        total = 0.0
        for b in range(bins):
            in_b = cells == b
            p_b = in_b.mean()
            if p_b == 0.0:
                continue
            for c in (0, 1):
                p_bc = (in_b & (y == c)).mean()
                if p_bc > 0.0 and p_y[c] > 0.0:
                    total += p_bc * math.log(p_bc / (p_b * p_y[c]))
        mi[i] = max(total, 0.0)
    screened = [i for i in range(n) if mi[i] < threshold]
    return mi, screened


@dataclass
class FAIReport:
    """Per-feature importance estimates plus everything needed to rerun them."""

    values: np.ndarray
    screened: list[int]
    outer_samples: int
    inner_samples: int
    seed: int
    feature_names: list[str] = field(default_factory=list)

    def ranking(self) -> list[int]:
        """Feature indices by importance, descending; ties keep lower index."""
        return list(np.argsort(-self.values, kind="stable"))

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "screened": list(self.screened),
            "outer_samples": self.outer_samples,
            "inner_samples": self.inner_samples,
            "seed": self.seed,
            "feature_names": list(self.feature_names),
        }

    @staticmethod
    def from_dict(d: dict) -> "FAIReport":
        return FAIReport(
            values=np.asarray(d["values"], dtype=float),
            screened=list(d["screened"]),
            outer_samples=int(d["outer_samples"]),
            inner_samples=int(d["inner_samples"]),
            seed=int(d["seed"]),
            feature_names=list(d.get("feature_names", [])),
        )


def compute_fai(
    model,
    ds: Dataset,
    outer_samples: int = 2000,
    inner_samples: int = 8,
    seed: int = 0,
    screened=(),
) -> FAIReport:
    """Sampling-based Shapley feature importance of ``model``'s loss on ``ds``.

    ``screened`` features are excluded from the game entirely: never revealed,
    always imputed, importance exactly 0. Loss is binary cross entropy against
    the row's label; the empty-set baseline is the model's mean prediction
    over ``ds``.
    """
    if ds.n_rows == 0:
        raise EmptyDatasetError("importance sampling needs rows")
    if outer_samples < 1 or inner_samples < 1:
        raise ValueError("sample counts must be positive")
    X, y = ds.X, ds.y
    m, n = X.shape
    screened = sorted(set(int(i) for i in screened))
    active = np.array([i for i in range(n) if i not in set(screened)], dtype=int)
    values = np.zeros(n)
    if active.size == 0:
        return FAIReport(values, screened, outer_samples, inner_samples, seed,
                         list(ds.schema.names))

    rng = np.random.default_rng(seed)
    f_empty = float(np.mean(_predict(model, X)))
    n_act, q = active.size, inner_samples
    # block the outer loop so model calls see large batches
    block = max(1, int(2_000_000 // max(1, n_act * q * n)))
    done = 0
    cols = np.arange(n)
    while done < outer_samples:
        B = min(block, outer_samples - done)
        rows = rng.integers(0, m, size=B)
        xb, yb = X[rows], y[rows]
        perm = active[np.argsort(rng.random((B, n_act)), axis=1)]
        onehot = np.zeros((B, n_act, n), dtype=bool)
        onehot[np.arange(B)[:, None], np.arange(n_act)[None, :], perm] = True
        known = np.cumsum(onehot, axis=1) > 0  # revealed set after step j
        draw_rows = rng.integers(0, m, size=(B, n_act, q, n))
        marginal = X[draw_rows, cols[None, None, None, :]]
        imputed = np.where(known[:, :, None, :], xb[:, None, None, :], marginal)
        probs = np.asarray(_predict(model, imputed.reshape(-1, n))).reshape(B, n_act, q)
        losses = bce_loss(probs.mean(axis=2), yb[:, None])
        prev = np.concatenate(
            [bce_loss(np.full(B, f_empty), yb)[:, None], losses[:, :-1]], axis=1
        )
        np.add.at(values, perm.ravel(), (prev - losses).ravel())
        done += B
    values /= outer_samples
    return FAIReport(values, screened, outer_samples, inner_samples, seed,
                     list(ds.schema.names))


def exact_shapley(value_function, n_players: int) -> np.ndarray:
    """Exact Shapley values by full subset enumeration (n <= 12).

    ``value_function`` receives a sorted tuple of player indices and is called
    once per subset.
    """
    if n_players > 12:
        raise TooManyPlayersError(f"{n_players} players exceed the 12-player cap")
    if n_players < 1:
        raise EmptyFeatureSetError("need at least one player")
    subset_value = {}
    for mask in range(1 << n_players):
        subset = tuple(i for i in range(n_players) if mask >> i & 1)
        subset_value[mask] = float(value_function(subset))
    fact = [math.factorial(k) for k in range(n_players + 1)]
    denom = fact[n_players]
    phi = np.zeros(n_players)
    for mask in range(1 << n_players):
        s = bin(mask).count("1")
        weight = fact[s] * fact[n_players - s - 1] / denom
        for i in range(n_players):
            if mask >> i & 1:
                continue
            phi[i] += weight * (subset_value[mask | 1 << i] - subset_value[mask])
    return phi


def feature_sensitivity(
    model,
    ds: Dataset,
    features,
    budget: int = 50,
    mode: str = "asr",
    cfg: AttackConfig | None = None,
    normalizer=None,
    seed: int = 0,
) -> float:
    """How much evasion a restricted attack achieves when only ``features``
    may move.

    Up to ``budget`` malicious rows are attacked with the perturbation mask
    narrowed to the given features (names or indices). Mode "asr" is the
    success fraction among rows the model detected beforehand; mode
    "degradation" is the relative drop in detection recall over the attacked
    rows. Both are 0 when the restricted attack flips nothing.
    """
    if mode not in ("asr", "degradation"):
        raise ValueError(f"unknown sensitivity mode {mode!r}")
    if budget < 1:
        raise ValueError("budget must be positive")
    features = list(features)
    if not features:
        raise EmptyFeatureSetError("sensitivity needs a non-empty feature set")
    idx = [ds.schema.index_of(f) if isinstance(f, str) else int(f) for f in features]
    ens = model if isinstance(model, EnsembleModel) else make_ensemble([model])
    cfg = cfg or AttackConfig()

    mal = ds.X[ds.y == 1]
    if mal.shape[0] == 0:
        raise EmptyDatasetError("sensitivity needs malicious rows")
    rng = np.random.default_rng(seed)
    take = rng.choice(mal.shape[0], size=min(budget, mal.shape[0]), replace=False)
    rows = mal[take]

    mask = np.zeros(ds.schema.n_features, dtype=bool)
    mask[idx] = True
    detected_before = _detected(ens, rows)
    flipped = np.zeros(rows.shape[0], dtype=bool)
    for r in range(rows.shape[0]):
        if not detected_before[r]:
            continue
        out = minmax_attack(
            ens,
            rows[r],
            ds.schema,
            replace(cfg, feature_mask=mask, seed=seed * 100003 + r),
            normalizer=normalizer,
        )
        flipped[r] = out.success

    n_detected = int(detected_before.sum())
    if mode == "asr":
        return float(flipped.sum() / n_detected) if n_detected else 0.0
    recall_before = n_detected / rows.shape[0]
    if recall_before == 0.0:
        return 0.0
    recall_after = (detected_before & ~flipped).sum() / rows.shape[0]
    return float((recall_before - recall_after) / recall_before)


def _detected(ens: EnsembleModel, rows: np.ndarray) -> np.ndarray:
    hit = np.zeros(rows.shape[0], dtype=bool)
    for member in ens.members:
        hit |= member.predict_proba(rows) >= member.threshold
    return hit


def sensitivity_scores(
    model, ds, indices, budget=50, mode="asr", cfg=None, normalizer=None, seed=0
) -> dict[int, float]:
    """Singleton sensitivity per feature index (the per-feature FS scores)."""
    return {
        int(i): feature_sensitivity(
            model, ds, [int(i)], budget, mode, cfg, normalizer, seed + int(i)
        )
        for i in indices
    }


@dataclass
class ISFSSelection:
    """Outcome of important-sensitive feature selection.

    ``labels`` holds one of "non_robust" / "robust" / "unimportant" per
    feature; ``selected`` is the attack feature set (possibly empty, which is
    a flagged condition rather than an error).
    """

    labels: list[str]
    selected: list[int]
    top: list[int]
    top_count: int
    sensitivity_threshold: float
    select_count: int | None
    fai_values: np.ndarray
    sensitivity: dict[int, float]

    @property
    def empty(self) -> bool:
        return len(self.selected) == 0

    def mask(self) -> np.ndarray:
        out = np.zeros(len(self.labels), dtype=bool)
        out[self.selected] = True
        return out

    def selected_names(self, schema) -> list[str]:
        return [schema.names[i] for i in self.selected]

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "selected": list(self.selected),
            "top": list(self.top),
            "top_count": self.top_count,
            "sensitivity_threshold": self.sensitivity_threshold,
            "select_count": self.select_count,
            "fai_values": [float(v) for v in self.fai_values],
            "sensitivity": {str(k): float(v) for k, v in self.sensitivity.items()},
        }

    @staticmethod
    def from_dict(d: dict) -> "ISFSSelection":
        return ISFSSelection(
            labels=list(d["labels"]),
            selected=list(d["selected"]),
            top=list(d["top"]),
            top_count=int(d["top_count"]),
            sensitivity_threshold=float(d["sensitivity_threshold"]),
            select_count=d["select_count"],
            fai_values=np.asarray(d["fai_values"], dtype=float),
            sensitivity={int(k): float(v) for k, v in d["sensitivity"].items()},
        )


def isfs_select(
    fai_values,
    sensitivity: dict[int, float],
    top_count: int = 10,
    sensitivity_threshold: float = 0.33,
    select_count: int | None = None,
) -> ISFSSelection:
    """Classify features and pick the attack set.

    The ``top_count`` features by importance (ties to the lower index) are
    candidates; candidates with sensitivity strictly above the threshold are
    non-robust, the rest robust, everything else unimportant. The selection is
    the ``select_count`` highest-importance non-robust features (all of them
    when None).
    """
    fai_values = np.asarray(fai_values, dtype=float)
    if top_count < 1:
        raise ValueError("top_count must be positive")
    order = np.argsort(-fai_values, kind="stable")
    top = [int(i) for i in order[:top_count]]
    missing = [i for i in top if i not in sensitivity]
    if missing:
        raise KeyError(f"sensitivity missing for top features {missing}")
    labels = ["unimportant"] * fai_values.shape[0]
    non_robust = []
    for i in top:
        if sensitivity[i] > sensitivity_threshold:
            labels[i] = "non_robust"
            non_robust.append(i)
        else:
            labels[i] = "robust"
    selected = non_robust if select_count is None else non_robust[:select_count]
    return ISFSSelection(
        labels=labels,
        selected=selected,
        top=top,
        top_count=top_count,
        sensitivity_threshold=sensitivity_threshold,
        select_count=select_count,
        fai_values=fai_values,
        sensitivity={int(k): float(v) for k, v in sensitivity.items()},
    )


def isfs_pipeline(
    model,
    ds: Dataset,
    fai: FAIReport,
    top_count: int = 10,
    sensitivity_threshold: float = 0.33,
    select_count: int | None = None,
    budget: int = 50,
    mode: str = "asr",
    cfg: AttackConfig | None = None,
    normalizer=None,
    seed: int = 0,
) -> ISFSSelection:
    """Sensitivity for the importance top list, then selection."""
    order = fai.ranking()
    top = order[:top_count]
    sens = sensitivity_scores(model, ds, top, budget, mode, cfg, normalizer, seed)
    return isfs_select(fai.values, sens, top_count, sensitivity_threshold, select_count)


def jaccard(a, b) -> float:
    """Intersection over union of two index sets; two empty sets count as 1."""
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)
