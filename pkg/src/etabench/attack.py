"""Constraint-respecting min-max evasion attack with zeroth-order gradients.

The attack minimizes, over candidate vectors x', the weighted detector output
plus a distance penalty

    g(x') = sum_i w_i f_i(x') + distance_weight * ||x0 - x'||_2

while the member weights w climb toward whichever detectors still resist
(projected ascent with a pull toward uniform, strength ``weight_reg``).
Gradients in x come from masked Gaussian smoothing queries only; nothing here
reads model internals. After every descent step the candidate is remapped into
traffic-space feasibility: masked features restored, clipped features clamped
into their fitted ranges, derived features recomputed from their formulas.

Success is worst-case evasion: every member must score the candidate below
its own decision threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import Normalizer
from .errors import DimensionMismatchError
from .models import EnsembleModel
from .schema import ConstraintKind, FeatureSchema

__all__ = [
    "AttackConfig",
    "AttackOutcome",
    "Remap",
    "simplex_project",
    "objective_g",
    "zo_gradient",
    "minmax_attack",
]

log = logging.getLogger(__name__)


@dataclass
class AttackConfig:
    """Attack knobs. Defaults assume min-max normalized features.

    sampling_std is the per-coordinate deviation of the smoothing directions;
    sources working in raw feature scales quote 100, on normalized features 1
    behaves identically under the sign update.
    """

    distance_weight: float = 0.1     # lambda, L2 penalty weight
    step_size: float = 0.05          # epsilon, per-iteration signed step
    max_iterations: int = 20         # eta
    smoothing_radius: float = 0.05   # sigma
    sample_count: int = 20           # q, queries per gradient estimate
    sampling_std: float = 1.0        # zeta
    weight_reg: float = 1.0          # gamma, pull toward uniform weights
    weight_lr: float = 0.1
    seed: int = 0
    feature_mask: np.ndarray | None = None

    def __post_init__(self):
        problems = []
        if self.distance_weight < 0:
            problems.append("distance_weight must be >= 0")
        if self.step_size <= 0:
            problems.append("step_size must be > 0")
        if self.max_iterations < 0:
            problems.append("max_iterations must be >= 0")
        if self.smoothing_radius <= 0:
            problems.append("smoothing_radius must be > 0")
        if self.sample_count < 1:
            problems.append("sample_count must be >= 1")
        if self.sampling_std <= 0:
            problems.append("sampling_std must be > 0")
        if self.weight_reg < 0:
            problems.append("weight_reg must be >= 0")
        if self.weight_lr <= 0:
            problems.append("weight_lr must be > 0")
        if problems:
            raise ValueError("; ".join(problems))
        if self.feature_mask is not None:
            self.feature_mask = np.asarray(self.feature_mask, dtype=bool)


class Remap:
    """Project a candidate back into feasible traffic space.

    Order: restore masked features to the original, clamp clipped features
    into their valid ranges, recompute derived features. Derived formulas are
    physical relations, so with a normalizer present the recomputation runs in
    raw coordinates and only the derived columns are written back; the map is
    exactly idempotent either way.
    """

    def __init__(
        self,
        schema: FeatureSchema,
        x_original: np.ndarray,
        normalizer: Normalizer | None = None,
    ):
        self.schema = schema
        self.normalizer = normalizer
        x_original = np.asarray(x_original, dtype=float)
        if x_original.shape != (schema.n_features,):
            raise DimensionMismatchError("original vector disagrees with schema")
        self.masked = schema.indices_of_kind(ConstraintKind.MASKED)
        self.derived = schema.indices_of_kind(ConstraintKind.DERIVED)
        clip_idx, lo, hi = [], [], []
        for i, spec in enumerate(schema.features):
            if spec.kind is ConstraintKind.RANGE_CLIPPED and spec.valid_range:
                clip_idx.append(i)
                lo.append(spec.valid_range[0])
                hi.append(spec.valid_range[1])
        self.clip_idx = np.array(clip_idx, dtype=int)
        self.clip_lo = np.array(lo)
        self.clip_hi = np.array(hi)
        self.x_original = x_original.copy()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        y = np.array(x, dtype=float, copy=True)
        if y.shape != self.x_original.shape:
            raise DimensionMismatchError("candidate width disagrees with schema")
        if self.masked.size:
            y[self.masked] = self.x_original[self.masked]
        if self.clip_idx.size:
            y[self.clip_idx] = np.clip(y[self.clip_idx], self.clip_lo, self.clip_hi)
        if self.derived.size:
            if self.normalizer is None:
                raw = y
            else:
                raw = self.normalizer.inverse(y)
            env = {name: raw[i] for i, name in enumerate(self.schema.names)}
            for d in self.derived:
                value = self.schema.features[d].formula.evaluate(env)
                if self.normalizer is None:
                    y[d] = value
                else:
                    span = self.normalizer.spans[d]
                    y[d] = 0.0 if span == 0.0 else (value - self.normalizer.mins[d]) / span
        return y


def simplex_project(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u * idx > css - 1.0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _member_probas(ens: EnsembleModel, X: np.ndarray) -> np.ndarray:
    """(k, m) member malicious probabilities over a row batch."""
    return np.stack([m.predict_proba(X) for m in ens.members])


def _g_batch(ens, weights, x_anchor, distance_weight, X):
    dist = np.linalg.norm(X - x_anchor[None, :], axis=1)
    return weights @ _member_probas(ens, X) + distance_weight * dist


def objective_g(
    ens: EnsembleModel, x: np.ndarray, x_cand: np.ndarray, distance_weight: float
) -> float:
    """Weighted detector output at the candidate plus the distance penalty."""
    x = np.asarray(x, dtype=float)
    x_cand = np.asarray(x_cand, dtype=float)
    if x.shape != x_cand.shape:
        raise DimensionMismatchError("original and candidate widths disagree")
    return float(_g_batch(ens, ens.weights, x, distance_weight, x_cand[None, :])[0])


def zo_gradient(
    g,
    x: np.ndarray,
    smoothing_radius: float = 0.05,
    sample_count: int = 20,
    sampling_std: float = 1.0,
    mask: np.ndarray | None = None,
    rng=0,
) -> np.ndarray:
    """Zeroth-order gradient estimate of batchable objective ``g`` at ``x``.

    Directions are iid Gaussian with deviation ``sampling_std``, zeroed
    outside ``mask`` before any query, so masked coordinates contribute
    nothing and their estimate is exactly 0. The estimate is

        (1 / (q * sigma)) * sum_k (g(x + sigma u_k) - g(x)) * u_k

    ``g`` must accept an (m, n) batch and return m values; the base point and
    all queries go through g in a single call.
    """
    if smoothing_radius <= 0 or sample_count < 1 or sampling_std <= 0:
        raise ValueError("smoothing_radius, sample_count, sampling_std must be positive")
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    u = rng.normal(0.0, sampling_std, size=(sample_count, x.size))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionMismatchError("mask width disagrees with x")
        u[:, ~mask] = 0.0
    batch = np.vstack([x[None, :], x[None, :] + smoothing_radius * u])
    vals = np.asarray(g(batch), dtype=float)
    diffs = vals[1:] - vals[0]
    return diffs @ u / (sample_count * smoothing_radius)


@dataclass
class AttackOutcome:
    """One attacked sample: final candidate plus bookkeeping."""

    x_original: np.ndarray
    x_adv: np.ndarray
    success: bool
    iterations_used: int
    l2_distance: float
    per_member_evasion: list[bool]
    final_weights: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {
            "x_original": [float(v) for v in self.x_original],
            "x_adv": [float(v) for v in self.x_adv],
            "success": bool(self.success),
            "iterations_used": int(self.iterations_used),
            "l2_distance": float(self.l2_distance),
            "per_member_evasion": [bool(b) for b in self.per_member_evasion],
            "final_weights": [float(w) for w in self.final_weights],
            "seed": int(self.seed),
        }

    @staticmethod
    def from_dict(d: dict) -> "AttackOutcome":
        return AttackOutcome(
            x_original=np.asarray(d["x_original"], dtype=float),
            x_adv=np.asarray(d["x_adv"], dtype=float),
            success=bool(d["success"]),
            iterations_used=int(d["iterations_used"]),
            l2_distance=float(d["l2_distance"]),
            per_member_evasion=[bool(b) for b in d["per_member_evasion"]],
            final_weights=np.asarray(d["final_weights"], dtype=float),
            seed=int(d["seed"]),
        )


def _evasion(ens: EnsembleModel, x: np.ndarray) -> np.ndarray:
    probs = _member_probas(ens, x[None, :])[:, 0]
    return probs < np.array([m.threshold for m in ens.members])


def minmax_attack(
    ens: EnsembleModel,
    x: np.ndarray,
    schema: FeatureSchema,
    cfg: AttackConfig,
    normalizer: Normalizer | None = None,
) -> AttackOutcome:
    """Attack one malicious sample against a weighted substitute ensemble.

    Each iteration takes a signed zeroth-order descent step on the objective,
    remaps into feasibility, then re-weights members toward the ones still
    detecting the candidate. Stops as soon as every member is evaded. With
    max_iterations = 0 the outcome is just the remapped input.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (schema.n_features,):
        raise DimensionMismatchError("sample width disagrees with schema")
    if len(ens.members) and ens.n_features != schema.n_features:
        raise DimensionMismatchError("ensemble width disagrees with schema")

    remap = Remap(schema, x, normalizer)
    x0 = remap(x)
    if not (~_evasion(ens, x0)).any():
        log.warning("input evades every member before any perturbation")

    mask = schema.modifiable_mask()
    if cfg.feature_mask is not None:
        if cfg.feature_mask.shape != mask.shape:
            raise DimensionMismatchError("feature mask width disagrees with schema")
        mask = mask & cfg.feature_mask

    rng = np.random.default_rng(cfg.seed)
    k = len(ens.members)
    weights = ens.weights.copy()
    uniform = np.full(k, 1.0 / k)
    x_cur = x0
    iterations = 0
    for _ in range(cfg.max_iterations):
        if _evasion(ens, x_cur).all():
            break
        if not mask.any():
            break
        grad = zo_gradient(
            lambda rows: _g_batch(ens, weights, x0, cfg.distance_weight, rows),
            x_cur,
            cfg.smoothing_radius,
            cfg.sample_count,
            cfg.sampling_std,
            mask,
            rng,
        )
        x_cur = remap(x_cur - cfg.step_size * np.sign(grad))
        iterations += 1
        # ascent on the weights: members still scoring high pull weight in,
        # the regularizer pulls back toward uniform
        member_losses = _member_probas(ens, x_cur[None, :])[:, 0] + (
            cfg.distance_weight * np.linalg.norm(x0 - x_cur)
        )
        weights = simplex_project(
            weights
            + cfg.weight_lr * (member_losses - 2.0 * cfg.weight_reg * (weights - uniform))
        )

    evasion = _evasion(ens, x_cur)
    return AttackOutcome(
        x_original=x.copy(),
        x_adv=x_cur,
        success=bool(evasion.all()),
        iterations_used=iterations,
        l2_distance=float(np.linalg.norm(x0 - x_cur)),
        per_member_evasion=[bool(b) for b in evasion],
        final_weights=weights,
        seed=cfg.seed,
    )
