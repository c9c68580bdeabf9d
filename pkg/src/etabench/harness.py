"""Evaluation harness: detection metrics, attack batches, transfer studies.

Protocol used throughout: attacks are crafted on the malicious rows that the
substitute actually detects (a row the substitute already misses needs no
crafting). Self attack-success rate is the fraction of crafted rows where
every substitute member is evaded; transfer success against a target is
judged by the target's own threshold on the crafted vectors.

Every report is a plain dict of JSON-safe values with the config and seeds
embedded, serialized with sorted keys and no timestamps, so a rerun with the
same config produces byte-identical files.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata, spearmanr

from .attack import AttackConfig, AttackOutcome, minmax_attack
from .dataset import Dataset, Normalizer, select_features
from .errors import EmptyOutcomeListError, IoFailureError
from .explain import jaccard
from .models import EnsembleModel, TrainedModel, make_ensemble

__all__ = [
    "MetricsReport",
    "detection_metrics",
    "asr",
    "asr_avg",
    "run_attacks",
    "adv_matrix",
    "evasion_against",
    "crafting_rows",
    "transfer_matrix",
    "isfs_ablation",
    "remove_nonrobust_study",
    "nonrobust_only_study",
    "js_vs_asr_study",
    "limited_knowledge_features",
    "limited_knowledge_data",
    "hyperparam_sweep",
    "report_bytes",
    "write_report",
]


# ---------------------------------------------------------------------------
# detection metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    auc: float | None
    threshold: float
    n_rows: int
    single_class: bool

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "threshold": self.threshold,
            "n_rows": self.n_rows,
            "single_class": self.single_class,
        }


def detection_metrics(model: TrainedModel, ds: Dataset) -> MetricsReport:
    """Precision/recall/F1 at the model's threshold plus rank-statistic AUC.

    With only one class present AUC is undefined; the report flags it and
    carries None instead of a number.
    """
    scores = np.asarray(model.predict_proba(ds.X))
    pred = scores >= model.threshold
    pos = ds.y == 1
    tp = float((pred & pos).sum())
    precision = tp / pred.sum() if pred.sum() else 0.0
    recall = tp / pos.sum() if pos.sum() else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    single = len(np.unique(ds.y)) < 2
    if single:
        auc = None
    else:
        n1, n0 = int(pos.sum()), int((~pos).sum())
        ranks = rankdata(scores)
        auc = float((ranks[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))
    return MetricsReport(
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
        auc=auc,
        threshold=model.threshold,
        n_rows=ds.n_rows,
        single_class=single,
    )


# ---------------------------------------------------------------------------
# attack batches
# ---------------------------------------------------------------------------


def asr(outcomes) -> float:
    """Success fraction of a non-empty outcome (or boolean) list."""
    flags = [
        o.success if isinstance(o, AttackOutcome) else bool(o) for o in outcomes
    ]
    if not flags:
        raise EmptyOutcomeListError("attack-success rate over zero outcomes")
    return float(np.mean(flags))


def asr_avg(values) -> float:
    values = list(values)
    if not values:
        raise EmptyOutcomeListError("average over zero attack-success rates")
    return float(np.mean(values))


def _attack_chunk(args):
    ens, rows, schema, cfg, normalizer, seeds = args
    return [
        minmax_attack(ens, rows[i], schema, replace(cfg, seed=seeds[i]), normalizer)
        for i in range(rows.shape[0])
    ]


def run_attacks(
    ens: EnsembleModel,
    rows: np.ndarray,
    schema,
    cfg: AttackConfig,
    normalizer: Normalizer | None = None,
    workers: int = 1,
    base_seed: int | None = None,
) -> list[AttackOutcome]:
    """Attack each row; per-row seeds derive from the base seed by position,
    so results do not depend on the worker count."""
    rows = np.asarray(rows, dtype=float)
    if base_seed is None:
        base_seed = cfg.seed
    seeds = [base_seed * 100_003 + i for i in range(rows.shape[0])]
    if workers <= 1 or rows.shape[0] <= 1:
        return _attack_chunk((ens, rows, schema, cfg, normalizer, seeds))
    chunks = np.array_split(np.arange(rows.shape[0]), min(workers, rows.shape[0]))
    payloads = [
        (ens, rows[c], schema, cfg, normalizer, [seeds[i] for i in c])
        for c in chunks
        if len(c)
    ]
    out: list[AttackOutcome] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_attack_chunk, payloads):
            out.extend(part)
    return out


def adv_matrix(outcomes) -> np.ndarray:
    if not outcomes:
        raise EmptyOutcomeListError("no outcomes to stack")
    return np.stack([o.x_adv for o in outcomes])


def evasion_against(target: TrainedModel, X_adv: np.ndarray) -> np.ndarray:
    """Boolean per row: does the target score it below its own threshold."""
    return np.asarray(target.predict_proba(X_adv)) < target.threshold


def crafting_rows(substitute, ds: Dataset) -> np.ndarray:
    """Malicious rows of ``ds`` that the substitute flags (committee: any
    member)."""
    ens = substitute if isinstance(substitute, EnsembleModel) else make_ensemble(
        [substitute]
    )
    mal = ds.X[ds.y == 1]
    if mal.shape[0] == 0:
        return mal
    hit = np.zeros(mal.shape[0], dtype=bool)
    for m in ens.members:
        hit |= np.asarray(m.predict_proba(mal)) >= m.threshold
    return mal[hit]


def _as_ensemble(model) -> EnsembleModel:
    return model if isinstance(model, EnsembleModel) else make_ensemble([model])


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def transfer_matrix(
    substitutes: dict,
    targets: dict[str, TrainedModel],
    ds_eval: Dataset,
    cfg: AttackConfig,
    normalizer: Normalizer | None = None,
    workers: int = 1,
    max_rows: int | None = None,
    seed: int = 0,
) -> dict:
    """Craft per substitute, judge per target. Returns the ASR matrix plus
    self-ASR and sample counts."""
    matrix: dict[str, dict[str, float]] = {}
    self_asr: dict[str, float] = {}
    counts: dict[str, int] = {}
    for s_name, sub in substitutes.items():
        ens = _as_ensemble(sub)
        rows = crafting_rows(ens, ds_eval)
        if max_rows is not None and rows.shape[0] > max_rows:
            take = np.random.default_rng(seed).choice(
                rows.shape[0], size=max_rows, replace=False
            )
            rows = rows[take]
        counts[s_name] = int(rows.shape[0])
        if rows.shape[0] == 0:
            matrix[s_name] = {t: 0.0 for t in targets}
            self_asr[s_name] = 0.0
            continue
        outcomes = run_attacks(ens, rows, ds_eval.schema, cfg, normalizer, workers)
        X_adv = adv_matrix(outcomes)
        self_asr[s_name] = asr(outcomes)
        matrix[s_name] = {
            t_name: float(np.mean(evasion_against(t, X_adv)))
            for t_name, t in targets.items()
        }
    return {
        "matrix": matrix,
        "self_asr": self_asr,
        "crafted_rows": counts,
        "config": _cfg_dict(cfg),
    }


def isfs_ablation(
    substitute,
    targets: dict[str, TrainedModel],
    ds_eval: Dataset,
    cfg: AttackConfig,
    selection_mask: np.ndarray,
    normalizer: Normalizer | None = None,
    workers: int = 1,
    max_rows: int | None = None,
    seed: int = 0,
) -> dict:
    """Same attack with and without the selection mask, per target."""
    out = {}
    for tag, mask in (
        ("with_selection", np.asarray(selection_mask, dtype=bool)),
        ("without_selection", None),
    ):
        res = transfer_matrix(
            {"substitute": substitute},
            targets,
            ds_eval,
            replace(cfg, feature_mask=mask),
            normalizer,
            workers,
            max_rows,
            seed,
        )
        out[tag] = {
            "per_target": res["matrix"]["substitute"],
            "self_asr": res["self_asr"]["substitute"],
            "crafted_rows": res["crafted_rows"]["substitute"],
        }
    return out


def remove_nonrobust_study(
    factory,
    train_ds: Dataset,
    eval_ds: Dataset,
    ordered_names: list[str],
    cfg: AttackConfig,
    normalizer_for=None,
    workers: int = 1,
    seed: int = 0,
) -> list[dict]:
    """Self-attack ASR as the named features are removed one by one.

    ``factory(train_ds, seed)`` builds the detector at each step.
    ``normalizer_for(names)`` may supply a reduced-space normalizer; None
    keeps remapping in the attack coordinates.
    """
    curve = []
    all_names = train_ds.schema.names
    for r in range(len(ordered_names) + 1):
        removed = ordered_names[:r]
        kept = [n for n in all_names if n not in set(removed)]
        tr = select_features(train_ds, kept)
        ev = select_features(eval_ds, kept)
        model = factory(tr, seed)
        ens = make_ensemble([model])
        rows = crafting_rows(ens, ev)
        norm = normalizer_for(kept) if normalizer_for else None
        if rows.shape[0] == 0:
            point_asr = 0.0
        else:
            point_asr = asr(run_attacks(ens, rows, ev.schema, cfg, norm, workers))
        curve.append(
            {
                "removed_count": r,
                "removed": list(removed),
                "asr": point_asr,
                "crafted_rows": int(rows.shape[0]),
            }
        )
    return curve


def nonrobust_only_study(
    factory, train_ds: Dataset, test_ds: Dataset, selected_names: list[str], seed: int = 0
) -> dict:
    """Train on the selected features alone and measure detection quality.

    An empty selection is a flagged condition: the study reports it and skips
    training instead of failing.
    """
    if not selected_names:
        return {"selected": [], "empty_selection": True}
    tr = select_features(train_ds, selected_names)
    te = select_features(test_ds, selected_names)
    model = factory(tr, seed)
    pred = np.asarray(model.predict_label(te.X))
    report = detection_metrics(model, te)
    return {
        "selected": list(selected_names),
        "empty_selection": False,
        "accuracy": float(np.mean(pred == te.y)),
        **report.to_dict(),
    }


def js_vs_asr_study(selections: dict[str, set], matrix: dict[str, dict[str, float]]) -> dict:
    """Selection overlap (Jaccard) against transfer ASR across model pairs."""
    points = []
    for sub, row in matrix.items():
        for tgt, value in row.items():
            if sub == tgt or sub not in selections or tgt not in selections:
                continue
            points.append(
                {
                    "substitute": sub,
                    "target": tgt,
                    "jaccard": jaccard(selections[sub], selections[tgt]),
                    "asr": float(value),
                }
            )
    rho = None
    if len(points) >= 2:
        js = [p["jaccard"] for p in points]
        vals = [p["asr"] for p in points]
        if len(set(js)) > 1 and len(set(vals)) > 1:
            rho = float(spearmanr(js, vals).statistic)
    return {"points": points, "spearman": rho}


def limited_knowledge_features(
    train_ds: Dataset,
    eval_ds: Dataset,
    fraction: float,
    factory,
    targets: dict[str, TrainedModel],
    cfg: AttackConfig,
    normalizer: Normalizer | None = None,
    seed: int = 0,
    workers: int = 1,
    max_rows: int | None = None,
) -> dict:
    """Substitute sees only floor(n * fraction) features (at least one).

    Crafted vectors are mapped back into full coordinates by feature name;
    the unknown coordinates keep their original values, so the attacker never
    touches features it cannot see.
    """
    n = train_ds.schema.n_features
    n_known = max(1, int(np.floor(n * fraction)))
    n_known = min(n_known, n)
    rng = np.random.default_rng(seed)
    known_idx = np.sort(rng.choice(n, size=n_known, replace=False))
    known = [train_ds.schema.names[i] for i in known_idx]

    sub_train = select_features(train_ds, known)
    sub_eval = select_features(eval_ds, known)
    substitute = factory(sub_train, seed)
    ens = make_ensemble([substitute])

    mal_full = eval_ds.X[eval_ds.y == 1]
    mal_sub = sub_eval.X[sub_eval.y == 1]
    hit = np.zeros(mal_sub.shape[0], dtype=bool)
    for m in ens.members:
        hit |= np.asarray(m.predict_proba(mal_sub)) >= m.threshold
    mal_full, mal_sub = mal_full[hit], mal_sub[hit]
    if max_rows is not None and mal_sub.shape[0] > max_rows:
        take = rng.choice(mal_sub.shape[0], size=max_rows, replace=False)
        mal_full, mal_sub = mal_full[take], mal_sub[take]

    norm_sub = None
    if normalizer is not None:
        norm_sub = Normalizer(normalizer.mins[known_idx], normalizer.spans[known_idx])
    result = {
        "fraction": fraction,
        "n_known": int(n_known),
        "known": known,
        "crafted_rows": int(mal_sub.shape[0]),
    }
    if mal_sub.shape[0] == 0:
        result["self_asr"] = 0.0
        result["per_target"] = {t: 0.0 for t in targets}
        return result
    outcomes = run_attacks(ens, mal_sub, sub_eval.schema, cfg, norm_sub, workers)
    X_full = mal_full.copy()
    X_full[:, known_idx] = adv_matrix(outcomes)
    result["self_asr"] = asr(outcomes)
    result["per_target"] = {
        t_name: float(np.mean(evasion_against(t, X_full)))
        for t_name, t in targets.items()
    }
    return result


def limited_knowledge_data(
    train_ds: Dataset,
    eval_ds: Dataset,
    fraction: float,
    factory,
    targets: dict[str, TrainedModel],
    cfg: AttackConfig,
    normalizer: Normalizer | None = None,
    seed: int = 0,
    workers: int = 1,
    max_rows: int | None = None,
) -> dict:
    """Substitute trains on a row subsample; fractions above 1 are capped."""
    capped = fraction > 1.0
    frac = min(fraction, 1.0)
    m = train_ds.n_rows
    n_rows = max(1, int(np.floor(m * frac)))
    rng = np.random.default_rng(seed)
    take = rng.choice(m, size=n_rows, replace=False)
    substitute = factory(train_ds.subset(take), seed)
    ens = make_ensemble([substitute])
    rows = crafting_rows(ens, eval_ds)
    if max_rows is not None and rows.shape[0] > max_rows:
        pick = rng.choice(rows.shape[0], size=max_rows, replace=False)
        rows = rows[pick]
    result = {
        "fraction": fraction,
        "capped": capped,
        "train_rows": int(n_rows),
        "crafted_rows": int(rows.shape[0]),
    }
    if rows.shape[0] == 0:
        result["self_asr"] = 0.0
        result["per_target"] = {t: 0.0 for t in targets}
        return result
    outcomes = run_attacks(ens, rows, eval_ds.schema, cfg, normalizer, workers)
    X_adv = adv_matrix(outcomes)
    result["self_asr"] = asr(outcomes)
    result["per_target"] = {
        t_name: float(np.mean(evasion_against(t, X_adv)))
        for t_name, t in targets.items()
    }
    return result


def hyperparam_sweep(
    ens: EnsembleModel,
    rows: np.ndarray,
    schema,
    base_cfg: AttackConfig,
    parameter: str,
    values,
    normalizer: Normalizer | None = None,
    workers: int = 1,
) -> dict:
    """Rerun the same attack batch while one config knob walks a grid."""
    if not hasattr(base_cfg, parameter):
        raise ValueError(f"unknown attack parameter {parameter!r}")
    grid = []
    for v in values:
        cfg_v = replace(base_cfg, **{parameter: v})
        outcomes = run_attacks(ens, rows, schema, cfg_v, normalizer, workers)
        grid.append({"value": v, "asr": asr(outcomes)})
    rates = [g["asr"] for g in grid]
    return {
        "parameter": parameter,
        "rows": grid,
        "min": float(np.min(rates)),
        "max": float(np.max(rates)),
        "std": float(np.std(rates)),
    }


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def _cfg_dict(cfg: AttackConfig) -> dict:
    d = {
        "distance_weight": cfg.distance_weight,
        "step_size": cfg.step_size,
        "max_iterations": cfg.max_iterations,
        "smoothing_radius": cfg.smoothing_radius,
        "sample_count": cfg.sample_count,
        "sampling_std": cfg.sampling_std,
        "weight_reg": cfg.weight_reg,
        "weight_lr": cfg.weight_lr,
        "seed": cfg.seed,
    }
    if cfg.feature_mask is not None:
        d["feature_mask"] = [bool(b) for b in cfg.feature_mask]
    return d


def report_bytes(report: dict) -> bytes:
    """Canonical JSON encoding: sorted keys, fixed separators, trailing
    newline. Reruns with identical inputs produce identical bytes."""
    return (json.dumps(report, indent=2, sort_keys=True) + "\n").encode("utf-8")


def write_report(report: dict, path) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(report_bytes(report))
    except OSError as exc:
        raise IoFailureError(f"cannot write report {path}: {exc}") from exc
