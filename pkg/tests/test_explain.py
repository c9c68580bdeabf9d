import itertools

import numpy as np
import pytest

from etabench.attack import AttackConfig
from etabench.dataset import Dataset
from etabench.errors import (
    EmptyDatasetError,
    EmptyFeatureSetError,
    TooManyPlayersError,
)
from etabench.explain import (
    bce_loss,
    compute_fai,
    exact_shapley,
    feature_sensitivity,
    isfs_pipeline,
    isfs_select,
    jaccard,
    mutual_info_screen,
    sensitivity_scores,
)
from etabench.models import train_model
from etabench.schema import ConstraintKind, FeatureSchema, FeatureSpec

from helpers import blob_dataset, free_schema


def test_bce_loss_values():
    assert bce_loss(0.5, 1) == pytest.approx(np.log(2))
    assert bce_loss(0.5, 0) == pytest.approx(np.log(2))
    assert np.isfinite(bce_loss(0.0, 1))  # clipped, not inf
    assert np.isfinite(bce_loss(1.0, 0))
    arr = bce_loss(np.array([0.9, 0.1]), np.array([1, 0]))
    assert arr == pytest.approx([-np.log(0.9), -np.log(0.9)])


def _mi_dataset(seed=0, n_rows=3000):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n_rows)
    signal = np.where(y == 1, 0.8, 0.2) + rng.normal(0, 0.05, n_rows)
    noise = rng.uniform(0, 1, n_rows)
    const = np.full(n_rows, 3.3)
    X = np.column_stack([signal, noise, const])
    return Dataset(X, y, free_schema(3))


def test_mi_screen_separates_signal_from_noise():
    ds = _mi_dataset()
    mi, screened = mutual_info_screen(ds)
    assert mi[0] > 0.3          # strong signal
    assert mi[2] == 0.0         # constant column
    assert 1 in screened and 2 in screened
    assert 0 not in screened
    assert screened == sorted(screened)


def test_mi_screen_threshold_is_strict():
    ds = _mi_dataset()
    _, screened = mutual_info_screen(ds, threshold=0.0)
    # nothing is strictly below zero, not even the constant column
    assert screened == []


def test_mi_screen_empty_dataset():
    ds = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), free_schema(2))
    with pytest.raises(EmptyDatasetError):
        mutual_info_screen(ds)


def test_exact_shapley_additive_game():
    a = np.array([0.5, -1.0, 2.0, 0.0])
    phi = exact_shapley(lambda s: sum(a[i] for i in s), 4)
    assert np.allclose(phi, a)


def test_exact_shapley_two_player_hand_case():
    v = {(): 0.0, (0,): 1.0, (1,): 2.0, (0, 1): 5.0}
    phi = exact_shapley(lambda s: v[s], 2)
    assert phi == pytest.approx([2.0, 3.0])
    assert phi.sum() == pytest.approx(v[(0, 1)] - v[()])


def test_exact_shapley_player_cap():
    with pytest.raises(TooManyPlayersError):
        exact_shapley(lambda s: 0.0, 13)
    with pytest.raises(EmptyFeatureSetError):
        exact_shapley(lambda s: 0.0, 0)


def _fai_oracle_setup():
    train = blob_dataset(n_rows=300, n_features=3, seed=2)
    model = train_model("logistic_regression", train, seed=0)
    pick = np.concatenate(
        [np.where(train.y == 0)[0][:3], np.where(train.y == 1)[0][:3]]
    )
    ds = Dataset(train.X[pick], train.y[pick], train.schema)
    return model, ds


def _exact_fai(model, ds):
    """Exact Shapley of the loss-drop game the sampler estimates.

    Empty coalition uses the constant mean prediction; any other coalition
    imputes each hidden column independently from the column marginal,
    averaging the model output over every combination.
    """
    X, y = ds.X, ds.y
    m, n = X.shape
    f_empty = float(np.mean(model.predict_proba(X)))
    base = bce_loss(np.full(m, f_empty), y)

    def value(subset):
        if not subset:
            return 0.0
        hidden = [i for i in range(n) if i not in subset]
        total = 0.0
        for r in range(m):
            preds = []
            for combo in itertools.product(range(m), repeat=len(hidden)):
                xr = X[r].copy()
                for h, src in zip(hidden, combo):
                    xr[h] = X[src, h]
                preds.append(model.predict_proba(xr))
            total += base[r] - bce_loss(np.mean(preds), y[r])
        return total / m

    return exact_shapley(value, n)


def test_fai_matches_exact_shapley():
    model, ds = _fai_oracle_setup()
    want = _exact_fai(model, ds)
    got = compute_fai(model, ds, outer_samples=4000, inner_samples=32, seed=1)
    assert np.all(np.abs(got.values - want) < 0.05), (got.values, want)


def test_fai_efficiency_property():
    model, ds = _fai_oracle_setup()
    rep = compute_fai(model, ds, outer_samples=4000, inner_samples=8, seed=3)
    p = model.predict_proba(ds.X)
    f_empty = float(np.mean(p))
    full_gain = np.mean(bce_loss(np.full(ds.n_rows, f_empty), ds.y) - bce_loss(p, ds.y))
    assert rep.values.sum() == pytest.approx(full_gain, abs=0.05)


def test_fai_is_seeded_and_screened_are_zero():
    model, ds = _fai_oracle_setup()
    a = compute_fai(model, ds, outer_samples=200, inner_samples=4, seed=9, screened=[1])
    b = compute_fai(model, ds, outer_samples=200, inner_samples=4, seed=9, screened=[1])
    assert np.array_equal(a.values, b.values)
    assert a.values[1] == 0.0
    assert a.screened == [1]
    c = compute_fai(model, ds, outer_samples=200, inner_samples=4, seed=10, screened=[1])
    assert not np.array_equal(a.values, c.values)


def test_fai_report_round_trip_and_ranking():
    model, ds = _fai_oracle_setup()
    rep = compute_fai(model, ds, outer_samples=100, inner_samples=4, seed=0)
    from etabench.explain import FAIReport

    back = FAIReport.from_dict(rep.to_dict())
    assert np.allclose(back.values, rep.values)
    assert back.feature_names == ds.schema.names
    rank = rep.ranking()
    assert sorted(rank) == list(range(3))
    assert rep.values[rank[0]] == rep.values.max()


def test_fai_ranking_tie_breaks_to_lower_index():
    from etabench.explain import FAIReport

    rep = FAIReport(np.array([0.2, 0.5, 0.5, 0.1]), [], 1, 1, 0)
    assert rep.ranking() == [1, 2, 0, 3]


def test_fai_validates_inputs():
    model, ds = _fai_oracle_setup()
    with pytest.raises(ValueError):
        compute_fai(model, ds, outer_samples=0)
    empty = Dataset(np.zeros((0, 3)), np.zeros(0, dtype=int), ds.schema)
    with pytest.raises(EmptyDatasetError):
        compute_fai(model, empty)


def _sens_setup():
    """Label depends on feature 0 only; feature 1 is masked."""
    schema = FeatureSchema(
        attack_type="T",
        label_column="Label",
        features=[
            FeatureSpec("f0", ConstraintKind.FREE),
            FeatureSpec("f1", ConstraintKind.MASKED),
        ],
    )
    rng = np.random.default_rng(4)
    n = 400
    y = rng.integers(0, 2, n)
    f0 = np.where(y == 1, 0.75, 0.25) + rng.normal(0, 0.05, n)
    f1 = rng.uniform(0, 1, n)
    ds = Dataset(np.column_stack([f0, f1]), y, schema)
    model = train_model("logistic_regression", ds, seed=0)
    cfg = AttackConfig(max_iterations=10, sample_count=8, step_size=0.1)
    return model, ds, cfg


def test_sensitivity_free_feature_flips():
    model, ds, cfg = _sens_setup()
    s = feature_sensitivity(model, ds, ["f0"], budget=12, cfg=cfg, seed=1)
    assert s > 0.8


def test_sensitivity_masked_feature_is_exactly_zero():
    model, ds, cfg = _sens_setup()
    s = feature_sensitivity(model, ds, [1], budget=12, cfg=cfg, seed=1)
    assert s == 0.0
    d = feature_sensitivity(model, ds, [1], budget=12, mode="degradation", cfg=cfg, seed=1)
    assert d == 0.0


def test_sensitivity_degradation_mode():
    model, ds, cfg = _sens_setup()
    d = feature_sensitivity(model, ds, [0], budget=12, mode="degradation", cfg=cfg, seed=1)
    assert 0.8 < d <= 1.0


def test_sensitivity_names_and_indices_agree():
    model, ds, cfg = _sens_setup()
    a = feature_sensitivity(model, ds, ["f0"], budget=6, cfg=cfg, seed=2)
    b = feature_sensitivity(model, ds, [0], budget=6, cfg=cfg, seed=2)
    assert a == b


def test_sensitivity_is_seeded():
    model, ds, cfg = _sens_setup()
    a = feature_sensitivity(model, ds, [0], budget=6, cfg=cfg, seed=5)
    b = feature_sensitivity(model, ds, [0], budget=6, cfg=cfg, seed=5)
    assert a == b


def test_sensitivity_input_validation():
    model, ds, cfg = _sens_setup()
    with pytest.raises(EmptyFeatureSetError):
        feature_sensitivity(model, ds, [], budget=5, cfg=cfg)
    with pytest.raises(ValueError, match="mode"):
        feature_sensitivity(model, ds, [0], mode="area", cfg=cfg)
    with pytest.raises(ValueError, match="budget"):
        feature_sensitivity(model, ds, [0], budget=0, cfg=cfg)
    benign_only = Dataset(ds.X[ds.y == 0], ds.y[ds.y == 0], ds.schema)
    with pytest.raises(EmptyDatasetError):
        feature_sensitivity(model, benign_only, [0], cfg=cfg)


def test_sensitivity_scores_offsets_seed_per_feature():
    model, ds, cfg = _sens_setup()
    scores = sensitivity_scores(model, ds, [0, 1], budget=6, cfg=cfg, seed=3)
    assert set(scores) == {0, 1}
    assert scores[1] == 0.0
    assert scores[0] == feature_sensitivity(model, ds, [0], budget=6, cfg=cfg, seed=3)


# importance/sensitivity table: (fai, fs) per feature, threshold 0.9
_CASE_FAI = [0.1000, 0.1750, 0.0250, 0.0250, 0.0125, 0.0125]
_CASE_FS = {0: 0.3514, 1: 0.6671, 2: 0.0500, 3: 1.0000, 4: 1.0000, 5: 1.0000}


def test_isfs_case_table():
    sel = isfs_select(_CASE_FAI, _CASE_FS, top_count=6, sensitivity_threshold=0.9)
    assert sel.labels == [
        "robust", "robust", "robust", "non_robust", "non_robust", "non_robust",
    ]
    # selection keeps importance order among the non-robust
    assert sel.selected == [3, 4, 5]
    assert sel.top == [1, 0, 2, 3, 4, 5]
    assert not sel.empty
    assert sel.mask().tolist() == [False, False, False, True, True, True]


def test_isfs_threshold_is_strict():
    sel = isfs_select([0.5, 0.4], {0: 0.33, 1: 0.34}, top_count=2,
                      sensitivity_threshold=0.33)
    assert sel.labels == ["robust", "non_robust"]
    assert sel.selected == [1]


def test_isfs_top_count_and_select_count():
    sel = isfs_select(_CASE_FAI, _CASE_FS, top_count=2, sensitivity_threshold=0.5)
    # only features 1 and 0 are candidates; 1 clears 0.5, 0 does not
    assert sel.top == [1, 0]
    assert sel.selected == [1]
    assert sel.labels[2:] == ["unimportant"] * 4

    sel2 = isfs_select(_CASE_FAI, _CASE_FS, top_count=6,
                       sensitivity_threshold=0.9, select_count=2)
    assert sel2.selected == [3, 4]


def test_isfs_empty_selection_is_flagged():
    sel = isfs_select([0.5, 0.4], {0: 0.0, 1: 0.0}, top_count=2,
                      sensitivity_threshold=0.33)
    assert sel.empty
    assert sel.selected == []


def test_isfs_requires_sensitivity_for_top():
    with pytest.raises(KeyError):
        isfs_select([0.5, 0.4], {0: 1.0}, top_count=2)
    # missing sensitivity outside the top list is fine
    sel = isfs_select([0.5, 0.4], {0: 1.0}, top_count=1)
    assert sel.selected == [0]


def test_isfs_round_trip():
    from etabench.explain import ISFSSelection

    sel = isfs_select(_CASE_FAI, _CASE_FS, top_count=6, sensitivity_threshold=0.9)
    back = ISFSSelection.from_dict(sel.to_dict())
    assert back.labels == sel.labels
    assert back.selected == sel.selected
    assert back.sensitivity == sel.sensitivity


def test_isfs_pipeline_integrates():
    model, ds, cfg = _sens_setup()
    rep = compute_fai(model, ds, outer_samples=300, inner_samples=4, seed=0)
    sel = isfs_pipeline(model, ds, rep, top_count=2, sensitivity_threshold=0.33,
                        budget=6, cfg=cfg, seed=0)
    assert sel.top == rep.ranking()[:2]
    # f0 carries the label signal and is attackable; f1 is masked
    assert sel.labels[0] == "non_robust"
    assert 0 in sel.selected
    assert 1 not in sel.selected


@pytest.mark.parametrize("a,b,want", [
    ([1, 2], [1, 2], 1.0),
    ([1, 2], [3, 4], 0.0),
    ([], [], 1.0),
    ([1, 2, 3], [2, 3, 4], 0.5),
    ([1], [], 0.0),
])
def test_jaccard_cases(a, b, want):
    assert jaccard(a, b) == want
    assert jaccard(b, a) == want
