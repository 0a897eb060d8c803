import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from undercrowd import features
from undercrowd.features import ColumnMeta, ModelSpec


def frame(n=60, seed=0, day_types=("working", "saturday", "holiday", "strike")):
    rng = np.random.default_rng(seed)
    return pd.DataFrame({
        "time_slot": np.r_[6, 21, rng.integers(6, 22, n - 2)],
        "week": np.r_[1, 26, rng.integers(1, 27, n - 2)],
        "day_type": [day_types[i % len(day_types)] for i in range(n)],
        "segment": rng.integers(1, 19, n),
        "rain": rng.exponential(1.0, n),
        "wind_speed": rng.uniform(0, 20, n),
        "temperature": rng.normal(15, 8, n),
        "cloud_coverage": rng.uniform(0, 100, n),
        "humidity": rng.uniform(20, 100, n),
        "season": ["summer"] * (n // 2) + ["winter"] * (n - n // 2),
        "y": rng.integers(0, 2, n),
    })


def test_full_spec_column_count():
    # 5 + 3 slot/week powers, 3 dummies, 2 weather, 5*3 + 3*3 interactions
    spec = ModelSpec(5, 3)
    assert spec.n_terms == 37
    assert features.build_design(frame(), spec).n_columns == 37


def test_degenerate_spec_has_only_dummies():
    d = features.build_design(frame(), ModelSpec(0, 0, include_interactions=(), weather_columns=()))
    assert [m.kind for m in d.columns] == ["day_type"] * 3


def test_affine_endpoints():
    d = features.build_design(frame(), ModelSpec(1, 1, include_interactions=(), weather_columns=()))
    slot = d.X[:, [m.name for m in d.columns].index("slot^1")]
    assert slot[0] == 0.0 and slot[1] == 1.0
    assert d.transform.slot_range == (6.0, 21.0)


def test_absent_level_drops_its_columns():
    d = features.build_design(frame(day_types=("working", "saturday")), ModelSpec(2, 1))
    assert not any(m.level in ("holiday", "strike") for m in d.columns)
    assert np.all(np.any(d.X != 0, axis=0))


def test_unknown_and_unseen_levels_rejected():
    with pytest.raises(ValueError, match="unknown day_type"):
        features.build_design(frame(day_types=("working", "sunday")))
    d = features.build_design(frame(day_types=("working", "saturday")))
    with pytest.raises(ValueError, match="not seen in training"):
        features.apply_design(frame(day_types=("working", "holiday")), d.transform)


def test_spec_ranges_checked():
    with pytest.raises(ValueError):
        ModelSpec(11, 3)
    with pytest.raises(ValueError):
        ModelSpec(3, 7)
    with pytest.raises(ValueError):
        ModelSpec(weather_columns=("snow",))


def test_non_finite_covariate_rejected():
    df = frame()
    df.loc[3, "rain"] = np.nan
    with pytest.raises(ValueError, match="rain"):
        features.build_design(df)


@pytest.mark.parametrize("meta,label", [
    (ColumnMeta("slot_x_day_type", "slot^2:holiday", 2, "holiday"), "Time slot [^2] * Day type [Holidays]"),
    (ColumnMeta("weather", "rain", weather="rain"), "Precipitation"),
    (ColumnMeta("week", "week^1", 1), "Week [^1]"),
    (ColumnMeta("week_x_day_type", "week^3:strike", 3, "strike"), "Day type [Strikedays] * Week [^3]"),
])
def test_column_labels(meta, label):
    assert features.column_label(meta) == label


def test_candidate_labels_cover_design_labels():
    spec = ModelSpec(3, 2)
    d = features.build_design(frame(), spec)
    assert set(d.labels) <= set(features.candidate_labels(spec))
    assert len(features.candidate_labels(spec)) == spec.n_terms


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10), st.integers(0, 6), st.integers(0, 2**32 - 1))
def test_transform_reproduces_training_matrix(ds, dw, seed):
    spec = ModelSpec(ds, dw)
    df = frame(seed=seed)
    d = features.build_design(df, spec)
    again = features.apply_design(df, features.DesignTransform.from_dict(d.transform.to_dict()))
    assert np.array_equal(d.X, again.X)
    assert np.array_equal(d.X, features.build_design(df.copy(), spec).X)


def test_dropping_weather_column_changes_only_that_column():
    df = frame()
    full = features.build_design(df, ModelSpec(3, 2))
    less = features.build_design(df, ModelSpec(3, 2, weather_columns=("rain",)))
    names = [m.name for m in full.columns]
    keep = [i for i, n in enumerate(names) if n != "wind_speed"]
    assert less.n_columns == full.n_columns - 1
    assert np.array_equal(full.X[:, keep], less.X)


def test_forest_features_append_unused_weather_and_season():
    df = frame()
    d = features.build_design(df, ModelSpec(2, 1))
    F = features.forest_features(df, d)
    assert F.shape[1] == d.n_columns + 4
    assert np.array_equal(F[:, -1], (df["season"] == "winter").to_numpy(dtype=float))
    assert features.default_mtry(37) == 7
