import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from undercrowd import features, glmm, ride_analysis, synth
from undercrowd.glmm import GlmmFit, GlmmModel
from undercrowd.ride_analysis import RideProbabilityProfile


def prof(rid, ps, slot=8, day_type="working", week=1, date="2022-06-06"):
    return RideProbabilityProfile(rid, np.asarray(ps, dtype=float), date, slot, day_type, week)


def test_fully_undercrowded_uses_minimum():
    p = prof("a", [0.2, 0.3, 0.15])
    assert p.min_probability == 0.15
    assert p.fully_undercrowded(0.1) and not p.fully_undercrowded(0.2)


def test_all_zero_profile_only_at_zero():
    p = prof("a", [0.0, 0.0])
    assert p.fully_undercrowded(0.0) and not p.fully_undercrowded(0.005)


def test_profile_validation():
    with pytest.raises(ValueError):
        prof("a", [])
    with pytest.raises(ValueError):
        prof("a", [1.2])


def test_profiles_drop_incomplete_rides(small_obs):
    obs = small_obs[~((small_obs["ride_id"] == small_obs["ride_id"].iloc[0]) & (small_obs["segment"] == 5))]
    profiles, dropped = ride_analysis.profile_rides(np.full(len(obs), 0.3), obs, n_segments=18)
    assert dropped == [small_obs["ride_id"].iloc[0]]
    assert len(profiles) == small_obs["ride_id"].nunique() - 1
    with pytest.raises(ValueError):
        ride_analysis.profile_rides(np.zeros(3), obs)


@pytest.fixture(scope="module")
def profiles(small_obs):
    p = np.random.default_rng(0).beta(1, 8, len(small_obs))
    return ride_analysis.profile_rides(p, small_obs)[0]


def test_level_curve_endpoints_and_monotone(profiles):
    curve = ride_analysis.level_curve(profiles)
    assert curve.at(0.0) == len(profiles)
    assert np.all(np.diff(curve.counts) <= 0)
    assert len(curve.grid) == 201 and curve.frame().shape == (201, 2)
    with pytest.raises(KeyError):
        curve.at(0.0031)


def test_level_curve_matches_recount(profiles):
    grid = np.sort(np.random.default_rng(1).random(5))
    curve = ride_analysis.level_curve(profiles, grid)
    for p, n in zip(grid, curve.counts):
        assert n == sum(pr.min_probability >= p for pr in profiles)


def test_level_curve_grid_checked(profiles):
    with pytest.raises(ValueError):
        ride_analysis.level_curve(profiles, [0.5, 0.1])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.floats(0, 1), min_size=3, max_size=3), min_size=1, max_size=30),
       st.floats(0, 1), st.floats(0, 1))
def test_superlevel_sets_nest(rows, p1, p2):
    lo, hi = sorted((p1, p2))
    ps = [prof(f"r{i}", r) for i, r in enumerate(rows)]
    at_hi = {pr.ride_id for pr in ps if pr.fully_undercrowded(hi)}
    at_lo = {pr.ride_id for pr in ps if pr.fully_undercrowded(lo)}
    assert at_hi <= at_lo


@pytest.mark.parametrize("p", [0.0, 0.05, 0.1])
def test_distribution_marginals_sum_to_n_p(profiles, p):
    rep = ride_analysis.distribution_report(profiles, p)
    for key in ("time_slot", "day_type", "week", "month"):
        assert rep[key]["n_rides"].sum() == rep["n_p"]


def test_distribution_empty_at_one(profiles):
    rep = ride_analysis.distribution_report(profiles, 1.0)
    assert rep["n_p"] == 0 and all(len(rep[k]) == 0 for k in ("time_slot", "day_type", "week"))


def test_planted_slot_dominates_report():
    step = {"kind": "step", "column": "time_slot", "cut": 6.5, "amplitude": -4.0, "offset": 0.0}
    data = synth.simulate(synth.SynthScenario(n_dates=14, seed=3, nonlinear=step, sigma_z2=0.1))
    probs = special.expit(data.truth.eta)
    profiles, _ = ride_analysis.profile_rides(probs, data.observations)
    rep = ride_analysis.distribution_report(profiles, 0.5)
    slots = rep["time_slot"]
    assert rep["n_p"] > 0
    assert slots.loc[slots["n_rides"].idxmax(), "time_slot"] == 6
    assert slots.loc[slots["time_slot"] == 6, "n_rides"].item() / rep["n_p"] > 0.9


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def model(small_obs):
    return GlmmModel.from_design(features.build_design(small_obs, features.ModelSpec(3, 1, include_interactions=())))


def test_rain_shift_equals_coefficient(model):
    base = {"day_type": "working", "time_slot": 9, "week": 2, "rain": 0.0}
    a = ride_analysis.scenario_predict(model, base)
    b = ride_analysis.scenario_predict(model, {**base, "rain": 1.0})
    coef = model.fit.beta[1 + list(model.transform.columns).index("rain")]
    assert np.allclose(b["eta"] - a["eta"], coef, rtol=0, atol=1e-12)
    assert len(a) == 18


def test_scenario_deterministic(model):
    s = {"day_type": "saturday", "time_slot": 17, "week": 2}
    pd.testing.assert_frame_equal(ride_analysis.scenario_predict(model, s), ride_analysis.scenario_predict(model, s))


def test_positive_holiday_effect_lifts_every_segment(model):
    beta = model.fit.beta.copy()
    beta[1 + list(model.transform.columns).index("day_type:holiday")] = 1.5
    m = GlmmModel(GlmmFit(beta, model.fit.beta_cov, model.fit.sigma_z2, model.fit.z, model.fit.group_labels,
                          0.0, True, {}), model.transform, model.labels)
    work = ride_analysis.scenario_predict(m, {"day_type": "working", "time_slot": 10, "week": 2})
    hol = ride_analysis.scenario_predict(m, {"day_type": "holiday", "time_slot": 10, "week": 2})
    assert np.all(hol["p"] > work["p"])


def test_scenario_monotone_in_single_term_covariate(model):
    coef = model.fit.beta[1 + list(model.transform.columns).index("wind_speed")]
    ps = [ride_analysis.scenario_predict(model, {"time_slot": 9, "week": 2, "wind_speed": w})["p"].to_numpy()
          for w in (0.0, 5.0, 10.0)]
    sign = np.sign(coef)
    assert np.all(sign * (ps[1] - ps[0]) >= 0) and np.all(sign * (ps[2] - ps[1]) >= 0)


def test_scenario_checks(model):
    with pytest.raises(ValueError, match="day_type"):
        ride_analysis.scenario_predict(model, {"day_type": "sunday"})
    with pytest.warns(glmm.ExtrapolationWarning):
        ride_analysis.scenario_predict(model, {"time_slot": 3})
