"""Tests for the TPE tuner and its random-search fallback."""

import numpy as np
import pytest

from airware.errors import NoSuccessfulTrial
from airware.nn import HyperParams
from airware.tune import (
    SearchSpace,
    TpeConfig,
    Trial,
    random_search,
    sample_space,
    split_good_bad,
    tpe_suggest,
    tune,
)

SPACE = SearchSpace()


def make_history(rng, scores):
    return [Trial(sample_space(SPACE, rng), float(s), "ok") for s in scores]


# ---------------------------------------------------------------------------
# prior sampling

def test_l2_prior_mean_and_positivity():
    rng = np.random.default_rng(0)
    draws = np.array([sample_space(SPACE, rng).l2 for _ in range(10_000)])
    assert np.all(draws > 0)
    assert abs(draws.mean() - 0.001) < 0.05 * 0.001


def test_lr_exponent_prior_is_uniform():
    rng = np.random.default_rng(1)
    draws = [sample_space(SPACE, rng).lr_exponent for _ in range(10_000)]
    values, counts = np.unique(draws, return_counts=True)
    assert list(values) == [-6, -5, -4, -3, -2, -1, 0]
    freqs = counts / len(draws)
    assert np.all(np.abs(freqs - 1 / 7) < 0.02)


def test_dropout_prior_respects_bounds():
    rng = np.random.default_rng(2)
    draws = np.array([sample_space(SPACE, rng).dropout_p for _ in range(1000)])
    assert draws.min() >= 0.0
    assert draws.max() <= 0.99


def test_prior_draws_cover_every_categorical_choice():
    rng = np.random.default_rng(3)
    draws = [sample_space(SPACE, rng) for _ in range(2000)]
    assert {d.n_filters for d in draws} == {8, 16, 32, 64}
    assert {d.kernel_size for d in draws} == {2, 3, 5}
    assert {d.hidden_units for d in draws} == {32, 64, 128, 256, 512}
    assert len({d.initializer for d in draws}) == 6


# ---------------------------------------------------------------------------
# suggestion logic

def test_startup_phase_is_exactly_the_prior():
    a = np.random.default_rng(4)
    b = np.random.default_rng(4)
    for _ in range(50):
        assert tpe_suggest([], SPACE, TpeConfig(), a) == sample_space(SPACE, b)


def test_good_set_size_is_gamma_quantile_ceiling():
    rng = np.random.default_rng(5)
    ok = make_history(rng, np.linspace(0, 1, 20))
    good, bad = split_good_bad(ok, 0.25)
    assert len(good) == 5
    assert len(bad) == 15
    assert min(t.score for t in good) >= max(t.score for t in bad)


def test_suggestions_concentrate_on_winning_category():
    rng = np.random.default_rng(6)
    history = []
    for i in range(20):
        hp = sample_space(SPACE, rng)
        winner = i < 5
        hp = HyperParams(l2=hp.l2, lr_exponent=hp.lr_exponent,
                         n_filters=hp.n_filters,
                         kernel_size=3 if winner else (2, 5)[i % 2],
                         dropout_p=hp.dropout_p, hidden_units=hp.hidden_units,
                         initializer=hp.initializer)
        history.append(Trial(hp, 0.9 if winner else 0.1, "ok"))
    picks = [tpe_suggest(history, SPACE, TpeConfig(), rng).kernel_size
             for _ in range(1000)]
    assert picks.count(3) / 1000 > 1 / 3


def test_suggestions_always_satisfy_invariants():
    rng = np.random.default_rng(7)
    history = make_history(rng, rng.uniform(0, 1, size=30))
    for _ in range(300):
        hp = tpe_suggest(history, SPACE, TpeConfig(), rng)
        assert isinstance(hp, HyperParams)  # construction self-validates


# ---------------------------------------------------------------------------
# the tune loop

def test_budget_one_returns_that_trial():
    best, history = tune(lambda hp: 0.42, SPACE, 1, rng=np.random.default_rng(8))
    assert len(history) == 1
    assert best is history[0]
    assert best.score == 0.42


def test_tune_is_deterministic():
    obj = lambda hp: 1.0 - (hp.dropout_p - 0.3) ** 2
    _, h1 = tune(obj, SPACE, 25, rng=np.random.default_rng(9))
    _, h2 = tune(obj, SPACE, 25, rng=np.random.default_rng(9))
    assert h1 == h2


def test_failed_trials_are_recorded_and_excluded():
    def flaky(hp):
        if hp.dropout_p > 0.5:
            raise RuntimeError("boom")
        return hp.dropout_p

    best, history = tune(flaky, SPACE, 40, rng=np.random.default_rng(10))
    assert len(history) == 40
    failed = [t for t in history if t.status == "failed"]
    ok = [t for t in history if t.status == "ok"]
    assert failed and ok
    assert all(np.isnan(t.score) for t in failed)
    assert best.score == max(t.score for t in ok)
    assert best.score <= 0.5


def test_all_failures_raise():
    def broken(hp):
        raise RuntimeError("always")

    with pytest.raises(NoSuccessfulTrial):
        tune(broken, SPACE, 5, rng=np.random.default_rng(11))


def test_non_finite_scores_count_as_failures():
    best, history = tune(lambda hp: float("nan") if hp.dropout_p > 0.3 else 0.5,
                         SPACE, 30, rng=np.random.default_rng(12))
    assert best.score == 0.5
    assert any(t.status == "failed" for t in history)


def test_zero_budget_rejected():
    with pytest.raises(ValueError):
        tune(lambda hp: 1.0, SPACE, 0)
    with pytest.raises(ValueError):
        random_search(lambda hp: 1.0, SPACE, 0)


def test_trial_and_config_validation():
    hp = HyperParams()
    with pytest.raises(ValueError):
        Trial(hp, 0.5, "weird")
    with pytest.raises(ValueError):
        Trial(hp, float("nan"), "ok")
    with pytest.raises(ValueError):
        TpeConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TpeConfig(n_candidates=0)


# ---------------------------------------------------------------------------
# headline behavior: smarter than random on a smooth 1D objective

def test_tpe_median_beats_random_median_on_surrogate():
    surrogate = lambda hp: 1.0 - (hp.dropout_p - 0.3) ** 2
    tpe_best, rnd_best = [], []
    for seed in range(6):
        bt, _ = tune(surrogate, SPACE, 60, rng=np.random.default_rng(seed))
        br, _ = random_search(surrogate, SPACE, 60, rng=np.random.default_rng(seed))
        tpe_best.append(bt.score)
        rnd_best.append(br.score)
    assert np.median(tpe_best) >= np.median(rnd_best)


def test_random_search_history_partition():
    best, history = random_search(lambda hp: hp.dropout_p, SPACE, 15,
                                  rng=np.random.default_rng(13))
    assert len(history) == 15
    assert all(t.status == "ok" for t in history)
    assert best.score == max(t.score for t in history)
