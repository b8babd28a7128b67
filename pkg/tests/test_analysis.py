import json
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from dndt import autodiff as ad
from dndt.analysis import (
    active_cutpoints,
    analyze,
    cart_importance,
    cutpoint_sweep,
    dndt_importance,
    ignored_features,
    kendall_tau,
    positions,
    ranking_from_scores,
    repeated_runs,
    sweep_csv,
)
from dndt.binning import SoftBinner
from dndt.data import EmptyDatasetError, load_bundled
from dndt.model import DndtModel
from dndt.train import TrainConfig

from helpers import brute_kendall

FAST = TrainConfig(epochs=20)


def model_with(cuts):
    n_leaves = int(np.prod([len(c) + 1 for c in cuts]))
    return DndtModel([SoftBinner(c) for c in cuts], ad.parameter(np.zeros((n_leaves, 2))))


def brute_active(model, X):
    out = []
    for d, b in enumerate(model.binners):
        flags = []
        for c in b.sorted_cutpoints():
            below = any(x[d] <= c for x in X)
            above = any(x[d] > c for x in X)
            flags.append(below and above)
        out.append(flags)
    return out


class TestActive:
    def test_below_minimum_is_inactive(self):
        X = np.array([[0.2, 0.2], [0.8, 0.9]])
        act = active_cutpoints(model_with([[0.1], [0.5]]), X)
        assert act.counts.tolist() == [0, 1]

    def test_median_is_active(self):
        X = np.random.default_rng(0).uniform(size=(51, 1))
        act = active_cutpoints(model_with([[float(np.median(X))]]), X)
        assert act.counts.tolist() == [1] and act.overall == 1.0

    def test_boundaries(self):
        X = np.array([[0.2], [0.6]])
        # c == min has 0.2 on the left and 0.6 on the right; c == max has nothing right
        act = active_cutpoints(model_with([[0.2, 0.6]]), X)
        assert act.active[0].tolist() == [True, False]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            D = int(rng.integers(1, 4))
            X = rng.uniform(0.2, 0.8, size=(int(rng.integers(1, 12)), D))
            m = model_with([rng.uniform(0, 1, rng.integers(1, 4)) for _ in range(D)])
            act = active_cutpoints(m, X)
            ref = brute_active(m, X)
            assert [a.tolist() for a in act.active] == ref
            assert act.counts.tolist() == [sum(r) for r in ref]
            assert ((act.fractions >= 0) & (act.fractions <= 1)).all()

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            active_cutpoints(model_with([[0.5]]), np.zeros((0, 1)))


class TestIgnored:
    def test_pushed_past_range(self):
        X = np.array([[0.1, 0.3], [0.9, 0.7]])
        assert ignored_features(model_with([[0.5], [1.5]]), X).tolist() == [False, True]

    def test_all_active(self):
        X = np.array([[0.1, 0.3], [0.9, 0.7]])
        assert ignored_features(model_with([[0.5], [0.5, 0.6]]), X).tolist() == [False, False]

    def test_definition_consistency(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            X = rng.uniform(0.3, 0.7, size=(5, 3))
            m = model_with([rng.uniform(0, 1, 2) for _ in range(3)])
            act = active_cutpoints(m, X)
            assert ignored_features(m, X).tolist() == (act.counts == 0).tolist()


class TestKendall:
    def test_identical(self):
        assert kendall_tau([0, 1, 2, 3], [0, 1, 2, 3]) == 1.0

    def test_reversed(self):
        assert kendall_tau([0, 1, 2, 3], [3, 2, 1, 0]) == -1.0

    def test_one_discordant_pair(self):
        assert kendall_tau([0, 1, 2, 3], [0, 1, 3, 2]) == pytest.approx(4 / 6, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            kendall_tau([0, 1, 2], [0, 1])

    def test_matches_pair_counting(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            n = int(rng.integers(2, 11))
            a, b = rng.permutation(n), rng.permutation(n)
            assert kendall_tau(a, b) == brute_kendall(a, b)

    def test_matches_scipy_without_ties(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(2, 11))
            a, b = rng.permutation(n), rng.permutation(n)
            assert kendall_tau(a, b) == pytest.approx(stats.kendalltau(a, b).statistic, abs=1e-12)


class TestRanking:
    def test_ascending_ignore_rate(self):
        assert ranking_from_scores([100.0, 0.0, 50.0], descending=False).tolist() == [1, 2, 0]

    def test_ties_by_index(self):
        assert ranking_from_scores([10.0, 10.0, 0.0], descending=False).tolist() == [2, 0, 1]
        assert ranking_from_scores([0.3, 0.3, 0.4]).tolist() == [2, 0, 1]

    def test_positions_invert_ranking(self):
        assert positions([2, 0, 1]).tolist() == [1, 2, 0]


class TestRepeatedRuns:
    def test_seeds_and_parallel_equivalence(self):
        ds = load_bundled("iris")
        seq = repeated_runs(ds, FAST, n_runs=3)
        par = repeated_runs(ds, FAST, n_runs=3, n_jobs=2)
        assert [r.seed for r in seq] == [0, 1, 2]
        assert seq == par

    def test_importance_rates(self):
        rate, ranking = dndt_importance(load_bundled("iris"), FAST, n_runs=3)
        assert ((rate >= 0) & (rate <= 100)).all()
        assert sorted(ranking.tolist()) == [0, 1, 2, 3]

    def test_zero_runs(self):
        with pytest.raises(ValueError):
            repeated_runs(load_bundled("iris"), FAST, n_runs=0)


def test_cart_ranking_is_descending():
    imp, ranking = cart_importance(load_bundled("iris"))
    assert imp.sum() == pytest.approx(1.0)
    assert list(imp[ranking]) == sorted(imp, reverse=True)


def test_analyze_report():
    report = analyze(load_bundled("iris"), FAST, n_runs=3)
    assert -1.0 <= report.kendall_tau <= 1.0
    assert len(report.ignore_rate) == 4 and len(report.test_accuracy) == 3
    doc = json.loads(report.to_json())
    assert doc["dataset"] == "iris"
    lines = report.features_csv().splitlines()
    assert lines[0].startswith("feature,name,ignore_rate") and len(lines) == 5


def test_sweep_rows():
    points = cutpoint_sweep(load_bundled("iris"), replace(FAST, epochs=5), counts=[1, 2], n_runs=2)
    assert [p.n_cutpoints for p in points] == [1, 2]
    assert all(0 <= p.active_fraction <= 1 for p in points)
    assert sweep_csv(points).splitlines()[0] == "n_cutpoints,active_fraction,test_accuracy"


@pytest.mark.xfail(strict=True, reason="with the default optimizer the age and year cut points mostly stay inside the data range")
def test_haberman_ignores_age_and_year():
    runs = repeated_runs(load_bundled("haberman"), TrainConfig(), n_runs=10)
    rate = 100.0 * np.mean([r.ignored for r in runs], axis=0)
    assert rate[0] >= 70 and rate[1] >= 70
