"""Interpretability analyses: active cut points, ignored features, rankings.

A cut point is *active* when the training data has at least one value on
each side of it (``x <= c`` on the left, ``x > c`` on the right, matching
:func:`dndt.binning.hard_bin`). A feature whose cut points are all inactive
never influences routing; how often that happens over repeated runs gives a
feature-importance signal that can be compared with CART's Gini importance.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cart import fit_cart, gini_importance, predict_cart
from .data import Dataset, EmptyDatasetError, train_test
from .model import DndtModel
from .train import TrainConfig, accuracy, fit


@dataclass
class ActiveCutpoints:
    counts: np.ndarray
    totals: np.ndarray
    active: list[np.ndarray]

    @property
    def fractions(self) -> np.ndarray:
        return self.counts / self.totals

    @property
    def overall(self) -> float:
        """Share of all cut points in the model that are active."""
        return float(self.counts.sum() / self.totals.sum())


def active_cutpoints(model: DndtModel, X) -> ActiveCutpoints:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDatasetError("active cut points need at least one instance")
    lo, hi = X.min(axis=0), X.max(axis=0)
    flags = []
    for d, b in enumerate(model.binners):
        c = b.sorted_cutpoints()
        flags.append((lo[d] <= c) & (c < hi[d]))
    return ActiveCutpoints(
        np.array([f.sum() for f in flags]),
        np.array([f.size for f in flags]),
        flags,
    )


def ignored_features(model: DndtModel, X) -> np.ndarray:
    return active_cutpoints(model, X).counts == 0


def derive_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class RunResult:
    seed: int
    test_accuracy: float
    train_accuracy: float
    active_counts: list[int]
    active_totals: list[int]
    ignored: list[bool]


def _one_run(args) -> RunResult:
    dataset, config, split_seed, fraction = args
    train, test = train_test(dataset, fraction, split_seed)
    model, _ = fit(train, config)
    act = active_cutpoints(model, train.X)
    return RunResult(
        config.seed,
        accuracy(model, test),
        accuracy(model, train),
        act.counts.tolist(),
        act.totals.tolist(),
        (act.counts == 0).tolist(),
    )


def repeated_runs(
    dataset: Dataset,
    config: TrainConfig,
    n_runs: int = 10,
    fraction: float = 0.8,
    n_jobs: int = 1,
) -> list[RunResult]:
    """Train ``n_runs`` trees on raw ``dataset``, each on its own seeded split.

    Run ``i`` uses ``config.seed + i`` for both the split and training so
    that results are identical however the work is distributed.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    jobs = [(dataset, replace(config, seed=config.seed + i), config.seed + i, fraction) for i in range(n_runs)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_one_run, jobs))
    return [_one_run(j) for j in jobs]


def ranking_from_scores(scores, descending: bool = True) -> np.ndarray:
    """Items ordered most-important first; ties keep the lower index first."""
    scores = np.asarray(scores, dtype=np.float64)
    keys = -scores if descending else scores
    return np.argsort(keys, kind="stable")


def positions(ranking) -> np.ndarray:
    """Rank position of each item given an ordering of item indices."""
    ranking = np.asarray(ranking)
    pos = np.empty(ranking.size, dtype=np.int64)
    pos[ranking] = np.arange(ranking.size)
    return pos


def kendall_tau(rank_a, rank_b) -> float:
    """Tau-a between two rank vectors (rank position of each item).

    Pairs tied in either vector count as neither concordant nor discordant.
    """
    a = np.asarray(rank_a, dtype=np.float64)
    b = np.asarray(rank_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"rankings differ in length: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError("need at least two items")
    iu = np.triu_indices(n, k=1)
    s = np.sign(a[:, None] - a[None, :])[iu] * np.sign(b[:, None] - b[None, :])[iu]
    return float(s.sum() / (n * (n - 1) / 2))


@dataclass
class AnalysisReport:
    dataset: str
    feature_names: list[str]
    n_runs: int
    ignore_rate: list[float]
    active_fraction: list[float]
    dndt_ranking: list[int]
    cart_importance: list[float]
    cart_ranking: list[int]
    kendall_tau: float
    test_accuracy: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def features_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "name", "ignore_rate", "active_fraction", "dndt_rank", "cart_importance", "cart_rank"])
        dpos, cpos = positions(self.dndt_ranking), positions(self.cart_ranking)
        for d, name in enumerate(self.feature_names):
            w.writerow([d, name, repr(self.ignore_rate[d]), repr(self.active_fraction[d]),
                        int(dpos[d]), repr(self.cart_importance[d]), int(cpos[d])])
        return buf.getvalue()


def dndt_importance(
    dataset: Dataset,
    config: TrainConfig,
    n_runs: int = 10,
    fraction: float = 0.8,
    n_jobs: int = 1,
    runs: list[RunResult] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Percent of runs ignoring each feature, and the ranking (rarest ignored first)."""
    runs = runs if runs is not None else repeated_runs(dataset, config, n_runs, fraction, n_jobs)
    rate = 100.0 * np.mean([r.ignored for r in runs], axis=0)
    return rate, ranking_from_scores(rate, descending=False)


def cart_importance(dataset: Dataset, fraction: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    train, _ = train_test(dataset, fraction, seed)
    tree = fit_cart(train.X, train.y, train.n_classes)
    imp = gini_importance(tree, train.n_features)
    return imp, ranking_from_scores(imp, descending=True)


def cart_accuracy(dataset: Dataset, fraction: float = 0.8, seed: int = 0, max_depth=None) -> tuple[float, float]:
    """(train, test) accuracy of an unpruned CART tree."""
    train, test = train_test(dataset, fraction, seed)
    tree = fit_cart(train.X, train.y, train.n_classes, max_depth)
    return (float(np.mean(predict_cart(train.X, tree) == train.y)),
            float(np.mean(predict_cart(test.X, tree) == test.y)))


def analyze(
    dataset: Dataset,
    config: TrainConfig,
    n_runs: int = 10,
    fraction: float = 0.8,
    n_jobs: int = 1,
) -> AnalysisReport:
    """Ignore rates over repeated runs, CART importance, and their Kendall tau."""
    runs = repeated_runs(dataset, config, n_runs, fraction, n_jobs)
    rate, dndt_rank = dndt_importance(dataset, config, runs=runs)
    counts = np.sum([r.active_counts for r in runs], axis=0)
    totals = np.sum([r.active_totals for r in runs], axis=0)
    imp, cart_rank = cart_importance(dataset, fraction, config.seed)
    tau = kendall_tau(positions(dndt_rank), positions(cart_rank))
    return AnalysisReport(
        dataset.name,
        list(dataset.feature_names),
        n_runs,
        rate.tolist(),
        (counts / totals).tolist(),
        dndt_rank.tolist(),
        imp.tolist(),
        cart_rank.tolist(),
        tau,
        [r.test_accuracy for r in runs],
    )


@dataclass
class SweepPoint:
    n_cutpoints: int
    active_fraction: float
    test_accuracy: float
    active_fraction_runs: list[float]
    test_accuracy_runs: list[float]


def cutpoint_sweep(
    dataset: Dataset,
    config: TrainConfig,
    counts=range(1, 6),
    n_runs: int = 10,
    fraction: float = 0.8,
    n_jobs: int = 1,
) -> list[SweepPoint]:
    """Active-cut-point share and test accuracy as the cut points per feature grow."""
    out = []
    for n in counts:
        runs = repeated_runs(dataset, replace(config, cutpoints_per_feature=n), n_runs, fraction, n_jobs)
        act = [sum(r.active_counts) / sum(r.active_totals) for r in runs]
        acc = [r.test_accuracy for r in runs]
        out.append(SweepPoint(n, float(np.mean(act)), float(np.mean(acc)), act, acc))
    return out


def sweep_csv(points: list[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_cutpoints", "active_fraction", "test_accuracy"])
    for p in points:
        w.writerow([p.n_cutpoints, repr(p.active_fraction), repr(p.test_accuracy)])
    return buf.getvalue()
