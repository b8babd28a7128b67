"""Random-subspace ensemble of neural decision trees with majority voting."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .model import FORMAT_VERSION, DndtModel
from .train import TrainConfig, TrainReport, fit

FOREST_TRIGGER = 12


@dataclass
class ForestModel:
    trees: list[DndtModel]
    subsets: list[list[int]]
    n_features: int
    class_names: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.trees) != len(self.subsets) or not self.trees:
            raise ValueError("need one feature subset per tree and at least one tree")
        sizes = {len(s) for s in self.subsets}
        if len(sizes) != 1:
            raise ValueError("all subsets must have the same size")
        for s in self.subsets:
            if len(set(s)) != len(s) or min(s) < 0 or max(s) >= self.n_features:
                raise ValueError(f"invalid feature subset {s}")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def subset_size(self) -> int:
        return len(self.subsets[0])

    @property
    def n_classes(self) -> int:
        return self.trees[0].n_classes

    def votes(self, X) -> np.ndarray:
        """Hard predictions of every tree, shape (n_trees, N)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.stack([t.predict(X[:, s]) for t, s in zip(self.trees, self.subsets)])

    def predict(self, X) -> np.ndarray:
        return majority(self.votes(X), self.n_classes)

    def to_dict(self) -> dict:
        return {
            "format": "dndt-forest",
            "version": FORMAT_VERSION,
            "n_features": self.n_features,
            "class_names": list(self.class_names),
            "trees": [{"features": list(s), "model": t.to_dict()} for t, s in zip(self.trees, self.subsets)],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ForestModel":
        if doc.get("format") != "dndt-forest":
            raise ValueError("not a dndt-forest document")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest version {doc.get('version')}")
        return cls(
            [DndtModel.from_dict(t["model"]) for t in doc["trees"]],
            [list(t["features"]) for t in doc["trees"]],
            doc["n_features"],
            list(doc["class_names"]),
            dict(doc.get("meta", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def majority(votes: np.ndarray, n_classes: int) -> np.ndarray:
    """Most-voted class per column; ties go to the lowest class index."""
    votes = np.asarray(votes, dtype=np.int64)
    if votes.ndim == 1:
        votes = votes[:, None]
    tally = np.zeros((n_classes, votes.shape[1]), dtype=np.int64)
    for row in votes:
        tally[row, np.arange(votes.shape[1])] += 1
    return np.argmax(tally, axis=0)


def predict_majority(x, forest: ForestModel) -> int:
    return int(forest.predict(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def draw_subsets(n_features: int, n_trees: int, subset_size: int, seed: int) -> tuple[list[list[int]], list[int]]:
    """Feature subsets (without replacement, sorted) and per-tree seeds."""
    if subset_size > n_features:
        raise ValueError(f"subset_size {subset_size} exceeds the {n_features} available features")
    if subset_size < 1 or n_trees < 1:
        raise ValueError("subset_size and n_trees must be >= 1")
    ss = np.random.SeedSequence(seed)
    subset_seq, *tree_seqs = ss.spawn(n_trees + 1)
    rng = np.random.default_rng(subset_seq)
    subsets = [sorted(rng.choice(n_features, subset_size, replace=False).tolist()) for _ in range(n_trees)]
    seeds = [int(s.generate_state(1)[0]) for s in tree_seqs]
    return subsets, seeds


def _fit_member(args):
    train, val, config = args
    return fit(train, config, val)


def fit_forest(
    train: Dataset,
    config: TrainConfig | None = None,
    n_trees: int = 10,
    subset_size: int = 10,
    val: Dataset | None = None,
    n_jobs: int = 1,
) -> tuple[ForestModel, list[TrainReport]]:
    """Train ``n_trees`` trees, each on its own random feature subset.

    Every tree uses the shared hyperparameters with a seed derived from the
    master seed, so results do not depend on ``n_jobs``.
    """
    config = config or TrainConfig()
    subsets, seeds = draw_subsets(train.n_features, n_trees, subset_size, config.seed)
    jobs = [
        (train.select_features(s), None if val is None else val.select_features(s), replace(config, seed=sd))
        for s, sd in zip(subsets, seeds)
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_fit_member, jobs))
    else:
        results = [_fit_member(j) for j in jobs]
    forest = ForestModel(
        [m for m, _ in results],
        subsets,
        train.n_features,
        list(train.class_names),
        {"train_config": config.to_dict(), "feature_names": list(train.feature_names),
         "categories": dict(train.categories)},
    )
    return forest, [r for _, r in results]
