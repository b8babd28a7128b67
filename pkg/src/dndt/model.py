"""The neural decision tree: per-feature binners, Kronecker routing, leaf scores."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .binning import SoftBinner, hard_bin
from .data import Dataset, denormalize

MAX_LEAVES = 2**20
FORMAT_VERSION = 1
MODES = ("soft", "hard", "st-gumbel")


class TooManyLeavesError(ValueError):
    pass


def kron_rows(parts: Sequence[ad.Tensor]) -> ad.Tensor:
    """Row-wise Kronecker product of per-feature memberships, first feature slowest."""
    return reduce(ad.outer_flatten, parts)


@dataclass
class DndtModel:
    """A decision tree expressed as a differentiable network.

    ``leaf_scores`` has one row of class scores per leaf; leaves are indexed
    row-major over the per-feature bin indices with feature 0 varying
    slowest. ``lo``/``hi`` carry the normalization of the training data so
    cut points can be reported in original units.
    """

    binners: list[SoftBinner]
    leaf_scores: ad.Tensor
    feature_names: list[str] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    categories: dict[str, list[str]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.binners:
            raise ValueError("a tree needs at least one feature")
        if not isinstance(self.leaf_scores, ad.Tensor):
            self.leaf_scores = ad.parameter(self.leaf_scores)
        n_leaves = leaf_count(self)
        if n_leaves > MAX_LEAVES:
            raise TooManyLeavesError(
                f"{n_leaves} leaves exceed the single-tree limit of {MAX_LEAVES}; "
                "use a random-subspace forest for wide data"
            )
        if self.leaf_scores.ndim != 2 or self.leaf_scores.shape[0] != n_leaves:
            raise ad.ShapeError("leaf_scores", self.leaf_scores.shape, (n_leaves, "C"))
        if self.n_classes < 2:
            raise ValueError("at least two classes are required")
        if not self.feature_names:
            self.feature_names = [f"x{d}" for d in range(self.n_features)]
        if not self.class_names:
            self.class_names = [str(c) for c in range(self.n_classes)]

    @classmethod
    def init(
        cls,
        train: Dataset,
        n_cutpoints: int | Sequence[int] = 1,
        temperature: float = 0.1,
        rng: np.random.Generator | None = None,
    ) -> "DndtModel":
        """Cut points at training quantiles, leaf scores uniform in [-0.1, 0.1]."""
        rng = rng if rng is not None else np.random.default_rng(0)
        D = train.n_features
        counts = [n_cutpoints] * D if np.isscalar(n_cutpoints) else list(n_cutpoints)
        if len(counts) != D:
            raise ValueError(f"got {len(counts)} cut-point counts for {D} features")
        n_leaves = int(np.prod([n + 1 for n in counts], dtype=np.float64))
        if n_leaves > MAX_LEAVES:
            raise TooManyLeavesError(
                f"{n_leaves} leaves exceed the single-tree limit of {MAX_LEAVES}; "
                "use a random-subspace forest for wide data"
            )
        binners = [SoftBinner.from_quantiles(train.X[:, d], counts[d], temperature) for d in range(D)]
        scores = rng.uniform(-0.1, 0.1, size=(n_leaves, train.n_classes))
        return cls(
            binners,
            ad.parameter(scores),
            feature_names=list(train.feature_names),
            class_names=list(train.class_names),
            lo=train.lo,
            hi=train.hi,
            categories=dict(train.categories),
        )

    @property
    def n_features(self) -> int:
        return len(self.binners)

    @property
    def n_classes(self) -> int:
        return self.leaf_scores.shape[1]

    @property
    def bins(self) -> list[int]:
        return [b.n_bins for b in self.binners]

    @property
    def temperature(self) -> float:
        return self.binners[0].temperature

    @temperature.setter
    def temperature(self, tau: float) -> None:
        for b in self.binners:
            b.temperature = float(tau)

    def parameters(self) -> list[ad.Tensor]:
        return [b.cutpoints for b in self.binners] + [self.leaf_scores]

    def strides(self) -> np.ndarray:
        bins = self.bins
        return np.array([int(np.prod(bins[d + 1:])) for d in range(len(bins))], dtype=np.int64)

    def _check_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ad.ShapeError("route", X.shape, (self.n_features,))
        return X

    def route_tensor(self, X, mode: str = "soft", rng: np.random.Generator | None = None) -> ad.Tensor:
        """Leaf memberships (N, leaves) as a graph node for training."""
        X = self._check_input(X)
        if mode not in MODES:
            raise ValueError(f"unknown routing mode {mode!r}")
        parts = [b(X[:, [d]], mode=mode, rng=rng) for d, b in enumerate(self.binners)]
        return kron_rows(parts)

    def logits_tensor(self, X, mode: str = "soft", rng: np.random.Generator | None = None) -> ad.Tensor:
        return ad.matmul(self.route_tensor(X, mode, rng), self.leaf_scores)

    def leaf_index(self, X) -> np.ndarray:
        """Hard leaf index per instance: sum over features of bin * stride."""
        X = self._check_input(X)
        idx = np.stack([hard_bin(X[:, d], b.sorted_cutpoints()) for d, b in enumerate(self.binners)], axis=1)
        return idx @ self.strides()

    def predict(self, X, mode: str = "hard") -> np.ndarray:
        if mode == "hard":
            return np.argmax(self.leaf_scores.data[self.leaf_index(X)], axis=1)
        return np.argmax(predict_logits(X, self, mode), axis=1)

    def cutpoints_original(self) -> list[np.ndarray]:
        """Sorted cut points in the units of the raw training data."""
        out = []
        for d, b in enumerate(self.binners):
            c = b.sorted_cutpoints()
            out.append(c if self.lo is None else denormalize(c, d, self.lo, self.hi))
        return out

    def to_dict(self) -> dict:
        original = self.cutpoints_original()
        return {
            "format": "dndt-model",
            "version": FORMAT_VERSION,
            "feature_names": list(self.feature_names),
            "class_names": list(self.class_names),
            "temperature": self.temperature,
            "features": [
                {
                    "name": self.feature_names[d],
                    "cutpoints": b.cutpoints.data.tolist(),
                    "cutpoints_original": np.asarray(original[d]).tolist(),
                    "lo": None if self.lo is None else float(self.lo[d]),
                    "hi": None if self.hi is None else float(self.hi[d]),
                    "categories": self.categories.get(self.feature_names[d]),
                }
                for d, b in enumerate(self.binners)
            ],
            "leaf_scores": self.leaf_scores.data.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DndtModel":
        if doc.get("format") != "dndt-model":
            raise ValueError("not a dndt-model document")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        tau = doc["temperature"]
        feats = doc["features"]
        has_norm = all(f["lo"] is not None for f in feats)
        return cls(
            [SoftBinner(ad.parameter(f["cutpoints"]), tau) for f in feats],
            ad.parameter(np.array(doc["leaf_scores"], dtype=np.float64)),
            feature_names=list(doc["feature_names"]),
            class_names=list(doc["class_names"]),
            lo=np.array([f["lo"] for f in feats]) if has_norm else None,
            hi=np.array([f["hi"] for f in feats]) if has_norm else None,
            categories={f["name"]: f["categories"] for f in feats if f.get("categories")},
            meta=dict(doc.get("meta", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "DndtModel":
        return cls.from_dict(json.loads(text))


def leaf_count(model: DndtModel) -> int:
    return int(np.prod(model.bins))


def route(x, model: DndtModel, mode: str = "soft", rng: np.random.Generator | None = None) -> np.ndarray:
    """Leaf membership vector(s) ``z``; 1-D input gives a 1-D result."""
    z = model.route_tensor(x, mode, rng).data
    return z[0] if np.ndim(x) == 1 else z


def predict_logits(x, model: DndtModel, mode: str = "soft", rng: np.random.Generator | None = None) -> np.ndarray:
    out = model.logits_tensor(x, mode, rng).data
    return out[0] if np.ndim(x) == 1 else out


# --- explicit tree view -----------------------------------------------------


@dataclass
class TreeLeaf:
    leaf_index: int
    scores: np.ndarray
    predicted: int
    count: int
    class_counts: np.ndarray

    @property
    def distribution(self) -> np.ndarray:
        e = np.exp(self.scores - self.scores.max())
        return e / e.sum()


@dataclass
class TreeNode:
    feature: int
    feature_name: str
    thresholds: np.ndarray
    children: list
    count: int


@dataclass
class TreeView:
    root: TreeNode
    class_names: list[str]

    def leaves(self) -> list[TreeLeaf]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, TreeLeaf):
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out

    def trace(self, x_original) -> int:
        """Follow thresholds (original units) down to a leaf index."""
        node = self.root
        while isinstance(node, TreeNode):
            node = node.children[hard_bin(x_original[node.feature], node.thresholds)]
        return node.leaf_index


def to_tree_view(model: DndtModel, dataset: Dataset | None = None) -> TreeView:
    """Render the model as a conventional tree, one level per feature.

    Leaf counts are hard-routed tallies of ``dataset`` (normalized the same
    way as the training data).
    """
    n_leaves = leaf_count(model)
    counts = np.zeros(n_leaves, dtype=np.int64)
    class_counts = np.zeros((n_leaves, model.n_classes), dtype=np.int64)
    if dataset is not None and len(dataset):
        idx = model.leaf_index(dataset.X)
        np.add.at(counts, idx, 1)
        np.add.at(class_counts, (idx, dataset.y), 1)
    thresholds = model.cutpoints_original()
    strides = model.strides()

    def build(depth: int, offset: int):
        if depth == model.n_features:
            scores = model.leaf_scores.data[offset]
            return TreeLeaf(offset, scores.copy(), int(np.argmax(scores)), int(counts[offset]), class_counts[offset])
        children = [build(depth + 1, offset + k * int(strides[depth])) for k in range(model.bins[depth])]
        total = sum(c.count for c in children)
        return TreeNode(depth, model.feature_names[depth], np.asarray(thresholds[depth]), children, total)

    return TreeView(build(0, 0), list(model.class_names))


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _interval_labels(thresholds: np.ndarray) -> list[str]:
    t = [_fmt(v) for v in thresholds]
    labels = [f"< {t[0]}"]
    labels += [f"[{lo}, {hi})" for lo, hi in zip(t[:-1], t[1:])]
    labels.append(f">= {t[-1]}")
    return labels


def _quote(s: str) -> str:
    # backslash escapes (\n) are left for graphviz to interpret
    return '"' + s.replace('"', '\\"') + '"'


def tree_view_to_dot(view: TreeView, name: str = "dndt") -> str:
    lines = [f"digraph {name} {{", "  node [fontname=helvetica];"]
    counter = iter(range(1 << 62))

    def emit(node) -> str:
        nid = f"n{next(counter)}"
        if isinstance(node, TreeLeaf):
            label = f"{view.class_names[node.predicted]}\\nn={node.count}"
            lines.append(f"  {nid} [shape=box, label={_quote(label)}];")
            return nid
        lines.append(f"  {nid} [shape=ellipse, label={_quote(node.feature_name)}];")
        for child, edge in zip(node.children, _interval_labels(node.thresholds)):
            cid = emit(child)
            lines.append(f"  {nid} -> {cid} [label={_quote(edge)}];")
        return nid

    emit(view.root)
    lines.append("}")
    return "\n".join(lines) + "\n"
