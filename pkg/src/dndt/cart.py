"""Greedy CART classifier (Gini criterion, exhaustive best split).

Used as the conventional decision-tree baseline and as the source of the
Gini feature-importance ranking compared against DNDT feature selection.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import EmptyDatasetError

TIE_EPS = 1e-12


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("gini of an empty node is undefined")
    p = counts / total
    return float(1.0 - np.sum(p * p))


class Split(NamedTuple):
    feature: int
    threshold: float
    decrease: float


@dataclass
class CartLeaf:
    class_counts: np.ndarray
    predicted: int
    n_samples: int
    gini: float


@dataclass
class CartSplit:
    feature: int
    threshold: float
    left: "CartLeaf | CartSplit"
    right: "CartLeaf | CartSplit"
    gini: float
    n_samples: int
    class_counts: np.ndarray


CartNode = CartLeaf | CartSplit


def _class_counts(y: np.ndarray, n_classes: int) -> np.ndarray:
    return np.bincount(y, minlength=n_classes).astype(np.float64)


def _scan(X: np.ndarray, y: np.ndarray, n_classes: int, features=None) -> Split | None:
    """Best (feature, midpoint) by weighted Gini decrease, zero decrease allowed.

    Ties go to the lower feature index, then the lower threshold.
    """
    n = X.shape[0]
    parent = gini(_class_counts(y, n_classes))
    best: Split | None = None
    onehot = np.eye(n_classes)[y]
    for f in range(X.shape[1]) if features is None else features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        left = np.cumsum(onehot[order], axis=0)[:-1]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        right = left[-1] + onehot[order[-1]] - left
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        gl = 1.0 - np.sum((left / nl[:, None]) ** 2, axis=1)
        gr = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
        dec = parent - (nl * gl + nr * gr) / n
        dec[~valid] = -np.inf
        # first index within TIE_EPS of the max gives the lowest threshold
        k = int(np.flatnonzero(dec >= dec.max() - TIE_EPS)[0])
        if best is None or dec[k] > best.decrease + TIE_EPS:
            best = Split(int(f), float((xs[k] + xs[k + 1]) / 2), float(dec[k]))
    return best


def best_split(X, y, n_classes: int | None = None, features=None) -> Split | None:
    """Split maximizing the Gini decrease, or ``None`` when nothing improves."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n_classes = n_classes or int(y.max()) + 1
    if X.shape[0] < 2:
        return None
    s = _scan(X, y, n_classes, features)
    if s is None or s.decrease <= TIE_EPS:
        return None
    return s


def _leaf(y, n_classes) -> CartLeaf:
    counts = _class_counts(y, n_classes)
    return CartLeaf(counts, int(np.argmax(counts)), int(y.size), gini(counts))


def _grow(X, y, n_classes, depth, max_depth) -> CartNode:
    counts = _class_counts(y, n_classes)
    g = gini(counts)
    if g <= 0 or y.size < 2 or (max_depth is not None and depth >= max_depth):
        return _leaf(y, n_classes)
    s = best_split(X, y, n_classes)
    if s is None:
        # zero-gain splits still separate XOR-like patterns deeper down
        s = _scan(X, y, n_classes)
        if s is None:
            return _leaf(y, n_classes)
    mask = X[:, s.feature] <= s.threshold
    return CartSplit(
        s.feature,
        s.threshold,
        _grow(X[mask], y[mask], n_classes, depth + 1, max_depth),
        _grow(X[~mask], y[~mask], n_classes, depth + 1, max_depth),
        g,
        int(y.size),
        counts,
    )


def fit_cart(X, y, n_classes: int | None = None, max_depth: int | None = None) -> CartNode:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise EmptyDatasetError("cannot fit a tree on an empty dataset")
    return _grow(X, y, n_classes or int(y.max()) + 1, 0, max_depth)


def predict_cart(x, tree: CartNode):
    """Class for one instance (1-D ``x``) or an array of classes (2-D ``x``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return np.array([predict_cart(row, tree) for row in x], dtype=np.int64)
    node = tree
    while isinstance(node, CartSplit):
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.predicted


def iter_splits(tree: CartNode):
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, CartSplit):
            yield node
            stack.extend([node.right, node.left])


def gini_importance(tree: CartNode, n_features: int) -> np.ndarray:
    """Per-feature share of the total sample-weighted Gini decrease."""
    imp = np.zeros(n_features)
    for node in iter_splits(tree):
        imp[node.feature] += (
            node.n_samples * node.gini
            - node.left.n_samples * node.left.gini
            - node.right.n_samples * node.right.gini
        )
    total = imp.sum()
    if total <= 0:
        warnings.warn("tree has no impurity-reducing split; importance left unnormalized", stacklevel=2)
        return imp
    return imp / total


def depth(tree: CartNode) -> int:
    if isinstance(tree, CartLeaf):
        return 0
    return 1 + max(depth(tree.left), depth(tree.right))


def cart_to_dot(tree: CartNode, feature_names=None, class_names=None, name: str = "cart") -> str:
    """Graphviz DOT in the same style as the DNDT tree view."""
    lines = [f"digraph {name} {{", "  node [fontname=helvetica];"]
    counter = iter(range(1 << 62))

    def fname(f):
        return feature_names[f] if feature_names else f"x{f}"

    def cname(c):
        return class_names[c] if class_names else str(c)

    def emit(node) -> str:
        nid = f"n{next(counter)}"
        if isinstance(node, CartLeaf):
            label = f"{cname(node.predicted)}\\nn={node.n_samples}"
            lines.append(f'  {nid} [shape=box, label="{label}"];')
            return nid
        lines.append(f'  {nid} [shape=ellipse, label="{fname(node.feature)}"];')
        for child, edge in ((node.left, f"<= {node.threshold:.4g}"), (node.right, f"> {node.threshold:.4g}")):
            cid = emit(child)
            lines.append(f'  {nid} -> {cid} [label="{edge}"];')
        return nid

    emit(tree)
    lines.append("}")
    return "\n".join(lines) + "\n"


def cart_to_dict(tree: CartNode) -> dict:
    if isinstance(tree, CartLeaf):
        return {"leaf": True, "class_counts": tree.class_counts.tolist(), "predicted": tree.predicted}
    return {
        "leaf": False,
        "feature": tree.feature,
        "threshold": tree.threshold,
        "n_samples": tree.n_samples,
        "gini": tree.gini,
        "left": cart_to_dict(tree.left),
        "right": cart_to_dict(tree.right),
    }
