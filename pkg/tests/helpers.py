"""Independent oracles shared by the test modules."""

import itertools

import numpy as np


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. every entry of ``x`` (mutated in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(a, b, floor: float = 1e-6) -> float:
    """Largest elementwise |a - b| / max(|a|, |b|, floor)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def brute_kron(vectors):
    """Nested loop over every index tuple, first vector varying slowest."""
    out = []
    for combo in itertools.product(*[range(len(v)) for v in vectors]):
        p = 1.0
        for v, i in zip(vectors, combo):
            p *= v[i]
        out.append(p)
    return np.array(out)


def brute_kendall(a, b) -> float:
    n = len(a)
    conc = disc = 0
    for i in range(n):
        for j in range(i + 1, n):
            s = (a[i] - a[j]) * (b[i] - b[j])
            if s > 0:
                conc += 1
            elif s < 0:
                disc += 1
    return (conc - disc) / (n * (n - 1) / 2)


def gini_counts(labels, n_classes):
    counts = np.bincount(labels, minlength=n_classes)
    p = counts / counts.sum()
    return 1.0 - float(np.sum(p * p))


def brute_best_split(X, y, n_classes):
    """Every (feature, midpoint) pair, scored with plain Python loops."""
    n = len(y)
    parent = gini_counts(y, n_classes)
    best = None
    for f in range(X.shape[1]):
        values = sorted(set(X[:, f].tolist()))
        for lo, hi in zip(values[:-1], values[1:]):
            t = (lo + hi) / 2
            left = y[X[:, f] <= t]
            right = y[X[:, f] > t]
            dec = parent - len(left) / n * gini_counts(left, n_classes) - len(right) / n * gini_counts(right, n_classes)
            if best is None or dec > best[2] + 1e-12:
                best = (f, t, dec)
    return best


def make_dataset(X, y, n_classes=None, name="toy"):
    """Normalized in-memory dataset for small hand-built problems."""
    from dndt.data import Dataset, normalize

    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    C = n_classes or int(y.max()) + 1
    raw = Dataset(X, y, [f"f{d}" for d in range(X.shape[1])], [f"c{c}" for c in range(C)], name=name)
    return normalize(raw)
