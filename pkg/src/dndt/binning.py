"""Differentiable soft binning of a scalar feature.

A feature with ``n`` cut points is split into ``n + 1`` bins by a one-layer
network: logits ``w * x + b`` with the fixed weight ``w = [1, ..., n + 1]``
and the bias ``b = [0, -c1, -c1 - c2, ...]`` built from the sorted cut points.
A softmax at temperature ``tau`` turns the logits into near one-hot bin
memberships.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DUPLICATE_NUDGE = 1e-12


def bin_weights(n_cutpoints: int) -> np.ndarray:
    return np.arange(1, n_cutpoints + 2, dtype=np.float64)


def _check_cutpoints(cutpoints) -> np.ndarray:
    cutpoints = np.asarray(cutpoints, dtype=np.float64)
    if cutpoints.ndim != 1 or cutpoints.size == 0:
        raise ValueError("at least one cut point is required")
    return cutpoints


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return tau


def build_bias(cutpoints) -> np.ndarray:
    """Bias vector ``[0, -c1, -(c1 + c2), ...]`` for sorted cut points."""
    cutpoints = _check_cutpoints(cutpoints)
    return np.concatenate([[0.0], -np.cumsum(cutpoints)])


def sort_cutpoints(cutpoints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Stable sort order plus the nudge that separates exact duplicates.

    Returns ``(order, offsets)``: the sorted vector used downstream is
    ``cutpoints[order] + offsets``.
    """
    order = np.argsort(cutpoints, kind="stable")
    ordered = cutpoints[order]
    offsets = np.zeros_like(ordered)
    if ordered.size > 1:
        dup = np.concatenate([[False], ordered[1:] == ordered[:-1]])
        offsets[dup] = DUPLICATE_NUDGE * np.arange(ordered.size)[dup]
    return order, offsets


def bias_tensor(cutpoints: ad.Tensor) -> ad.Tensor:
    """Differentiable bias; the sort is a fixed permutation for this pass."""
    _check_cutpoints(cutpoints.data)
    order, offsets = sort_cutpoints(cutpoints.data)
    ordered = ad.take(cutpoints, order)
    if offsets.any():
        ordered = ordered + offsets
    return ad.concat([np.zeros(1), -ad.cumsum(ordered)])


def bin_logits(x: ad.Tensor, cutpoints: ad.Tensor) -> ad.Tensor:
    """Pre-temperature logits ``w * x + b`` for a column ``x`` of shape (N, 1)."""
    w = bin_weights(cutpoints.shape[0]).reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != 1:
        raise ad.ShapeError("bin_logits", x.shape, w.shape)
    return ad.matmul(x, w) + bias_tensor(cutpoints)


def soft_bin_tensor(x: ad.Tensor, cutpoints: ad.Tensor, tau: float) -> ad.Tensor:
    """Soft bin memberships of shape (N, n + 1)."""
    tau = _check_tau(tau)
    return ad.softmax(ad.mul_scalar(bin_logits(x, cutpoints), 1.0 / tau), axis=1)


def st_gumbel_bin_tensor(
    x: ad.Tensor, cutpoints: ad.Tensor, tau: float, rng: np.random.Generator
) -> ad.Tensor:
    """Exactly one-hot memberships with straight-through gradients.

    Each row is a Gumbel-max sample from ``softmax(logits / tau)``; the
    backward pass goes through the relaxation ``softmax(logits / tau + g)``
    using the same Gumbel noise ``g``, whose argmax is the sampled bin.
    """
    tau = _check_tau(tau)
    scaled = ad.mul_scalar(bin_logits(x, cutpoints), 1.0 / tau)
    noise = rng.gumbel(size=scaled.shape)
    relaxed = ad.softmax(scaled + noise, axis=1)
    hard = np.zeros(scaled.shape)
    hard[np.arange(scaled.shape[0]), np.argmax(scaled.data + noise, axis=1)] = 1.0
    return ad.straight_through(hard, relaxed)


def hard_bin(x, cutpoints) -> np.ndarray | int:
    """Number of cut points ``<= x``; ``x`` on a cut point goes to the upper bin."""
    cutpoints = np.sort(np.asarray(cutpoints, dtype=np.float64))
    idx = np.searchsorted(cutpoints, x, side="right")
    return int(idx) if np.ndim(idx) == 0 else idx


@dataclass
class SoftBinner:
    """Trainable cut points for one feature plus its softmax temperature."""

    cutpoints: ad.Tensor
    temperature: float = 0.1

    def __post_init__(self):
        if not isinstance(self.cutpoints, ad.Tensor):
            self.cutpoints = ad.parameter(self.cutpoints)
        _check_cutpoints(self.cutpoints.data)
        _check_tau(self.temperature)

    @classmethod
    def from_quantiles(cls, values, n_cutpoints: int, temperature: float = 0.1) -> "SoftBinner":
        """Cut points at the ``i / (n + 1)`` quantiles of ``values``."""
        if n_cutpoints < 1:
            raise ValueError("n_cutpoints must be >= 1")
        qs = np.arange(1, n_cutpoints + 1) / (n_cutpoints + 1)
        return cls(ad.parameter(np.quantile(np.asarray(values, dtype=np.float64), qs)), temperature)

    @property
    def n_cutpoints(self) -> int:
        return self.cutpoints.shape[0]

    @property
    def n_bins(self) -> int:
        return self.n_cutpoints + 1

    @property
    def weights(self) -> np.ndarray:
        return bin_weights(self.n_cutpoints)

    def sorted_cutpoints(self) -> np.ndarray:
        order, offsets = sort_cutpoints(self.cutpoints.data)
        return self.cutpoints.data[order] + offsets

    def __call__(self, x, mode: str = "soft", rng: np.random.Generator | None = None) -> ad.Tensor:
        """Bin memberships for a column of values, shape (N, n + 1)."""
        x = ad.as_tensor(x)
        if x.ndim == 1:
            x = ad.reshape(x, (-1, 1))
        if mode == "soft":
            return soft_bin_tensor(x, self.cutpoints, self.temperature)
        if mode == "st-gumbel":
            if rng is None:
                raise ValueError("st-gumbel mode needs an rng")
            return st_gumbel_bin_tensor(x, self.cutpoints, self.temperature, rng)
        if mode == "hard":
            idx = hard_bin(x.data[:, 0], self.sorted_cutpoints())
            out = np.zeros((x.shape[0], self.n_bins))
            out[np.arange(x.shape[0]), idx] = 1.0
            return ad.Tensor(out)
        raise ValueError(f"unknown binning mode {mode!r}")


def soft_bin(x: float, binner: SoftBinner) -> np.ndarray:
    """Bin membership vector for one scalar value."""
    return binner(np.array([[float(x)]])).data[0]


def st_gumbel_bin(x: float, binner: SoftBinner, rng: np.random.Generator) -> np.ndarray:
    return binner(np.array([[float(x)]]), mode="st-gumbel", rng=rng).data[0]


@dataclass(frozen=True)
class AnnealSchedule:
    """Exponential temperature decay ``tau0 * decay**epoch`` floored at ``tau_min``."""

    tau0: float = 0.1
    decay: float = 1.0
    tau_min: float = 0.01

    def __post_init__(self):
        if not self.tau0 > 0:
            raise ValueError("tau0 must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if not 0 < self.tau_min:
            raise ValueError("tau_min must be positive")

    def __call__(self, epoch: int) -> float:
        return anneal_temperature(self, epoch)


def anneal_temperature(schedule: AnnealSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    tau = schedule.tau0 * schedule.decay**epoch
    return max(tau, min(schedule.tau_min, schedule.tau0))
