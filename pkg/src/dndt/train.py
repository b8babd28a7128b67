"""Mini-batch gradient training of cut points and leaf scores together."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .binning import AnnealSchedule
from .data import Dataset, EmptyDatasetError
from .model import DndtModel

logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "sgd-momentum", "adam")


class TrainingDiverged(ArithmeticError):
    def __init__(self, epoch: int, value: float):
        self.epoch = epoch
        super().__init__(f"non-finite training loss ({value}) at epoch {epoch}")


@dataclass
class TrainConfig:
    learning_rate: float = 0.03
    batch_size: int = 32
    epochs: int = 200
    optimizer: str = "adam"
    momentum: float = 0.9
    weight_decay: float = 0.0
    tau: float = 0.1
    anneal: float = 0.985
    tau_min: float = 0.01
    st_gumbel: bool = False
    seed: int = 0
    cutpoints_per_feature: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.cutpoints_per_feature < 1:
            raise ValueError("batch_size, epochs and cutpoints_per_feature must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        self.schedule  # validates tau/anneal/tau_min

    @property
    def schedule(self) -> AnnealSchedule:
        return AnnealSchedule(self.tau, self.anneal, self.tau_min)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    tau: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_acc", "val_acc", "tau"])
        for e in range(len(self)):
            val = self.val_acc[e] if self.val_acc else ""
            w.writerow([e, repr(self.loss[e]), repr(self.train_acc[e]), repr(val) if val != "" else "", repr(self.tau[e])])
        return buf.getvalue()


def cross_entropy(logits: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    """Mean softmax cross-entropy of (N, C) logits against integer labels."""
    labels = np.asarray(labels)
    n, C = logits.shape
    if labels.shape != (n,):
        raise ad.ShapeError("cross_entropy", logits.shape, labels.shape)
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"labels must lie in [0, {C})")
    onehot = np.zeros((n, C))
    onehot[np.arange(n), labels] = 1.0
    return -ad.mean(ad.sum(ad.log_softmax(logits, axis=1) * onehot, axis=1))


def loss(X, y, model: DndtModel, mode: str = "soft", rng: np.random.Generator | None = None) -> ad.Tensor:
    X = np.asarray(X)
    if X.shape[0] == 0:
        raise EmptyDatasetError("empty batch")
    return cross_entropy(model.logits_tensor(X, mode, rng), y)


class Optimizer:
    def __init__(self, params: list[ad.Tensor], lr: float, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def _grad(self, p: ad.Tensor) -> np.ndarray:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        return g + self.weight_decay * p.data if self.weight_decay else g

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, lr, weight_decay=0.0, momentum=0.0):
        super().__init__(params, lr, weight_decay)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            g = self._grad(p)
            if self.momentum:
                v *= self.momentum
                v += g
                g = v
            p.data -= self.lr * g


class Adam(Optimizer):
    def __init__(self, params, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr, weight_decay)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            g = self._grad(p)
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            m_hat = m / (1 - self.b1**self.t)
            v_hat = v / (1 - self.b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig, params: list[ad.Tensor]) -> Optimizer:
    if config.optimizer == "adam":
        return Adam(params, config.learning_rate, config.weight_decay)
    momentum = config.momentum if config.optimizer == "sgd-momentum" else 0.0
    return SGD(params, config.learning_rate, config.weight_decay, momentum)


def accuracy(model, dataset: Dataset) -> float:
    return float(np.mean(model.predict(dataset.X) == dataset.y))


def fit(
    train: Dataset,
    config: TrainConfig | None = None,
    val: Dataset | None = None,
    model: DndtModel | None = None,
) -> tuple[DndtModel, TrainReport]:
    """Train a tree on a normalized dataset.

    Cut points of every feature and the leaf score matrix are updated from
    the same backward pass at every step. Reported accuracies use hard
    routing, which is how the fitted tree predicts.
    """
    config = config or TrainConfig()
    if len(train) == 0:
        raise EmptyDatasetError("cannot fit on an empty dataset")
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = DndtModel.init(train, config.cutpoints_per_feature, config.tau, rng)
    model.meta.setdefault("train_config", config.to_dict())
    opt = make_optimizer(config, model.parameters())
    mode = "st-gumbel" if config.st_gumbel else "soft"
    schedule = config.schedule
    report = TrainReport()
    n = len(train)
    for epoch in range(config.epochs):
        tau = schedule(epoch)
        model.temperature = tau
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            batch_loss = loss(train.X[idx], train.y[idx], model, mode, rng)
            value = batch_loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, value)
            batch_loss.backward()
            opt.step()
            total += value * idx.size
        report.loss.append(total / n)
        report.train_acc.append(accuracy(model, train))
        if val is not None:
            report.val_acc.append(accuracy(model, val))
        report.tau.append(tau)
        for p in model.parameters():
            if not np.all(np.isfinite(p.data)):
                raise TrainingDiverged(epoch, float("nan"))
    logger.debug("fit done: loss %.4f train_acc %.3f", report.loss[-1], report.train_acc[-1])
    return model, report
