"""Training loop: seeded shuffling, stepwise-halved learning rate,
best-validation checkpointing and training-error early stopping."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..utils import require, rng_from_seed
from .net import NetSpec, forward, init_params, loss_and_grads


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-4
    lr_halving_epochs: int = 25
    max_epochs: int = 200
    patience: int = 10            # epochs without training-error improvement
    val_cadence: int = 10         # validation every this many epochs
    l2: float = 0.0               # weight decay (static models)
    optimizer: str = "adam"       # "adam" | "sgd"
    seed: int = 0

    def __post_init__(self):
        require(self.batch_size >= 1 and self.lr > 0, "bad batch size / lr")
        require(self.max_epochs >= 1 and self.lr_halving_epochs >= 1, "bad epoch counts")
        require(1 <= self.patience <= self.max_epochs, "patience must be <= max epochs")
        require(self.val_cadence >= 1, "validation cadence must be >= 1")
        require(self.optimizer in ("adam", "sgd"), "optimizer must be adam or sgd")
        require(self.l2 >= 0, "L2 coefficient must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def lr_at(config: TrainConfig, epoch: int) -> float:
    """lr(epoch) = lr0 * 0.5^floor(epoch / halving period), epoch 0-based."""
    return config.lr * 0.5 ** (epoch // config.lr_halving_epochs)


class Adam:
    """Standard first-order adaptive optimizer (beta1=0.9, beta2=0.999)."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k in params:
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(params[k]))
            v = self.v.setdefault(k, np.zeros_like(params[k]))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


class Sgd:
    """Plain gradient descent, for the analytically checkable examples."""

    def step(self, params: dict, grads: dict, lr: float) -> None:
        for k in params:
            params[k] -= lr * grads[k]


def make_optimizer(config: TrainConfig):
    return Adam() if config.optimizer == "adam" else Sgd()


def optimizer_step(params: dict, grads: dict, lr: float, opt) -> dict:
    """Deterministic in-place update; returns params for convenience."""
    opt.step(params, grads, lr)
    return params


@dataclass
class TrainHistory:
    rows: list[tuple[int, float, float | None, float]] = field(default_factory=list)
    best_val_mae: float | None = None
    best_epoch: int | None = None
    stopped_epoch: int | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_mae", "val_mae", "lr"])
            for epoch, train_mae, val_mae, lr in self.rows:
                w.writerow([epoch, f"{train_mae:.10g}",
                            "" if val_mae is None else f"{val_mae:.10g}",
                            f"{lr:.10g}"])


def evaluate_mae(params: dict, spec: NetSpec, x: np.ndarray, y: np.ndarray,
                 batch_size: int = 64) -> float:
    """Teacher-forced MAE over a sample stack, batched."""
    total = 0.0
    for i in range(0, x.shape[0], batch_size):
        pred, _ = forward(params, spec, x[i:i + batch_size])
        total += float(np.abs(pred - y[i:i + batch_size]).sum())
    return total / y.size


def train(spec: NetSpec, x_train: np.ndarray, y_train: np.ndarray,
          x_val: np.ndarray, y_val: np.ndarray, config: TrainConfig
          ) -> tuple[dict[str, np.ndarray], TrainHistory]:
    """Train and return (best-validation checkpoint, history).

    Batches are reshuffled every epoch from the seeded generator. The
    checkpoint is the parameter set at the best validation error, measured
    every `val_cadence` epochs on the supplied validation split (one-step
    teacher-forced error for auto-regressive sample layouts). Training
    halts early after `patience` consecutive epochs without improvement in
    training error.
    """
    require(x_train.shape[0] > 0 and x_val.shape[0] > 0, "empty train or val split")
    n = x_train.shape[0]
    rng = rng_from_seed(config.seed)
    params = init_params(spec, seed=config.seed)
    if x_train.dtype != np.float64:
        # training precision follows the data (float32 for wide CPU runs)
        params = {k: v.astype(x_train.dtype) for k, v in params.items()}
    opt = make_optimizer(config)
    history = TrainHistory()
    best_params = {k: v.copy() for k, v in params.items()}
    best_train = np.inf
    stall = 0
    for epoch in range(config.max_epochs):
        lr = lr_at(config, epoch)
        perm = rng.permutation(n)
        seen = 0.0
        acc = 0.0
        for i in range(0, n, config.batch_size):
            idx = perm[i:i + config.batch_size]
            loss, grads = loss_and_grads(params, spec, x_train[idx], y_train[idx],
                                         l2=config.l2)
            data_mae = loss if config.l2 == 0.0 else loss - 0.5 * config.l2 * sum(
                float((v * v).sum()) for k, v in params.items() if k.endswith("_w"))
            optimizer_step(params, grads, lr, opt)
            acc += data_mae * len(idx)
            seen += len(idx)
        train_mae = acc / seen

        val_mae = None
        if (epoch + 1) % config.val_cadence == 0:
            val_mae = evaluate_mae(params, spec, x_val, y_val, config.batch_size)
            if history.best_val_mae is None or val_mae < history.best_val_mae:
                history.best_val_mae = val_mae
                history.best_epoch = epoch
                best_params = {k: v.copy() for k, v in params.items()}
        history.rows.append((epoch, train_mae, val_mae, lr))

        if train_mae < best_train:
            best_train = train_mae
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                history.stopped_epoch = epoch
                break

    if history.best_val_mae is None:
        # no validation measurement happened (very short runs): keep last
        best_params = params
    return best_params, history
