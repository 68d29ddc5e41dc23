"""Scikit-learn style estimator wrapping the hand-rolled U-net."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..utils import require
from .net import (
    NetSpec,
    check_input_stack,
    forward,
    load_params,
    save_params,
)
from .train import TrainConfig, TrainHistory, evaluate_mae, train


class UNetRegressor(BaseEstimator):
    """Image-to-image regressor: (N, 5, H, W) inputs to (N, H, W) fields.

    fit/predict/get_params follow the scikit-learn estimator protocol so the
    model composes with pipelines and model-selection utilities. The head
    activation must be "sigmoid" for saturation-like targets in (0, 1) and
    "tanhshrink" for standardized unbounded targets such as pressure.
    """

    def __init__(self, levels=3, base_width=16, head="sigmoid", batch_size=64,
                 lr=1e-4, lr_halving_epochs=25, max_epochs=200, patience=10,
                 val_cadence=10, l2=0.0, optimizer="adam", seed=0,
                 dtype="float64"):
        self.levels = levels
        self.base_width = base_width
        self.head = head
        self.batch_size = batch_size
        self.lr = lr
        self.lr_halving_epochs = lr_halving_epochs
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_cadence = val_cadence
        self.l2 = l2
        self.optimizer = optimizer
        self.seed = seed
        self.dtype = dtype

    def _spec(self, in_channels: int) -> NetSpec:
        return NetSpec(levels=self.levels, base_width=self.base_width,
                       in_channels=in_channels, head=self.head)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, lr=self.lr,
                           lr_halving_epochs=self.lr_halving_epochs,
                           max_epochs=self.max_epochs, patience=self.patience,
                           val_cadence=self.val_cadence, l2=self.l2,
                           optimizer=self.optimizer, seed=self.seed)

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on (X, y); validation defaults to the training data when no
        held-out split is supplied (toy/overfitting runs).

        `dtype` selects the training precision: float64 (default) for the
        analytically checkable configuration, float32 for large widths on
        CPU. Checkpoints always store binary64."""
        dt = np.dtype(self.dtype)
        spec = self._spec(np.asarray(X).shape[1])
        X = check_input_stack(X, spec).astype(dt, copy=False)
        y = np.asarray(y, dtype=dt)
        require(y.shape == (X.shape[0],) + X.shape[2:],
                f"target shape {y.shape} does not match inputs {X.shape}")
        if X_val is None:
            X_val, y_val = X, y
        else:
            X_val = check_input_stack(X_val, spec).astype(dt, copy=False)
            y_val = np.asarray(y_val, dtype=dt)
        self.params_, self.history_ = train(spec, X, y, X_val, y_val,
                                            self._train_config())
        self.params_ = {k: np.asarray(v, dtype=np.float64)
                        for k, v in self.params_.items()}
        self.spec_ = spec
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("UNetRegressor is not fitted; call fit() or load()")

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_input_stack(X, self.spec_)
        out = []
        for i in range(0, X.shape[0], self.batch_size):
            pred, _ = forward(self.params_, self.spec_, X[i:i + self.batch_size])
            out.append(pred)
        return np.concatenate(out, axis=0)

    def score_mae(self, X, y) -> float:
        self._check_fitted()
        X = check_input_stack(X, self.spec_)
        return evaluate_mae(self.params_, self.spec_, X,
                            np.asarray(y, dtype=np.float64), self.batch_size)

    def save(self, path) -> None:
        self._check_fitted()
        save_params(self.params_, self.spec_, path,
                    extra={"train_config": self._train_config().to_dict()})

    @classmethod
    def load(cls, path) -> "UNetRegressor":
        params, spec, extra = load_params(path)
        kw = extra.get("train_config", {})
        model = cls(levels=spec.levels, base_width=spec.base_width, head=spec.head,
                    **{k: v for k, v in kw.items()
                       if k in ("batch_size", "lr", "lr_halving_epochs", "max_epochs",
                                "patience", "val_cadence", "l2", "optimizer", "seed",
                                "dtype")})
        model.params_ = params
        model.spec_ = spec
        model.history_ = TrainHistory()
        return model
