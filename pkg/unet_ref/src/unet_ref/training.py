"""Training protocol: batch size 64, initial learning rate 1e-4 halved
every 25 epochs, up to 200 epochs with early stopping after 10 epochs
without training-error improvement, MAE loss, validation every 10 epochs
on the geology-extrapolation view (val2) with the checkpoint saved at
every new best validation error. L2 regularization (static models)
applies to convolution weights only, not biases."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .data import design_matrices, load_bundle
from .model import UNet


@dataclass
class RefTrainSpec:
    base_width: int = 64
    levels: int = 3
    batch_size: int = 64
    lr: float = 1e-4
    lr_halving_epochs: int = 25
    max_epochs: int = 200
    patience: int = 10
    val_cadence: int = 10
    l2: float = 0.0
    seed: int = 0
    device: str = "cpu"
    threads: int = 0  # 0: leave torch defaults


@dataclass
class History:
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


def _weight_l2(model: UNet) -> torch.Tensor:
    total = None
    for name, p in model.named_parameters():
        if name.endswith("weight"):
            term = (p * p).sum()
            total = term if total is None else total + term
    return total


def _checkpoint_atomic(model: UNet, meta: dict, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save({"state_dict": model.state_dict(), "meta": meta}, tmp)
    os.replace(tmp, path)


@torch.no_grad()
def eval_mae(model: UNet, x: torch.Tensor, y: torch.Tensor, batch: int) -> float:
    model.eval()
    total = 0.0
    for i in range(0, len(x), batch):
        pred = model(x[i:i + batch])
        total += float((pred - y[i:i + batch]).abs().sum())
    model.train()
    return total / y.numel()


def ref_train(dataset_path, mode: str, target: str, spec: RefTrainSpec,
              out_dir) -> tuple[Path, Path]:
    """Train one model; returns (checkpoint path, history CSV path)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if spec.threads:
        torch.set_num_threads(spec.threads)
    torch.manual_seed(spec.seed)
    bundle = load_bundle(dataset_path)
    x, y = design_matrices(bundle, "train", mode, target)
    xv, yv = design_matrices(bundle, "val2", mode, target)
    dev = torch.device(spec.device)
    x = torch.from_numpy(x).to(dev)
    y = torch.from_numpy(y).to(dev)
    xv = torch.from_numpy(xv).to(dev)
    yv = torch.from_numpy(yv).to(dev)

    model = UNet(in_channels=x.shape[1], base_width=spec.base_width,
                 levels=spec.levels,
                 head="sigmoid" if target == "saturation" else "tanhshrink").to(dev)
    opt = torch.optim.Adam(model.parameters(), lr=spec.lr)
    shuffler = torch.Generator().manual_seed(spec.seed)
    history = History()
    ckpt = out_dir / f"{target}_{mode}.pt"
    meta = {"mode": mode, "target": target, "base_width": spec.base_width,
            "levels": spec.levels, "resolution": list(bundle.resolution)}
    best_train = float("inf")
    stall = 0
    n = len(x)
    for epoch in range(spec.max_epochs):
        lr = spec.lr * 0.5 ** (epoch // spec.lr_halving_epochs)
        for g in opt.param_groups:
            g["lr"] = lr
        perm = torch.randperm(n, generator=shuffler)
        acc = 0.0
        for i in range(0, n, spec.batch_size):
            idx = perm[i:i + spec.batch_size]
            pred = model(x[idx])
            data_loss = (pred - y[idx]).abs().mean()
            loss = data_loss
            if spec.l2 > 0:
                loss = loss + 0.5 * spec.l2 * _weight_l2(model)
            opt.zero_grad()
            loss.backward()
            opt.step()
            acc += float(data_loss.detach()) * len(idx)
        train_mae = acc / n

        val_mae = None
        if (epoch + 1) % spec.val_cadence == 0:
            val_mae = eval_mae(model, xv, yv, spec.batch_size)
            if history.best_val_mae is None or val_mae < history.best_val_mae:
                history.best_val_mae = val_mae
                history.best_epoch = epoch
                _checkpoint_atomic(model, meta, ckpt)
        history.rows.append((epoch, train_mae, val_mae, lr))

        if train_mae < best_train:
            best_train = train_mae
            stall = 0
        else:
            stall += 1
            if stall >= spec.patience:
                history.stopped_epoch = epoch
                break

    if history.best_val_mae is None:
        _checkpoint_atomic(model, meta, ckpt)
    hist_path = out_dir / f"{target}_{mode}.history.csv"
    history.to_csv(hist_path)
    return ckpt, hist_path


def load_checkpoint(path) -> tuple[UNet, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    meta = blob["meta"]
    target = meta["target"]
    model = UNet(in_channels=5, base_width=meta["base_width"], levels=meta["levels"],
                 head="sigmoid" if target == "saturation" else "tanhshrink")
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, meta
