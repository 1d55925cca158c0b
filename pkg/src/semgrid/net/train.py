"""Mini-batch training with the masked loss."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from ..metrics import IoUAccumulator, loss_mask, masked_cross_entropy
from .layers import BatchNorm
from .model import EDNetwork
from .optim import rmsprop_step


@dataclass(frozen=True)
class Schedule:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    lr_drop_epoch: int = 8  # first epoch (0-based) run at ``lr_after``
    lr_after: float = 1e-4
    bn_samples: int = 400  # training sequences used to refresh batch-norm statistics; 0 disables

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.bn_samples < 0:
            raise ValueError("bn_samples must be non-negative")
        if self.lr <= 0 or self.lr_after <= 0:
            raise ValueError("learning rates must be positive")

    def lr_at(self, epoch: int) -> float:
        return self.lr if epoch < self.lr_drop_epoch else self.lr_after

    def to_dict(self) -> dict:
        return asdict(self)


def batch_masks(targets: np.ndarray, sync: np.ndarray) -> np.ndarray:
    """Loss masks for a batch: targets (B, H, W), synchronized inputs (B, S, n, H, W)."""
    return np.stack([
        loss_mask(t, list(s.reshape(-1, *t.shape))).mask for t, s in zip(targets, sync)
    ])


def recalibrate_batchnorm(net: EDNetwork, dataset, samples: int, batch_size: int, translate: bool = True) -> None:
    """Replace batch-norm running statistics by averages over training batches, dropout off.

    During training the layers after the latent dropout see its inflated
    variance, so the moving averages do not match what inference sees. The
    samples are spread evenly over ``dataset`` and the pass draws no random
    numbers, so training stays reproducible.
    """
    if samples == 0 or len(dataset) == 0:
        return
    idx = np.unique(np.linspace(0, len(dataset) - 1, min(samples, len(dataset))).astype(int))
    bns = [layer for layer in net.layers() if isinstance(layer, BatchNorm)]
    sums = [[0.0, 0.0] for _ in bns]
    saved = net.dropout.rate, [bn.momentum for bn in bns]
    net.dropout.rate = 0.0
    for bn in bns:
        bn.momentum = 0.0  # buffers then hold exactly the current batch statistics
    try:
        batches = [idx[i : i + batch_size] for i in range(0, len(idx), batch_size)]
        for b in batches:
            x, _, _ = dataset.batch(b, translate)
            net.forward(x, train=True)
            for acc, bn in zip(sums, bns):
                acc[0] = acc[0] + bn.buffers["mean"].astype(np.float64)
                acc[1] = acc[1] + bn.buffers["var"].astype(np.float64)
    finally:
        net.dropout.rate = saved[0]
        for bn, m in zip(bns, saved[1]):
            bn.momentum = m
    for (mean, var), bn in zip(sums, bns):
        bn.buffers["mean"] = (mean / len(batches)).astype(bn.buffers["mean"].dtype)
        bn.buffers["var"] = (var / len(batches)).astype(bn.buffers["var"].dtype)


def evaluate(net: EDNetwork, dataset, translate: bool = True, batch_size: int = 16) -> dict:
    """Mean masked loss and pooled IoU of ``net`` over ``dataset``."""
    acc = IoUAccumulator()
    total, cells = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        idx = range(start, min(start + batch_size, len(dataset)))
        x, y, sync = dataset.batch(idx, translate)
        m = batch_masks(y, sync)
        p = net.forward(x, train=False)
        loss, _ = masked_cross_entropy(p, y, m)
        total += loss * y.size
        cells += y.size
        pred = p.argmax(-1)
        for k in range(len(y)):
            acc.update(pred[k], y[k], m[k])
    return {"loss": total / max(cells, 1), **acc.report()}


def train(
    net: EDNetwork,
    dataset,
    schedule: Schedule = Schedule(),
    seed: int = 0,
    translate: bool = True,
    val=None,
    log=None,
) -> dict:
    """Fit ``net`` in place; returns the per-step and per-epoch log.

    Shuffling and dropout draw from generators derived from ``seed``; together
    with the seeded initialization this makes runs bit-reproducible.
    """
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    order_rng = np.random.default_rng([seed, 0])
    drop_rng = np.random.default_rng([seed, 1])
    history = {"schedule": schedule.to_dict(), "seed": seed, "translate": translate, "steps": [], "epochs": []}
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        order = order_rng.permutation(len(dataset))
        t_start = time.perf_counter()
        losses = []
        for start in range(0, len(order), schedule.batch_size):
            idx = order[start : start + schedule.batch_size]
            x, y, sync = dataset.batch(idx, translate)
            m = batch_masks(y, sync)
            p = net.forward(x, train=True, rng=drop_rng)
            loss, grad = masked_cross_entropy(p, y, m)
            rmsprop_step(net, net.backward(grad), lr)
            losses.append(loss)
            history["steps"].append(loss)
        recalibrate_batchnorm(net, dataset, schedule.bn_samples, schedule.batch_size, translate)
        entry = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses))}
        if val is not None and len(val):
            v = evaluate(net, val, translate)
            entry.update(val_loss=v["loss"], val_miou=v["miou"], val_categories=v["categories"])
        history["epochs"].append(entry)
        if log:
            # wall time goes to the callback only, keeping the history reproducible
            log(entry, time.perf_counter() - t_start)
    return history
