"""Loss, optimiser and training loop."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .data import NormStats, WindowSpec, window_arrays
from .errors import TrainingError
from .metrics import metrics
from .model import STHSepNet
from .temporal import stats_matrix

log = logging.getLogger(__name__)


def loss(pred, target, kind: str = "mae") -> Tensor:
    diff = ad.as_tensor(pred) - ad.as_tensor(target)
    if kind == "mae":
        return ad.tabs(diff).mean()
    if kind == "mse":
        return ad.square(diff).mean()
    raise ValueError(f"unknown loss {kind!r}")


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all trainable gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = [store[n].grad for n in store.trainable() if store[n].grad is not None]
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if norm > max_norm:
        scale = max_norm / norm
        for n in store.trainable():
            if store[n].grad is not None:
                store[n].grad = store[n].grad * scale
    return norm


class Adam:
    def __init__(self, store: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros(store[n].shape) for n in store}
        self.v = {n: np.zeros(store[n].shape) for n in store}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for n in self.store.trainable():
            p = self.store[n]
            if p.grad is None:
                continue
            self.m[n] = b1 * self.m[n] + (1 - b1) * p.grad
            self.v[n] = b2 * self.v[n] + (1 - b2) * p.grad * p.grad
            p.data = p.data - self.lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)


@dataclass
class SplitWindows:
    X: np.ndarray  # (W, L, N) normalised
    Y: np.ndarray  # (W, H, N) normalised
    stats: np.ndarray  # (W, 9) prompt vectors

    @classmethod
    def from_values(cls, values: np.ndarray, spec: WindowSpec) -> SplitWindows:
        X, Y, _ = window_arrays(values, spec)
        return cls(X, Y, stats_matrix(X.mean(axis=2)))

    def __len__(self) -> int:
        return len(self.X)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = float("inf")
    runtime_s: float = 0.0

    def history_hash(self) -> str:
        h = hashlib.sha256()
        for row in self.history:
            h.update(repr(sorted(row.items())).encode())
        return h.hexdigest()


def predict_windows(model: STHSepNet, w: SplitWindows, supports, batch_size: int = 256) -> np.ndarray:
    out = []
    for i in range(0, len(w), batch_size):
        sl = slice(i, i + batch_size)
        out.append(model.forward(w.X[sl], supports, stats=w.stats[sl]).O_tilde.data)
    return np.concatenate(out)


def evaluate_windows(model: STHSepNet, w: SplitWindows, norm: NormStats, supports=None):
    """De-normalised (MAE, RMSE) and predictions for a set of windows."""
    supports = supports or model.build_supports()
    pred = norm.inverse(predict_windows(model, w, supports))
    return (*metrics(pred, norm.inverse(w.Y)), pred)


def train(model: STHSepNet, train_w: SplitWindows, val_w: SplitWindows | None, norm: NormStats,
          epochs: int | None = None, callback=None) -> TrainResult:
    """Mini-batch Adam with global-norm clipping; keeps the best-on-validation parameters.

    The discrete graph structures are rebuilt once per epoch (or per batch
    when ``hypergraph.rebuild == "batch"``).  ``callback(epoch, result)``
    returning True stops training early.
    """
    cfg = model.cfg.train
    epochs = cfg.epochs if epochs is None else epochs
    store = model.store
    opt = Adam(store, cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    per_batch = model.cfg.hypergraph.rebuild == "batch"
    result = TrainResult()
    best_state = store.state()
    since_best = 0
    t0 = time.perf_counter()
    for epoch in range(epochs):
        supports = model.build_supports()
        order = rng.permutation(len(train_w))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = np.sort(order[start:start + cfg.batch_size])
            if per_batch and b > 0:
                supports = model.build_supports()
            store.zero_grad()
            pred = model.forward(train_w.X[idx], supports, stats=train_w.stats[idx]).O_tilde
            value = loss(pred, train_w.Y[idx], cfg.loss)
            if not np.isfinite(value.item()):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            value.backward()
            clip_grad_norm(store, cfg.grad_clip)
            opt.step()
            total += value.item() * len(idx)
            count += len(idx)
        row = {"epoch": epoch, "train_loss": total / count}
        if val_w is not None and len(val_w):
            val_mae, val_rmse, _ = evaluate_windows(model, val_w, norm)
            row.update(val_mae=val_mae, val_rmse=val_rmse)
            if val_mae < result.best_val_mae:
                result.best_val_mae, result.best_epoch = val_mae, epoch
                best_state = store.state()
                since_best = 0
            else:
                since_best += 1
        else:
            result.best_epoch = epoch
            best_state = store.state()
        result.history.append(row)
        log.info("epoch %d %s", epoch, row)
        if callback is not None and callback(epoch, result):
            break
        if cfg.patience is not None and since_best > cfg.patience:
            break
    store.load_state(best_state)
    store.zero_grad()
    result.runtime_s = time.perf_counter() - t0
    return result
