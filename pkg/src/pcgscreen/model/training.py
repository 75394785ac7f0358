"""Class-weighted training with Adam and best-validation checkpointing."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import EmptyClass, RunConfig, make_rng
from .layers import weighted_cross_entropy
from .network import N_CLASSES, Architecture, Network

log = logging.getLogger(__name__)

# generator stream keys under the run seed
_INIT_KEY, _SHUFFLE_KEY, _DROPOUT_KEY = 1, 2, 3


def class_weights(labels, n_classes: int = N_CLASSES) -> np.ndarray:
    """Inverse-frequency weights ``N / (K * n_i)``."""
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels, minlength=n_classes)[:n_classes]
    if np.any(counts == 0):
        missing = [i for i, c in enumerate(counts) if c == 0]
        raise EmptyClass(f"no samples for class(es) {missing}")
    return labels.size / (n_classes * counts.astype(np.float64))


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name in sorted(params):
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            params[name] -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    model: Network
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    class_weights: np.ndarray | None = None


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    bounds = list(range(0, n, batch_size)) + [n]
    # batch norm needs >= 2 samples: fold a lone trailing sample into the previous batch
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        bounds.pop(-2)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        yield order[lo:hi]


def evaluate_loss(model: Network, x, y, weights) -> tuple[float, float]:
    """Eval-mode weighted loss and accuracy."""
    if len(y) == 0:
        return math.nan, math.nan
    probs = model.predict_proba(x)
    y = np.asarray(y)
    logp = np.log(np.clip(probs[np.arange(y.size), y], 1e-300, None))
    loss = float(-(np.asarray(weights)[y] * logp).mean())
    return loss, float(np.mean(probs.argmax(axis=1) == y))


def train(train_x, train_y, val_x, val_y, cfg: RunConfig, model: Network | None = None,
          log_path: str | Path | None = None) -> TrainResult:
    """Train a classifier on (N, 39, T) feature tensors.

    Weights are inverse class frequencies of ``train_y``.  The returned
    model holds the parameters of the epoch with the best validation
    accuracy (ties broken by lower validation loss); training stops after
    ``cfg.patience`` epochs without such an improvement.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=int)
    val_x = np.asarray(val_x, dtype=np.float64)
    val_y = np.asarray(val_y, dtype=int)
    weights = class_weights(train_y)
    if model is None:
        arch = Architecture.from_config(cfg, in_channels=train_x.shape[1])
        model = Network.initialize(arch, make_rng(cfg.seed, _INIT_KEY))
        model.set_input_normalization(train_x)
    opt = Adam(model.params, lr=cfg.learning_rate)
    result = TrainResult(model=model.copy(), class_weights=weights)
    best_key = (-math.inf, -math.inf)
    stale = 0

    for epoch in range(1, cfg.epochs + 1):
        shuffle_rng = make_rng(cfg.seed, _SHUFFLE_KEY, epoch)
        drop_rng = make_rng(cfg.seed, _DROPOUT_KEY, epoch)
        total_loss = 0.0
        correct = 0
        for idx in _batches(train_y.size, cfg.batch_size, shuffle_rng):
            logits, probs, ctx = model.forward(train_x[idx], train=True, rng=drop_rng)
            loss, probs, dlogits = weighted_cross_entropy(logits, train_y[idx], weights)
            grads = model.backward(dlogits, ctx)
            opt.step(model.params, grads)
            model.state.update(ctx["state"])
            total_loss += loss * idx.size
            correct += int(np.sum(probs.argmax(axis=1) == train_y[idx]))
        val_loss, val_acc = evaluate_loss(model, val_x, val_y, weights)
        entry = EpochLog(epoch, total_loss / train_y.size, correct / train_y.size, val_loss, val_acc)
        result.history.append(entry)
        log.info("epoch %d loss %.4f acc %.3f val_loss %.4f val_acc %.3f", *entry.__dict__.values())

        key = (val_acc, -val_loss) if not math.isnan(val_acc) else (entry.train_acc, -entry.train_loss)
        if key > best_key:
            best_key = key
            result.model = model.copy()
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if log_path is not None:
        write_training_log(log_path, result.history)
    return result


LOG_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def write_training_log(path: str | Path, history: list[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for e in history:
            writer.writerow([e.epoch, repr(e.train_loss), repr(e.train_acc), repr(e.val_loss), repr(e.val_acc)])
