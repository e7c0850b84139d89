"""Adam optimizer, the stepped learning-rate decay schedule, and the epoch
training loop with best-checkpoint tracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from .model import GruFcnModel, save_checkpoint
from .tensor_core import Rng, ShapeMismatchError


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> None:
    """One bias-corrected Adam update, applied to params in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} != parameter shape {p.shape} for {name}"
            )
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m[...] = b1 * m + (1 - b1) * g
        v[...] = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** state.t)
        v_hat = v / (1 - b2 ** state.t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass
class LrSchedule:
    initial: float = 0.01
    factor: float = 0.8
    interval: int = 100
    floor: float = 0.0001


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """max(floor, initial * factor^(epoch // interval)); non-increasing."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return max(schedule.floor, schedule.initial * schedule.factor ** (epoch // schedule.interval))


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    eval_loss: float
    eval_error: float


@dataclass
class TrainRun:
    epochs: int
    train_batch: int
    eval_batch: int
    seed: int = 0
    schedule: LrSchedule = field(default_factory=LrSchedule)
    history: list[EpochRecord] = field(default_factory=list)
    best_checkpoint_path: str | None = None
    best_eval_loss: float = float("inf")


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    eye = np.eye(num_classes)
    return eye[np.asarray(labels, dtype=int)]


def evaluate(net: GruFcnModel, x: np.ndarray, y: np.ndarray,
             eval_batch: int) -> tuple[float, float]:
    """Inference-mode mean cross-entropy and error rate, chunked by
    eval_batch (capped at the split size)."""
    n = x.shape[0]
    chunk = max(1, min(eval_batch, n))
    total_loss = 0.0
    wrong = 0
    y_hot = one_hot(y, net.config.num_classes)
    for start in range(0, n, chunk):
        xb = x[start:start + chunk]
        yb = y_hot[start:start + chunk]
        probs, _ = model_mod.forward(net, xb, training=False)
        total_loss += float(-np.sum(yb * np.log(probs + 1e-300)))
        wrong += int(np.sum(np.argmax(probs, axis=1) != y[start:start + chunk]))
    return total_loss / n, wrong / n


def fit(net: GruFcnModel, dataset, run: TrainRun) -> TrainRun:
    """Train for run.epochs epochs of seeded-shuffle mini-batches; after each
    epoch run a full inference pass on the evaluation split and checkpoint
    whenever its loss improves."""
    if dataset.train_x.shape[0] == 0:
        raise ValueError("training split is empty")
    if dataset.train_x.shape[1] != net.config.series_length:
        raise ShapeMismatchError(
            f"dataset length {dataset.train_x.shape[1]} != model series length "
            f"{net.config.series_length}"
        )
    n = dataset.train_x.shape[0]
    train_hot = one_hot(dataset.train_y, net.config.num_classes)
    adam = AdamState()
    dropout_rng = Rng(run.seed)
    for epoch in range(run.epochs):
        adam.lr = lr_at(run.schedule, epoch)
        order = Rng(run.seed + epoch).permutation(n)
        losses = []
        for start in range(0, n, run.train_batch):
            idx = order[start:start + run.train_batch]
            xb = dataset.train_x[idx]
            yb = train_hot[idx]
            _, cache = model_mod.forward(net, xb, training=True, rng=dropout_rng)
            loss, grads = model_mod.backward(net, cache, yb)
            losses.append(loss * len(idx))
            adam_step(adam, net.trainable_parameters(), grads)
        train_loss = sum(losses) / n
        eval_loss, eval_error = evaluate(
            net, dataset.test_x, dataset.test_y, run.eval_batch
        )
        run.history.append(EpochRecord(epoch, adam.lr, train_loss, eval_loss, eval_error))
        if eval_loss < run.best_eval_loss:
            run.best_eval_loss = eval_loss
            if run.best_checkpoint_path is not None:
                save_checkpoint(net, run.best_checkpoint_path)
    return run


def write_history_csv(path, history: list[EpochRecord]) -> None:
    """epoch,lr,train_loss,eval_loss,eval_error with 6-decimal fixed floats."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,lr,train_loss,eval_loss,eval_error\n")
        for rec in history:
            fh.write(
                f"{rec.epoch},{rec.lr:.6f},{rec.train_loss:.6f},"
                f"{rec.eval_loss:.6f},{rec.eval_error:.6f}\n"
            )
