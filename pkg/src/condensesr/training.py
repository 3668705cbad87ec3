"""Training loop: Charbonnier loss with a group-lasso penalty, Adam with a
cosine learning-rate schedule, and condensing-stage orchestration.

The run is deterministic for a fixed seed: batch order is drawn from a
per-epoch generator seeded by (seed, epoch), so resuming from a checkpoint
replays exactly the batches the uninterrupted run would have seen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .autograd import Tensor, add, scale
from .data import PatchPair, stack_batch
from .errors import ConfigError, DimensionError, NumericError
from .model import Model

Array = np.ndarray


@dataclass
class TrainSchedule:
    """Epoch plan: length, base learning rate and loss knobs.

    Condensing events are derived from the epoch count and the model's
    condense factor; see :meth:`condense_epochs`.
    """

    total_epochs: int = 180
    lr0: float = 1e-4
    batch_size: int = 16
    charbonnier_eps: float = 1e-3
    lasso_weight: float = 1e-5
    clip_norm: float = 0.0  # global gradient-norm ceiling; 0 disables

    def validate(self) -> None:
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clip_norm < 0:
            raise ConfigError(f"clip_norm must be >= 0, got {self.clip_norm}")

    def condense_epochs(self, condense_factor: int) -> list:
        """1-based epochs at whose end a condensing event fires.

        The condense_factor - 1 stages evenly split the first half of the
        run: for 180 epochs and factor 4, events land at 30, 60 and 90.
        """
        stages = condense_factor - 1
        if stages < 1:
            return []
        return [max(1, (m * self.total_epochs) // (2 * stages)) for m in range(1, stages + 1)]

    def lasso_active(self, epoch: int) -> bool:
        """Group lasso applies during the condensing half of the run only."""
        return epoch <= self.total_epochs // 2

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, values: dict) -> "TrainSchedule":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown schedule keys: {sorted(unknown)}")
        sched = cls(**values)
        sched.validate()
        return sched


def charbonnier_loss(pred: Tensor, target, eps: float = 1e-3) -> Tensor:
    """Mean of sqrt((pred - target)^2 + eps^2); smooth everywhere."""
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.data.dtype)
    if pred.data.shape != tgt.shape:
        raise DimensionError(f"loss shape mismatch: {pred.data.shape} vs {tgt.shape}")
    diff = pred.data - tgt
    point = np.sqrt(diff * diff + eps * eps)
    value = point.mean()
    if not pred.requires_grad:
        return Tensor(value)

    inv_n = 1.0 / diff.size

    def grad_fn(g):
        return [(pred, (diff / point) * (float(g) * inv_n))]

    return Tensor(value, requires_grad=True, _parents=(pred,), _backward=grad_fn)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at step 0 to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps))


def adam_step(param: Array, grad: Array, m: Array, v: Array, t: int, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns (new_param, new_m, new_v).

    Pure function so single-scalar updates can be checked by hand; the
    optimizer class applies it in place.
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adam over a named parameter dict, with moment surgery for pruning.

    Masked entries stay exactly zero: their gradients are already zero and
    :meth:`zero_moments` clears their momentum at each condensing event.
    """

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        for name, p in self.params.items():
            grad = p.grad
            if grad is None:
                raise NumericError(f"parameter {name} has no gradient; backward not run?")
            p.data, self.m[name], self.v[name] = adam_step(
                p.data, grad, self.m[name], self.v[name], self.t, lr,
                self.beta1, self.beta2, self.eps)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def zero_moments(self, name: str, mask: Array) -> None:
        """Clear moments where mask == 0 (weight shape (O, I, 1, 1), mask (O, I))."""
        dead = mask.reshape(mask.shape + (1, 1)) == 0
        self.m[name][dead] = 0.0
        self.v[name][dead] = 0.0


@dataclass
class EpochResult:
    """Summary yielded after each training epoch."""

    epoch: int
    mean_loss: float          # Charbonnier component only
    mean_total_loss: float    # including the lasso penalty term
    lr_last: float
    retained_fraction: float
    condensed: bool
    global_step: int


def _epoch_order(seed: int, epoch: int, n: int) -> Array:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(epoch,))))
    return rng.permutation(n)


def _clip_gradients(params: dict, max_norm: float) -> None:
    total = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params.values()
                          if p.grad is not None))
    if total > max_norm:
        factor = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor


def retained_fraction(model: Model) -> float:
    layers = model.lgc_layers()
    if not layers:
        return 1.0
    total = sum(layer.mask.size for _, layer in layers)
    kept = sum(float(layer.mask.sum()) for _, layer in layers)
    return kept / total


def train(model: Model, schedule: TrainSchedule, pairs: Sequence[PatchPair], seed: int,
          optimizer: Optional[Adam] = None, start_epoch: int = 0,
          on_step: Optional[Callable] = None) -> Iterator[EpochResult]:
    """Generator over epochs; the caller checkpoints between yields.

    ``start_epoch`` is the number of already-completed epochs when resuming;
    the optimizer carries its moments and step counter across the boundary.
    Raises NumericError naming the epoch and batch if the loss goes
    non-finite.
    """
    schedule.validate()
    if not pairs:
        raise ConfigError("training dataset is empty")
    params = model.named_parameters()
    if optimizer is None:
        optimizer = Adam(params)
    factor = model.config.condense_factor
    events = schedule.condense_epochs(factor)
    steps_per_epoch = math.ceil(len(pairs) / schedule.batch_size)
    total_steps = schedule.total_epochs * steps_per_epoch
    global_step = start_epoch * steps_per_epoch

    for epoch in range(start_epoch + 1, schedule.total_epochs + 1):
        order = _epoch_order(seed, epoch, len(pairs))
        data_losses = []
        total_losses = []
        lr = schedule.lr0
        lasso_on = schedule.lasso_active(epoch) and schedule.lasso_weight > 0
        for bi in range(steps_per_epoch):
            chosen = order[bi * schedule.batch_size:(bi + 1) * schedule.batch_size]
            lr_batch, hr_batch = stack_batch([pairs[i] for i in chosen])
            lr = cosine_lr(global_step, total_steps, schedule.lr0)

            optimizer.zero_grads()
            pred = model.forward(Tensor(lr_batch))
            loss = charbonnier_loss(pred, hr_batch, schedule.charbonnier_eps)
            data_loss = float(loss.data)
            if lasso_on:
                penalty = Tensor(np.zeros((), dtype=loss.data.dtype))
                for _, layer in model.lgc_layers():
                    penalty = add(penalty, layer.group_lasso_penalty())
                loss = add(loss, scale(penalty, schedule.lasso_weight))
            total_loss = float(loss.data)
            if not math.isfinite(total_loss):
                raise NumericError(
                    f"non-finite loss {total_loss} at epoch {epoch}, batch {bi}"
                )
            loss.backward()
            if schedule.clip_norm > 0:
                _clip_gradients(params, schedule.clip_norm)
            optimizer.step(lr)
            global_step += 1
            data_losses.append(data_loss)
            total_losses.append(total_loss)
            if on_step is not None:
                on_step(model, optimizer, global_step)

        condensed = False
        for event_epoch in events:
            if event_epoch == epoch:
                for name, layer in model.lgc_layers():
                    if layer.stage < factor - 1:
                        layer.condense()
                        optimizer.zero_moments(f"{name}.weight", layer.mask)
                        condensed = True

        yield EpochResult(
            epoch=epoch,
            mean_loss=float(np.mean(data_losses)),
            mean_total_loss=float(np.mean(total_losses)),
            lr_last=lr,
            retained_fraction=retained_fraction(model),
            condensed=condensed,
            global_step=global_step,
        )
