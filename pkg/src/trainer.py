"""Mini-batch MSE training with Adam.

Pretraining regresses word GOP targets (real unlabeled + mixup words);
fine-tuning regresses scaled human scores. Both phases run through ``train``
with their own epoch count.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .core import Provenance, WordSample
from .errors import (
    DataValidationError,
    EmptyDatasetError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from .scorer import ScorerConfig, ScorerModel, backward, forward_batch, predict

logger = logging.getLogger(__name__)


class TargetField(str, Enum):
    GOP = "gop"
    HUMAN = "human"


_ALLOWED_PROVENANCE = {
    TargetField.GOP: {Provenance.REAL_UNLABELED, Provenance.MIXUP},
    TargetField.HUMAN: {Provenance.HUMAN_LABELED},
}


def _paired(preds, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise ShapeMismatchError(f"{p.shape[0]} predictions but {y.shape[0]} targets")
    if p.size == 0:
        raise EmptyDatasetError("MSE of an empty batch is undefined")
    return p, y


def mse_loss(preds, targets) -> float:
    """(1/n) * sum((y - p)^2), accumulated in float64."""
    p, y = _paired(preds, targets)
    return float(np.mean((y - p) ** 2))


def mse_gradient(preds, targets) -> np.ndarray:
    """dL/dp of ``mse_loss``."""
    p, y = _paired(preds, targets)
    return 2.0 * (p - y) / p.size


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              cfg: ScorerConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update.

    Args:
        params: Current parameters by name.
        grads: Gradients with the same names and shapes.
        state: Moment estimates (fresh ``AdamState()`` before the first step).
        cfg: Supplies learning_rate, beta1, beta2 and adam_eps.

    Returns:
        (new parameters, new state); the inputs are not modified.
    """
    if set(grads) != set(params):
        missing = sorted(set(params) ^ set(grads))
        raise ShapeMismatchError(f"Gradient names do not match parameters: {', '.join(missing)}")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeMismatchError(
                f"Gradient {name} has shape {grads[name].shape}, parameter has {p.shape}"
            )
        if name in state.m and state.m[name].shape != p.shape:
            raise ShapeMismatchError(f"Optimizer state for {name} has shape {state.m[name].shape}")

    step = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    correction1 = 1.0 - b1 ** step
    correction2 = 1.0 - b2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1.0 - b2) * g * g
        update = cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_eps)
        new_params[name] = (p - update).astype(p.dtype, copy=False)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step, new_m, new_v)


@dataclass
class TrainResult:
    model: ScorerModel
    loss_curve: list[float]
    valid_curve: list[float]
    steps: int
    best_epoch: int
    best_valid_loss: Optional[float]


def holdout_split(samples: Sequence[WordSample], fraction: float,
                  rng: np.random.Generator) -> tuple[list[WordSample], list[WordSample]]:
    """Seeded (train, held-out) split; held-out is empty when too small."""
    order = rng.permutation(len(samples))
    n_valid = int(len(samples) * fraction)
    if n_valid < 1 or n_valid >= len(samples):
        return [samples[i] for i in order], []
    cut = len(samples) - n_valid
    return [samples[i] for i in order[:cut]], [samples[i] for i in order[cut:]]


def _check_targets(dataset: Sequence[WordSample], target_field: TargetField) -> None:
    allowed = _ALLOWED_PROVENANCE[target_field]
    for s in dataset:
        if s.provenance not in allowed:
            raise DataValidationError(
                f"{s.utt_id}:{s.word_index}: {s.provenance.value} sample has no "
                f"{target_field.value} target"
            )


def train(model: ScorerModel, dataset: Sequence[WordSample], cfg: Optional[ScorerConfig] = None,
          target_field: TargetField = TargetField.GOP,
          rng: Optional[np.random.Generator] = None, *,
          epochs: Optional[int] = None, max_steps: Optional[int] = None,
          valid: Optional[Sequence[WordSample]] = None) -> TrainResult:
    """Train a copy of ``model`` on ``dataset``.

    Each epoch draws a fresh permutation from ``rng`` and walks it in
    mini-batches of ``cfg.batch_size``; the last partial batch is kept.
    When a held-out set is available (``valid`` or the last
    ``cfg.valid_fraction`` of a seeded permutation) the parameters with the
    lowest held-out MSE are returned.

    Args:
        model: Starting point; not modified.
        dataset: Training samples.
        cfg: Optimization settings (defaults to ``model.config``).
        target_field: GOP for pretraining, HUMAN for fine-tuning.
        rng: Shuffle and dropout stream (``cfg.seed`` when omitted).
        epochs: Overrides the phase default epoch count.
        max_steps: Stop after this many optimizer steps.
        valid: Explicit held-out set.

    Returns:
        TrainResult with the selected model and per-epoch losses.
    """
    cfg = cfg or model.config
    target_field = TargetField(target_field)
    if not dataset:
        raise EmptyDatasetError("Cannot train on an empty dataset")
    _check_targets(dataset, target_field)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    train_set = list(dataset)
    if valid is None and cfg.valid_fraction > 0:
        train_set, valid = holdout_split(train_set, cfg.valid_fraction, rng)
    if epochs is None:
        if max_steps is not None:
            steps_per_epoch = -(-len(train_set) // cfg.batch_size)
            epochs = -(-max_steps // steps_per_epoch)
        else:
            epochs = cfg.pretrain_epochs if target_field is TargetField.GOP else cfg.finetune_epochs
    valid = list(valid or [])
    if valid:
        _check_targets(valid, target_field)
    targets = np.array([s.target for s in train_set], dtype=np.float64)
    valid_targets = np.array([s.target for s in valid], dtype=np.float64)

    model = model.copy()
    state = AdamState()
    loss_curve: list[float] = []
    valid_curve: list[float] = []
    best_model, best_epoch, best_loss = None, -1, None
    steps = 0
    logger.info("Training on %d %s-target samples (%d held out) for up to %d epochs",
                len(train_set), target_field.value, len(valid), epochs)

    for epoch in range(epochs):
        order = rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = [train_set[i] for i in idx]
            preds, trace = forward_batch(model, batch, "train", rng)
            loss = mse_loss(preds, targets[idx])
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"Non-finite training loss at epoch {epoch}, step {steps}")
            grads = backward(model, trace, mse_gradient(preds, targets[idx]))
            model.params, state = adam_step(model.params, grads, state, cfg)
            total += loss * len(idx)
            seen += len(idx)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        loss_curve.append(total / seen)

        if valid:
            valid_loss = mse_loss(predict(model, valid), valid_targets)
            valid_curve.append(valid_loss)
            if best_loss is None or valid_loss < best_loss:
                best_model, best_epoch, best_loss = model.copy(), epoch, valid_loss
            logger.info("epoch %d: train %.5f, held-out %.5f", epoch, loss_curve[-1], valid_loss)
        else:
            logger.info("epoch %d: train %.5f", epoch, loss_curve[-1])
        if max_steps is not None and steps >= max_steps:
            break

    if best_model is None:
        best_model, best_epoch = model, len(loss_curve) - 1
    logger.info("Finished after %d steps; final train loss %.5f, selected epoch %d",
                steps, loss_curve[-1] if loss_curve else float("nan"), best_epoch)
    return TrainResult(best_model, loss_curve, valid_curve, steps, best_epoch, best_loss)
