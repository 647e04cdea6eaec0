import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Protocol, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field

from app.errors import TrainingDivergedError
from app.reranker.model import (
    RerankerParams,
    TrainingExample,
    loss_and_grad_arrays,
    stack_examples,
)

logger = logging.getLogger(__name__)


class OptimizerConfig(BaseModel):
    """Adam hyperparameters for the linear scorer"""

    learning_rate: float = Field(0.05, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    batch_size: int = Field(64, ge=1)
    warmup_fraction: float = Field(0.05, ge=0, le=1)
    accumulation_steps: int = Field(1, ge=1)


class SupportsExamples(Protocol):
    def to_examples(self) -> List[TrainingExample]:
        ...


@dataclass
class TrainResult:
    params: RerankerParams
    epoch_losses: List[float] = field(default_factory=list)
    updates: int = 0


def adam_step(params: RerankerParams, grad: Dict[str, np.ndarray], lr: float, config: OptimizerConfig) -> None:
    """In-place Adam update of the slots present in grad"""
    state = params.optimizer
    state.step += 1
    correction1 = 1.0 - config.beta1 ** state.step
    correction2 = 1.0 - config.beta2 ** state.step

    for key in sorted(grad):
        g = grad[key]
        slot = params.ensure_slot(key)
        m = state.m.setdefault(key, np.zeros_like(slot))
        v = state.v.setdefault(key, np.zeros_like(slot))
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        slot -= lr * (m / correction1) / (np.sqrt(v / correction2) + config.eps)


def fit(
    params: RerankerParams,
    dataset: Union[SupportsExamples, Sequence[TrainingExample]],
    epochs: int,
    config: OptimizerConfig,
    seed: Union[int, Sequence[int]] = 0,
) -> TrainResult:
    """
    Mini-batch BCE descent with Adam moments and linear warmup

    Trains a private copy; the incoming params are never mutated. Shuffling
    is driven by a generator seeded with `seed` (an int or an int sequence).
    """
    examples = dataset.to_examples() if hasattr(dataset, "to_examples") else list(dataset)
    if not examples:
        raise ValueError("dataset must be non-empty")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")

    trained = params.copy()
    if epochs == 0:
        return TrainResult(params=trained)

    features, labels, tids, mids = stack_examples(examples)
    tids = np.asarray(tids, dtype=object)
    mids = np.asarray(mids, dtype=object)
    n = len(examples)

    batches_per_epoch = math.ceil(n / config.batch_size)
    total_updates = math.ceil(batches_per_epoch / config.accumulation_steps) * epochs
    warmup_updates = math.ceil(config.warmup_fraction * total_updates)

    rng = np.random.default_rng(seed)
    result = TrainResult(params=trained)
    batch_index = 0

    for epoch in range(epochs):
        order = rng.permutation(n)
        pending: Dict[str, np.ndarray] = {}
        pending_count = 0

        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            loss, grad = loss_and_grad_arrays(trained, features[idx], labels[idx], tids[idx], mids[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(batch_index, loss)
            batch_index += 1

            for key, g in grad.items():
                if key in pending:
                    pending[key] += g
                else:
                    pending[key] = g.copy()
            pending_count += 1

            last_in_epoch = batch_no == batches_per_epoch - 1
            if pending_count == config.accumulation_steps or last_in_epoch:
                averaged = {key: g / pending_count for key, g in pending.items()}
                lr = config.learning_rate
                if warmup_updates:
                    lr *= min(1.0, (result.updates + 1) / warmup_updates)
                adam_step(trained, averaged, lr, config)
                result.updates += 1
                pending = {}
                pending_count = 0

        epoch_loss, _ = loss_and_grad_arrays(trained, features, labels, tids, mids)
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(batch_index - 1, epoch_loss)
        result.epoch_losses.append(epoch_loss)
        logger.debug(f"Epoch {epoch + 1}/{epochs}: loss {epoch_loss:.6f} over {n} examples")

    logger.info(f"Trained on {n} examples for {epochs} epochs ({result.updates} updates), "
                f"final loss {result.epoch_losses[-1]:.6f}")
    return result


def train(
    params: RerankerParams,
    dataset: Union[SupportsExamples, Sequence[TrainingExample]],
    epochs: int,
    config: OptimizerConfig,
    seed: Union[int, Sequence[int]] = 0,
) -> RerankerParams:
    """Train and return the updated parameters"""
    return fit(params, dataset, epochs, config, seed).params
