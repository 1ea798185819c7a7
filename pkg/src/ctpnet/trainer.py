"""Training loop: 8:1:1 splits, epoch-seeded shuffling, plain SGD, periodic validation."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import save_checkpoint
from .data import DocumentSample, prepare_batch
from .engine import SGD, NonFiniteError, Tensor, backward, cross_entropy_loss
from .metrics import MetricsReport, evaluate
from .model import CTPNet

logger = logging.getLogger(__name__)

MIN_SPLIT_SAMPLES = 10


class TrainingDiverged(FloatingPointError):
    """Loss or an intermediate value became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 6
    epochs: int = 200
    validate_every: int = 10
    input_size: int = 64
    seed: int = 0
    checkpoint_path: Optional[str] = None

    def __post_init__(self) -> None:
        # lr may be 0: a dry run that exercises the loop without moving the weights
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be finite and non-negative")
        for name in ("batch_size", "epochs", "validate_every", "input_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.validate_every > self.epochs:
            raise ValueError("validate_every cannot exceed epochs")
        if self.input_size % 8:
            raise ValueError("input_size must be divisible by 8")


class Split(NamedTuple):
    train: List[DocumentSample]
    val: List[DocumentSample]
    test: List[DocumentSample]


@dataclass
class TrainHistory:
    epoch_loss: List[float] = field(default_factory=list)
    step_loss: List[float] = field(default_factory=list)
    validations: List[Tuple[int, MetricsReport]] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_f1: Optional[float] = None

    def records(self) -> List[dict]:
        val = dict(self.validations)
        out = []
        for epoch, loss in enumerate(self.epoch_loss, 1):
            rec = {"epoch": epoch, "loss": loss}
            if epoch in val:
                rec["val"] = val[epoch].rows()[0]
            out.append(rec)
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())


def split_dataset(samples: Sequence[DocumentSample], seed: int = 0) -> Split:
    """Shuffled 8:1:1 partition; rounding remainders go to the training part."""
    n = len(samples)
    if n < MIN_SPLIT_SAMPLES:
        raise ValueError(f"need at least {MIN_SPLIT_SAMPLES} samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = n_test = n // 10
    n_train = n - n_val - n_test
    pick = lambda idx: [samples[i] for i in idx]  # noqa: E731
    return Split(
        pick(order[:n_train]), pick(order[n_train : n_train + n_val]), pick(order[n_train + n_val :])
    )


def _as_split(datasets) -> Split:
    if isinstance(datasets, Split):
        return datasets
    if isinstance(datasets, dict):
        return Split(list(datasets["train"]), list(datasets.get("val", [])), list(datasets.get("test", [])))
    if isinstance(datasets, tuple) and len(datasets) in (2, 3) and all(isinstance(d, (list, tuple)) for d in datasets):
        parts = list(datasets) + [[]] * (3 - len(datasets))
        return Split(*(list(p) for p in parts))
    return Split(list(datasets), [], [])


def train(
    model: CTPNet,
    datasets,
    config: TrainConfig,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> Tuple[CTPNet, TrainHistory]:
    """Train ``model`` in place.

    ``datasets`` is a ``Split``, a (train, val[, test]) tuple, a dict, or a bare list of
    training samples. Validation runs every ``validate_every`` epochs when a validation
    set is present; the best validation F1 is saved to ``checkpoint_path``.
    """
    split = _as_split(datasets)
    if not split.train:
        raise ValueError("training set is empty")
    images, masks = prepare_batch(split.train, config.input_size)
    images = images.astype(model.dtype, copy=False)
    n = len(split.train)
    params = model.parameters()
    opt = SGD(params, config.learning_rate) if config.learning_rate > 0 else None
    history = TrainHistory()

    for epoch in range(1, config.epochs + 1):
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                logits = model(Tensor(images[idx]))
                loss = cross_entropy_loss(logits, masks[idx])
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}, step {len(history.step_loss) + 1}: {exc}") from exc
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"epoch {epoch}: loss is {value}")
            backward(loss)
            if opt is not None:
                opt.step()
            else:
                for p in params:
                    p.grad = None
            history.step_loss.append(value)
            total += value * len(idx)
            seen += len(idx)
        history.epoch_loss.append(total / seen)
        if on_epoch is not None:
            on_epoch(epoch, total / seen)
        logger.info("epoch %d loss %.5f", epoch, total / seen)

        if split.val and epoch % config.validate_every == 0:
            report = evaluate(model, split.val, config.input_size)
            history.validations.append((epoch, report))
            logger.info("epoch %d val f1 %.4f auc %s", epoch, report.f1, report.auc)
            if history.best_f1 is None or report.f1 > history.best_f1:
                history.best_f1, history.best_epoch = report.f1, epoch
                if config.checkpoint_path:
                    save_checkpoint(model, config.checkpoint_path)

    if config.checkpoint_path and history.best_epoch is None:
        save_checkpoint(model, config.checkpoint_path)
    model.train()
    return model, history
