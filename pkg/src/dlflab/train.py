"""SGD training loop with momentum, weight decay, and a plateau scheduler.

Runs are deterministic for a fixed seed: model init, per-epoch sample
order, and flip decisions all derive from the seed, and evaluation orders
are fixed.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from . import tensor as T
from .data import load_dataset
from .errors import TrainingError, ValidationError
from .models import SscaConfig, build_model, multi_stage_bce, save_checkpoint
from .tensor import Tensor


def sgd_step(param, grad, velocity, lr, momentum, weight_decay, name="param"):
    """In-place momentum update: v <- m*v + (g + wd*p); p <- p - lr*v.

    All arithmetic stays in float32 so reruns are bit-identical.
    """
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient for parameter {name!r}")
    velocity *= np.float32(momentum)
    velocity += grad + np.float32(weight_decay) * param
    param -= np.float32(lr) * velocity


class Sgd:
    """Momentum SGD with an optional per-parameter learning-rate scale.

    ``lr_scales`` mirrors the usual backbone-vs-head split: the pretrained
    trunk trains slower than freshly initialized heads.
    """

    def __init__(self, params: dict, lr, momentum=0.9, weight_decay=0.0, lr_scales=None):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_scales = lr_scales or {}
        self.velocities = {
            name: np.zeros_like(p.data) for name, p in params.items()
        }

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        for name, p in self.params.items():
            sgd_step(
                p.data,
                p.grad.data,
                self.velocities[name],
                lr * self.lr_scales.get(name, 1.0),
                self.momentum,
                self.weight_decay,
                name=name,
            )

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without strict improvement of the monitored loss; the stall counter
    resets after each reduction."""

    def __init__(self, factor=0.1, patience=4):
        if not 0.0 < factor < 1.0:
            raise ValidationError(f"plateau factor must be in (0,1), got {factor}")
        if patience < 1:
            raise ValidationError(f"plateau patience must be >= 1, got {patience}")
        self.factor = factor
        self.patience = patience
        self.best = None
        self.stall = 0
        self.scale = 1.0

    def step(self, loss: float) -> float:
        if self.best is None or loss < self.best:
            self.best = loss
            self.stall = 0
        else:
            self.stall += 1
            if self.stall >= self.patience:
                self.scale *= self.factor
                self.stall = 0
        return self.scale


@dataclass
class TrainConfig:
    mechanism: str = "dlfl"
    model: SscaConfig = field(default_factory=SscaConfig)
    lr: float = 0.1
    weight_decay: float = 1e-4
    momentum: float = 0.9
    epochs: int = 12
    batch_size: int = 32
    scheduler: str = "plateau"  # "plateau" | "none"
    plateau_factor: float = 0.1
    plateau_patience: int = 4
    monitor: str = "train_loss"  # "train_loss" | "val_loss"
    hflip: bool = True
    normalized_baseline: bool = True
    head_lr_multiplier: float = 1.0  # extra rate on non-backbone parameters
    seed: int = 0
    dataset: str = ""
    checkpoint: str = ""

    def __post_init__(self):
        if self.mechanism not in ("ofml", "dlfl"):
            raise ValidationError(f"unknown mechanism {self.mechanism!r}")
        if self.lr <= 0:
            raise ValidationError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0,1), got {self.momentum}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.scheduler not in ("plateau", "none"):
            raise ValidationError(f"unknown scheduler {self.scheduler!r}")
        if self.monitor not in ("train_loss", "val_loss"):
            raise ValidationError(f"unknown monitor {self.monitor!r}")
        if self.scheduler == "plateau" and not 0.0 < self.plateau_factor < 1.0:
            raise ValidationError("plateau factor must be in (0,1)")
        if self.head_lr_multiplier <= 0:
            raise ValidationError("head_lr_multiplier must be positive")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = SscaConfig.from_dict(d["model"])
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TrainResult:
    history: list  # rows of (epoch, train_loss, val_map, lr)
    final_train_loss: float
    best_val_map: float
    final_val_map: float
    checkpoints: dict  # "best"/"final" -> path
    log_path: str
    model: object = None  # the trained model instance


def _sample_loss(model, image, y_row: Tensor) -> T.Tensor:
    return multi_stage_bce(model.stage_logits(image), y_row)


def score_dataset(model, samples):
    """(scores, targets, mean summed-BCE loss) over a sample list."""
    scores = np.zeros((len(samples), model.cfg.M), dtype=np.float64)
    targets = np.zeros_like(scores)
    total = 0.0
    for i, s in enumerate(samples):
        stage_logits = model.stage_logits(s.image)
        zs = np.stack([lg.data.astype(np.float64) for lg in stage_logits])
        avg = zs.mean(axis=0)
        scores[i] = 1.0 / (1.0 + np.exp(-avg))
        targets[i] = s.y
        per_elem = np.maximum(zs, 0.0) - zs * s.y + np.log1p(np.exp(-np.abs(zs)))
        total += float(per_elem.sum())
    return scores, targets, total / len(samples)


def _flip(image: np.ndarray) -> np.ndarray:
    return image[:, :, ::-1].copy()


def train(config: TrainConfig) -> TrainResult:
    root = Path(config.dataset)
    train_samples, spec = load_dataset(root / "train")
    test_samples, _ = load_dataset(root / "test")
    if spec.labels != config.model.M:
        raise ValidationError(
            f"dataset has {spec.labels} labels but the model expects {config.model.M}"
        )
    if spec.channels != config.model.C_in:
        raise ValidationError(
            f"dataset has {spec.channels} channels but the model expects {config.model.C_in}"
        )

    model = build_model(
        config.model,
        config.mechanism,
        seed=config.seed,
        normalized=config.normalized_baseline,
    )
    lr_scales = {
        name: config.head_lr_multiplier
        for name in model.parameters()
        if not name.startswith("embed.")
    }
    optimizer = Sgd(
        model.parameters(),
        config.lr,
        config.momentum,
        config.weight_decay,
        lr_scales=lr_scales,
    )
    scheduler = (
        PlateauScheduler(config.plateau_factor, config.plateau_patience)
        if config.scheduler == "plateau"
        else None
    )

    ckpt_root = Path(config.checkpoint) if config.checkpoint else None
    history = []
    best_val_map = -1.0
    val_map = 0.0
    train_loss = float("nan")
    lr = config.lr
    n = len(train_samples)

    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, epoch]))
        order = rng.permutation(n)
        flips = rng.random(n) < 0.5 if config.hflip else np.zeros(n, dtype=bool)
        epoch_total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            optimizer.zero_grad()
            batch_loss = None
            for i in idx:
                s = train_samples[i]
                image = _flip(s.image) if flips[i] else s.image
                y_row = Tensor(s.y.reshape(1, -1))
                loss = _sample_loss(model, image, y_row)
                batch_loss = loss if batch_loss is None else batch_loss + loss
            batch_loss = T.scale(batch_loss, 1.0 / len(idx))
            T.backward(batch_loss)
            optimizer.step(lr)
            epoch_total += float(batch_loss.data) * len(idx)
        train_loss = epoch_total / n

        scores, targets, val_loss = score_dataset(model, test_samples)
        val_map, _ = metrics.mean_average_precision(scores, targets)
        history.append((epoch, train_loss, val_map, lr))

        if scheduler is not None:
            monitored = train_loss if config.monitor == "train_loss" else val_loss
            lr = config.lr * scheduler.step(monitored)

        if ckpt_root is not None and val_map > best_val_map:
            save_checkpoint(model, ckpt_root / "best")
        best_val_map = max(best_val_map, val_map)

    checkpoints = {}
    log_path = ""
    if ckpt_root is not None:
        save_checkpoint(model, ckpt_root / "final")
        checkpoints = {"best": str(ckpt_root / "best"), "final": str(ckpt_root / "final")}
        log_path = str(ckpt_root / "log.csv")
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_map", "lr"])
            writer.writerows(history)

    return TrainResult(
        history=history,
        final_train_loss=train_loss,
        best_val_map=best_val_map,
        final_val_map=val_map,
        checkpoints=checkpoints,
        log_path=log_path,
        model=model,
    )
