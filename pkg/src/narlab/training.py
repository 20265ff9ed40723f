"""Shared optimization loop for the AR teacher and NAR student.

Label-smoothed cross-entropy, Adam with the inverse-sqrt warm-up schedule,
validation-loss early stopping, last-k checkpoint averaging, and the
teacher-to-student encoder/embedding initialization.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .transformer import NAR
from .util import rng_for
from .vocab import BOS_ID, EOS_ID

# paper-scale reference values; desk defaults live on TrainConfig
PAPER_SCALE_TRAIN = {"batch_tokens": 64000, "warmup_steps": 4000, "peak_lr": 0.0014}


@dataclass(frozen=True)
class TrainConfig:
    batch_tokens: int = 2048
    warmup_steps: int = 400
    peak_lr: float = 0.01
    label_smoothing: float = 0.1
    patience_epochs: int = 5
    average_last_k: int = 5
    max_epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        for name in ("batch_tokens", "warmup_steps", "patience_epochs",
                     "average_last_k", "max_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


def lr_schedule(step: int, config: TrainConfig, model_dim: int) -> float:
    """Inverse-sqrt schedule with the scale fitted so lr(warmup) == peak_lr."""
    if step < 1:
        raise ValueError("schedule is defined for step >= 1")
    scale = config.peak_lr * math.sqrt(model_dim * config.warmup_steps)
    return scale * model_dim ** -0.5 * min(step ** -0.5,
                                           step * config.warmup_steps ** -1.5)


def schedule_scale(config: TrainConfig, model_dim: int) -> float:
    """The fitted multiplier on the raw base-transformer schedule
    (about 2.0 when peak 0.0014 at model_dim 512 / warmup 4000)."""
    return config.peak_lr * math.sqrt(model_dim * config.warmup_steps)


# ---------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------

def _smooth_targets(targets: np.ndarray, vocab_size: int, eps: float) -> np.ndarray:
    # q = (1 - eps) on the target id, eps/(V-1) spread over the others
    q = np.full(targets.shape + (vocab_size,), eps / (vocab_size - 1))
    np.put_along_axis(q, targets[..., None], 1.0 - eps, axis=-1)
    return q


def smoothed_ce_from_logits(logits: Tensor, targets: np.ndarray, eps: float) -> Tensor:
    """Mean label-smoothed cross-entropy over all positions of a rectangular
    batch (training path: stable log-softmax, no padding present)."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ValueError(
            f"logits positions {logits.shape[:-1]} do not match targets {targets.shape}"
        )
    q = _smooth_targets(targets, logits.shape[-1], eps)
    per_pos = (T.log_softmax(logits) * Tensor(q)).sum(axis=-1)
    return per_pos.sum() * Tensor(-1.0 / targets.size)


def smoothed_ce_loss(pred: Tensor, target, eps: float,
                     pad_id: int | None = None) -> Tensor:
    """Label-smoothed CE of predicted distributions against a token sequence.

    ``pred`` holds probabilities (rows sum to 1).  With ``pad_id`` set,
    positions whose target equals it are excluded from the mean; the
    rectangular training path never pads, so exclusion is opt-in.
    """
    target = np.asarray(target, dtype=np.int64)
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    if pred.shape[:-1] != target.shape:
        raise ValueError(
            f"prediction rows {pred.shape[:-1]} do not match target length {target.shape}"
        )
    keep = np.ones(target.shape, dtype=bool) if pad_id is None else target != pad_id
    if not keep.any():
        raise ValueError("all target positions are padding")
    q = _smooth_targets(target, pred.shape[-1], eps) * keep[..., None]
    per_pos = (T.log(pred) * Tensor(q)).sum(axis=-1)
    return per_pos.sum() * Tensor(-1.0 / keep.sum())


# ---------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------

class Adam:
    """Adam with the base-transformer conventions: beta2 = 0.98, eps = 1e-9."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.98,
                 eps: float = 1e-9):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
            p.data = p.data - lr * update


# ---------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------

def make_batches(pairs, batch_tokens: int, rng=None) -> list:
    """Rectangular batches: pairs grouped by exact (src_len, tgt_len), each
    group chunked to about ``batch_tokens`` source+target tokens.  With an
    rng, order is shuffled within groups and across batches."""
    groups: dict = {}
    for src, tgt in pairs:
        groups.setdefault((len(src), len(tgt)), []).append((src, tgt))
    batches = []
    for (ls, lt), members in sorted(groups.items()):
        if rng is not None:
            members = [members[i] for i in rng.permutation(len(members))]
        per = max(1, batch_tokens // (ls + lt + 1))
        for i in range(0, len(members), per):
            chunk = members[i : i + per]
            src_arr = np.array([s for s, _ in chunk], dtype=np.int64)
            tgt_arr = np.array([t for _, t in chunk], dtype=np.int64)
            batches.append((src_arr, tgt_arr))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def batch_loss(model, src_arr: np.ndarray, tgt_arr: np.ndarray, eps: float,
               rng=None) -> tuple:
    """(scalar loss Tensor, position count) for one rectangular batch;
    dispatches on model flavor."""
    if model.config.flavor == NAR:
        logits = model.nar_logits_batch(src_arr, tgt_arr.shape[1], rng)
        targets = tgt_arr
    else:
        B = src_arr.shape[0]
        bos = np.full((B, 1), BOS_ID, dtype=np.int64)
        eos = np.full((B, 1), EOS_ID, dtype=np.int64)
        logits = model.ar_logits_batch(src_arr, np.concatenate([bos, tgt_arr], axis=1), rng)
        targets = np.concatenate([tgt_arr, eos], axis=1)
    return smoothed_ce_from_logits(logits, targets, eps), targets.size


def dataset_loss(model, pairs, eps: float, batch_tokens: int = 4096) -> float:
    """Token-weighted mean smoothed CE over a dataset (no dropout, no grads)."""
    total, count = 0.0, 0
    with T.no_grad():
        for src_arr, tgt_arr in make_batches(pairs, batch_tokens):
            loss, n = batch_loss(model, src_arr, tgt_arr, eps)
            total += loss.item() * n
            count += n
    return total / count


# ---------------------------------------------------------------------
# checkpoint averaging / student init
# ---------------------------------------------------------------------

def average_checkpoints(snapshots: list) -> dict:
    """Elementwise mean of parameter value dicts."""
    if not snapshots:
        raise ValueError("no checkpoints to average")
    names = set(snapshots[0])
    if any(set(s) != names for s in snapshots):
        raise ValueError("checkpoint parameter sets differ")
    return {
        name: sum(s[name] for s in snapshots) / len(snapshots) for name in names
    }


def init_student_from_teacher(teacher_params: dict, student_params: dict) -> dict:
    """Copy the embedding table and every encoder parameter from the teacher;
    decoder and soft-copy parameters keep their fresh initialization."""
    for name, tp in teacher_params.items():
        if name != "embedding" and not name.startswith("encoder."):
            continue
        if name not in student_params:
            raise ValueError(f"student is missing teacher parameter {name}")
        if student_params[name].shape != tp.shape:
            raise ValueError(
                f"shape mismatch at {name}: teacher {tp.shape}, "
                f"student {student_params[name].shape}"
            )
        np.copyto(student_params[name].data, tp.data)
    return student_params


# ---------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    lr: float
    wall_seconds: float


def train(model, corpus, config: TrainConfig, validation, curves_path=None,
          log=None) -> list:
    """Train in place; on return model.params hold the mean of the last
    average_last_k epoch checkpoints.  Returns per-epoch records and, if
    ``curves_path`` is given, mirrors them there as JSON lines."""
    if not corpus:
        raise ValueError("empty training corpus")
    eps = config.label_smoothing
    model_dim = model.config.model_dim
    dropout = model.config.dropout_rate
    opt = Adam(model.params)
    ring: deque = deque(maxlen=config.average_last_k)
    records: list = []
    best_valid = math.inf
    best_epoch = 0
    step = 0

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        rng = rng_for(config.seed, "epoch", epoch)
        total, count = 0.0, 0
        lr = 0.0
        for src_arr, tgt_arr in make_batches(corpus, config.batch_tokens, rng):
            step += 1
            drop_rng = rng_for(config.seed, "dropout", step) if dropout > 0 else None
            opt.zero_grad()
            loss, n = batch_loss(model, src_arr, tgt_arr, eps, drop_rng)
            if not math.isfinite(loss.item()):
                raise RuntimeError(
                    f"training diverged: non-finite loss at step {step} (epoch {epoch})"
                )
            T.backward(loss)
            lr = lr_schedule(step, config, model_dim)
            opt.step(lr)
            total += loss.item() * n
            count += n
        train_loss = total / count
        valid_loss = dataset_loss(model, validation, eps) if validation else train_loss
        rec = EpochRecord(epoch, train_loss, valid_loss, lr, time.perf_counter() - t0)
        records.append(rec)
        ring.append({k: p.data.copy() for k, p in model.params.items()})
        if log:
            log(f"epoch {epoch:3d}  train {train_loss:.4f}  valid {valid_loss:.4f}  "
                f"lr {lr:.2e}")
        if valid_loss < best_valid - 1e-12:
            best_valid, best_epoch = valid_loss, epoch
        elif epoch - best_epoch >= config.patience_epochs:
            break

    for name, val in average_checkpoints(list(ring)).items():
        model.params[name].data = val
    if curves_path is not None:
        with open(curves_path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
    return records
