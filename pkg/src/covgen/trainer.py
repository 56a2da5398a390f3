"""Adagrad training loop with clipping, early stopping and the coverage phase."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from covgen import kernels
from covgen.autodiff import backprop
from covgen.checkpoint import Checkpoint, save_checkpoint
from covgen.gradients import clip_by_global_norm, global_norm
from covgen.model import ModelParams, batch_loss
from covgen.text import Example, Vocabulary, encode_example, make_batches

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "loss", "nll", "covloss", "grad_norm", "pgen_mean")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.15
    init_accumulator: float = 0.1
    max_grad_norm: float = 2.0
    lam: float = 1.0
    batch_size: int = 16
    eval_every: int = 100
    patience: int = 5
    seed: int = 0
    max_steps: int = 100_000
    # stop once the mean training loss over the last epoch falls below this
    stop_loss: Optional[float] = None
    # (max_enc, max_dec, from_step) triples, applied in order
    curriculum: tuple = ()

    def __post_init__(self):
        for name in ("learning_rate", "init_accumulator", "max_grad_norm", "batch_size", "eval_every",
                     "max_steps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        self.curriculum = tuple(tuple(c) for c in self.curriculum)


def init_accumulators(params: ModelParams, value: float) -> dict[str, np.ndarray]:
    return {name: np.full(arr.shape, value) for name, arr in params.arrays.items()}


def adagrad_step(params: ModelParams, grads: dict[str, np.ndarray], state: dict[str, np.ndarray],
                 lr: float) -> tuple[ModelParams, dict[str, np.ndarray]]:
    """acc += g**2; theta -= lr * g / sqrt(acc).  Inputs are left untouched."""
    new_arrays, new_state = {}, {}
    for name, theta in params.arrays.items():
        t, a = theta.copy(), state[name].copy()
        kernels.adagrad_update(t, grads[name], a, lr)
        new_arrays[name] = t
        new_state[name] = a
    return params.with_arrays(new_arrays), new_state


def enable_coverage(ckpt: Checkpoint, init_accumulator: float = 0.1) -> Checkpoint:
    """Add a zero coverage weight with a fresh accumulator; carry everything else."""
    if ckpt.config.use_coverage:
        raise ValueError("checkpoint is already in coverage mode")
    params = ckpt.params.with_coverage()
    accum = dict(ckpt.accumulators)
    accum["attn.w_c"] = np.full(params.arrays["attn.w_c"].shape, init_accumulator)
    meta = dict(ckpt.meta)
    meta["coverage_from_step"] = meta.get("step", 0)
    meta["best_valid"] = None
    return Checkpoint(params, accum, meta)


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    best_valid: float
    steps: int
    stopped_early: bool
    evaluations: list = field(default_factory=list)
    log: list = field(default_factory=list)


class Trainer:
    """Deterministic single-writer training loop.

    The batch used at global step ``k`` depends only on ``(seed, k)``, so a
    run resumed from a checkpoint follows the uninterrupted trajectory.
    """

    def __init__(self, params: ModelParams, train: Sequence[Example], valid: Sequence[Example] = (),
                 config: TrainConfig | None = None, *, accumulators=None, step: int = 0,
                 vocab: Vocabulary | None = None, log_path=None, checkpoint_path=None,
                 run_config: dict | None = None):
        if not train:
            raise ValueError("training corpus is empty")
        self.config = config or TrainConfig()
        self.params = params
        self.acc = accumulators if accumulators is not None else init_accumulators(params, self.config.init_accumulator)
        self.step = step
        self.train_examples = list(train)
        self.valid_examples = list(valid)
        self.vocab = vocab
        self.log_path = Path(log_path) if log_path else None
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.run_config = run_config or {}
        self.log_rows: list[dict] = []
        self._epoch_cache: tuple[int, tuple, list] | None = None
        if self.config.curriculum and vocab is None:
            raise ValueError("curriculum schedule needs the vocabulary to re-truncate examples")

    # -- data ---------------------------------------------------------------

    def _limits(self, step: int):
        limits = None
        for max_enc, max_dec, start in self.config.curriculum:
            if step >= start:
                limits = (max_enc, max_dec)
        return limits

    def _examples_for(self, limits):
        if limits is None:
            return self.train_examples
        max_enc, max_dec = limits
        return [encode_example(e.article_tokens, e.abstract_tokens, self.vocab, max_enc, max_dec,
                               abstract_sentences=e.abstract_sentences) for e in self.train_examples]

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.train_examples) / self.config.batch_size)

    def batch_at(self, step: int):
        epoch, k = divmod(step, self.batches_per_epoch)
        limits = self._limits(step)
        if self._epoch_cache is None or self._epoch_cache[:2] != (epoch, limits):
            seed = self.config.seed * 1_000_003 + epoch
            batches = list(make_batches(self._examples_for(limits), self.config.batch_size, seed))
            self._epoch_cache = (epoch, limits, batches)
        return self._epoch_cache[2][k]

    # -- steps --------------------------------------------------------------

    def train_step(self) -> dict:
        batch = self.batch_at(self.step)
        tape, loss, diag = batch_loss(self.params, batch, self.config.lam)
        value = float(loss.value)
        if not math.isfinite(value):
            firsts = [" ".join(e.article_tokens[:8]) for e in batch.examples]
            raise TrainingError(f"non-finite loss {value} at step {self.step}; batch articles start: {firsts}")
        grads = backprop(tape, loss)
        norm = global_norm(grads)
        grads = clip_by_global_norm(grads, self.config.max_grad_norm)
        self.params, self.acc = adagrad_step(self.params, grads, self.acc, self.config.learning_rate)
        self.step += 1
        row = {
            "step": self.step,
            "loss": value,
            "nll": diag.nll,
            "covloss": diag.covloss,
            "grad_norm": norm,
            "pgen_mean": diag.pgen_mean,
        }
        self.log_rows.append(row)
        self._write_log(row)
        return row

    def _write_log(self, row: dict) -> None:
        if self.log_path is None:
            return
        new = not self.log_path.exists()
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            if new:
                w.writeheader()
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

    def corpus_loss(self, params: ModelParams, examples: Sequence[Example]) -> float:
        """Example-weighted mean loss, including ``lam * covloss`` in coverage mode."""
        total, n = 0.0, 0
        for batch in make_batches(examples, self.config.batch_size, None):
            _, loss, _ = batch_loss(params, batch, self.config.lam, record=False)
            total += float(loss.value) * len(batch)
            n += len(batch)
        return total / n

    def validation_loss(self, params: ModelParams) -> float:
        return self.corpus_loss(params, self.valid_examples or self.train_examples)

    def checkpoint(self, params: ModelParams | None = None, best_valid=None) -> Checkpoint:
        meta = {"step": self.step, "mode": (params or self.params).config.mode,
                "train_config": asdict(self.config), "best_valid": best_valid, "run_config": self.run_config}
        return Checkpoint(params or self.params, {k: v.copy() for k, v in self.acc.items()}, meta)

    # -- loop ---------------------------------------------------------------

    def run(self, max_steps: int | None = None) -> TrainResult:
        """Train until early stopping, ``stop_loss`` or ``max_steps`` (global step count)."""
        cfg = self.config
        max_steps = max_steps if max_steps is not None else cfg.max_steps
        best, best_params, bad = math.inf, self.params, 0
        evaluations = []
        stopped = False
        window = self.batches_per_epoch
        while self.step < max_steps:
            self.train_step()
            if cfg.stop_loss is not None and len(self.log_rows) >= window:
                recent = np.mean([r["loss"] for r in self.log_rows[-window:]])
                if recent < cfg.stop_loss:
                    log.info("step %d: mean loss %.4f below %.4f, stopping", self.step, recent, cfg.stop_loss)
                    break
            if self.step % cfg.eval_every == 0:
                v = self.validation_loss(self.params)
                evaluations.append((self.step, v))
                log.info("step %d: validation loss %.5f", self.step, v)
                if v < best:
                    best, best_params, bad = v, self.params, 0
                    if self.checkpoint_path is not None:
                        save_checkpoint(self.checkpoint_path, self.checkpoint(best_params, best))
                else:
                    bad += 1
                    if bad >= cfg.patience:
                        stopped = True
                        break
        if not evaluations:
            best_params = self.params
        return TrainResult(self.params, best_params, best, self.step, stopped, evaluations, self.log_rows)
