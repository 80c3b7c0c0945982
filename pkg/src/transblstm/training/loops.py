"""Pretraining and fine-tuning loops."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from ..autodiff import Tape, backward, no_record, precision
from ..data.corpus import TokenizedCorpus
from ..data.pretrain import ExampleStream
from ..data.tasks import TaskBatch
from ..data.vocab import Vocab
from ..encoder import ModelConfig
from ..errors import CheckpointError, ConfigError, NonFiniteError
from ..heads import PretrainModel, TaskModel, build_model, mlm_predictions
from ..nn import Module, set_dropout_rng
from .checkpoint import Checkpoint, save_checkpoint
from .metrics import MetricsRecord, MetricsWriter
from .optim import AdamState, adam_step, clip_grad_norm, warmup_linear

log = logging.getLogger(__name__)

DATA_STREAM = 1
DROPOUT_STREAM = 2


@dataclass
class PretrainHyper:
    steps: int = 2000
    batch_size: int = 256
    max_len: int = 256
    lr: float = 1e-4
    warmup_frac: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    seed: int = 0
    per_word_masking: bool = True
    dtype: str = "float32"
    checkpoint_every: int = 0
    record_time: bool = True

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PretrainHyper":
        return cls(**d)


# Batch, length and peak LR that make the toy preset train in minutes.
DESK_PRETRAIN = dict(batch_size=32, max_len=32, lr=5e-3)
# Toy models need a far larger fine-tuning LR than the reference 3e-5.
DESK_FINETUNE = dict(lr=1e-2)


@dataclass
class FinetuneHyper:
    lr: float = 3e-5
    batch_size: int = 12
    epochs: int = 2
    warmup_frac: float = 0.01
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    seed: int = 0
    decoder: str = "linear"
    num_classes: int = 2
    dtype: str = "float32"
    record_time: bool = True

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def _grads(params: dict) -> dict[str, np.ndarray | None]:
    return {name: p.grad for name, p in params.items()}


class Pretrainer:
    """Owns the model, optimizer, generators and step counter of one run."""

    def __init__(self, cfg: ModelConfig, corpus: TokenizedCorpus, vocab: Vocab,
                 hyper: PretrainHyper, model: PretrainModel | None = None):
        if cfg.vocab_size != len(vocab):
            raise ConfigError(
                f"model vocab_size {cfg.vocab_size} does not match vocabulary of {len(vocab)}"
            )
        if hyper.max_len > cfg.max_positions:
            raise ConfigError(f"max_len {hyper.max_len} exceeds {cfg.max_positions} positions")
        self.config = cfg
        self.hyper = hyper
        self.vocab = vocab
        with precision(hyper.dtype):
            self.model = model if model is not None else build_model(cfg, hyper.seed)
        self.params = dict(self.model.named_parameters())
        self.adam = AdamState(lr=hyper.lr, beta1=hyper.beta1, beta2=hyper.beta2, eps=hyper.eps,
                              weight_decay=hyper.weight_decay)
        self.data_rng = _stream_rng(hyper.seed, DATA_STREAM)
        self.dropout_rng = _stream_rng(hyper.seed, DROPOUT_STREAM)
        set_dropout_rng(self.model, self.dropout_rng)
        self.model.train()
        self.stream = ExampleStream(corpus, vocab, self.data_rng, hyper.max_len, hyper.per_word_masking)
        self.step = 0

    def lr_at(self, step: int) -> float:
        return warmup_linear(step, self.hyper.steps, self.hyper.lr, self.hyper.warmup_frac)

    def train_step(self) -> MetricsRecord:
        t0 = time.perf_counter()
        batch = self.stream.batch(self.hyper.batch_size)
        with precision(self.hyper.dtype), Tape() as tape:
            total, mlm, nsp = self.model.losses(batch)
        mlm_v, nsp_v = mlm.item(), nsp.item()
        if not (math.isfinite(mlm_v) and math.isfinite(nsp_v)):
            raise NonFiniteError(
                f"non-finite loss at step {self.step} (batch {self.step}): mlm={mlm_v} nsp={nsp_v}"
            )
        self.model.zero_grad()
        backward(total, tape)
        grads = _grads(self.params)
        clip_grad_norm({k: g for k, g in grads.items() if g is not None}, self.hyper.clip_norm)
        lr = self.lr_at(self.step)
        adam_step(self.params, grads, self.adam, lr)
        ms = (time.perf_counter() - t0) * 1e3 if self.hyper.record_time else 0.0
        rec = MetricsRecord(self.step, mlm_v + nsp_v, mlm_v, nsp_v, lr, ms)
        self.step += 1
        return rec

    def run(self, steps: int | None = None, metrics_path: str | Path | None = None,
            checkpoint_path: str | Path | None = None) -> list[MetricsRecord]:
        """Train until ``steps`` more updates (default: up to ``hyper.steps``)."""
        n = self.hyper.steps - self.step if steps is None else steps
        writer = MetricsWriter(metrics_path) if metrics_path is not None else None
        records = []
        try:
            for _ in range(n):
                rec = self.train_step()
                records.append(rec)
                if writer is not None:
                    writer.write(rec)
                if rec.step % 100 == 0:
                    log.info("step %d loss %.4f (mlm %.4f nsp %.4f)", rec.step, rec.total, rec.mlm, rec.nsp)
                every = self.hyper.checkpoint_every
                if checkpoint_path is not None and every and self.step % every == 0:
                    save_checkpoint(self.checkpoint(), checkpoint_path)
        finally:
            if writer is not None:
                writer.close()
        if checkpoint_path is not None:
            save_checkpoint(self.checkpoint(), checkpoint_path)
        return records

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            config=self.config.to_dict(),
            params={k: p.data.copy() for k, p in self.params.items()},
            step=self.step,
            adam=dataclasses.replace(self.adam, m={k: v.copy() for k, v in self.adam.m.items()},
                                     v={k: v.copy() for k, v in self.adam.v.items()}),
            rng_states={"data": self.data_rng.bit_generator.state,
                        "dropout": self.dropout_rng.bit_generator.state},
            hyper=self.hyper.to_dict(),
            extra={"kind": "pretrain"},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, corpus: TokenizedCorpus, vocab: Vocab) -> "Pretrainer":
        cfg = ModelConfig.from_dict(ckpt.config)
        hyper = PretrainHyper.from_dict(ckpt.hyper)
        trainer = cls(cfg, corpus, vocab, hyper)
        load_params(trainer.model, ckpt.params)
        if ckpt.adam is not None:
            trainer.adam = dataclasses.replace(
                ckpt.adam, m={k: v.copy() for k, v in ckpt.adam.m.items()},
                v={k: v.copy() for k, v in ckpt.adam.v.items()})
        trainer.data_rng.bit_generator.state = ckpt.rng_states["data"]
        trainer.dropout_rng.bit_generator.state = ckpt.rng_states["dropout"]
        trainer.step = ckpt.step
        return trainer


def load_params(model: Module, params: dict[str, np.ndarray], prefix: str = "",
                strict: bool = True) -> None:
    """Copy arrays into the model's parameters (names under ``prefix`` only)."""
    own = dict(model.named_parameters())
    wanted = {k: v for k, v in own.items() if k.startswith(prefix)}
    missing = sorted(set(wanted) - set(params))
    if missing and strict:
        raise CheckpointError(f"checkpoint lacks parameters: {missing[:5]}")
    for name, p in wanted.items():
        if name not in params:
            continue
        src = params[name]
        if src.shape != p.shape:
            raise CheckpointError(f"parameter {name!r} has shape {src.shape} in checkpoint, "
                                  f"model expects {p.shape}")
        p.data[...] = src


def pretrain_loop(cfg: ModelConfig, corpus: TokenizedCorpus, vocab: Vocab, hyper: PretrainHyper,
                  metrics_path=None, checkpoint_path=None) -> tuple[Checkpoint, list[MetricsRecord]]:
    trainer = Pretrainer(cfg, corpus, vocab, hyper)
    records = trainer.run(metrics_path=metrics_path, checkpoint_path=checkpoint_path)
    return trainer.checkpoint(), records


@dataclass
class FinetuneRecord:
    step: int
    epoch: int
    loss: float
    lr: float
    ms: float


@dataclass
class FinetuneResult:
    model: TaskModel
    records: list[FinetuneRecord]
    checkpoint: Checkpoint


def finetune_loop(ckpt: Checkpoint, task: str, data: TaskBatch, hyper: FinetuneHyper,
                  expected_config: ModelConfig | None = None) -> FinetuneResult:
    """Swap the pretraining heads for a task head and train end to end."""
    try:
        cfg = ModelConfig.from_dict(ckpt.config)
    except (TypeError, ValueError) as err:
        raise CheckpointError(f"checkpoint config unusable: {err}") from None
    if expected_config is not None:
        body = {k: v for k, v in expected_config.to_dict().items() if k != "decoder_mode"}
        have = {k: v for k, v in cfg.to_dict().items() if k != "decoder_mode"}
        if body != have:
            diff = sorted(k for k in body if body[k] != have.get(k))
            raise CheckpointError(f"checkpoint config differs from the task model in {diff}")
    cfg = cfg.replace(decoder_mode=hyper.decoder)
    with precision(hyper.dtype):
        model = build_model(cfg, hyper.seed, task=task, num_classes=hyper.num_classes,
                            decoder_mode=hyper.decoder)
    load_params(model, ckpt.params, prefix="encoder.")
    params = dict(model.named_parameters())
    adam = AdamState(lr=hyper.lr, weight_decay=hyper.weight_decay)
    rng = _stream_rng(hyper.seed, DATA_STREAM)
    set_dropout_rng(model, _stream_rng(hyper.seed, DROPOUT_STREAM))
    model.train()
    n = len(data)
    per_epoch = math.ceil(n / hyper.batch_size)
    total_steps = per_epoch * hyper.epochs
    records = []
    step = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        for i in range(per_epoch):
            t0 = time.perf_counter()
            batch = data.take(order[i * hyper.batch_size:(i + 1) * hyper.batch_size])
            with precision(hyper.dtype), Tape() as tape:
                loss = model.loss(batch)
            if not math.isfinite(loss.item()):
                raise NonFiniteError(f"non-finite loss at fine-tune step {step}")
            model.zero_grad()
            backward(loss, tape)
            grads = _grads(params)
            clip_grad_norm({k: g for k, g in grads.items() if g is not None}, hyper.clip_norm)
            lr = warmup_linear(step, total_steps, hyper.lr, hyper.warmup_frac)
            adam_step(params, grads, adam, lr)
            ms = (time.perf_counter() - t0) * 1e3 if hyper.record_time else 0.0
            records.append(FinetuneRecord(step, epoch, loss.item(), lr, ms))
            step += 1
    model.eval()
    out = Checkpoint(config=cfg.to_dict(), params={k: p.data.copy() for k, p in params.items()},
                     step=step, adam=adam, hyper=hyper.to_dict(),
                     extra={"kind": "finetune", "task": task, "num_classes": hyper.num_classes})
    return FinetuneResult(model, records, out)


def task_model_from_checkpoint(ckpt: Checkpoint) -> TaskModel:
    if ckpt.extra.get("kind") != "finetune":
        raise CheckpointError("checkpoint does not hold a fine-tuned task model")
    cfg = ModelConfig.from_dict(ckpt.config)
    dtype = next(iter(ckpt.params.values())).dtype
    with precision(dtype):
        model = TaskModel(cfg, ckpt.extra["task"], num_classes=ckpt.extra.get("num_classes", 2),
                          decoder_mode=cfg.decoder_mode)
    load_params(model, ckpt.params)
    return model.eval()


def pretrain_model_from_checkpoint(ckpt: Checkpoint) -> PretrainModel:
    cfg = ModelConfig.from_dict(ckpt.config)
    dtype = next(iter(ckpt.params.values())).dtype
    with precision(dtype):
        model = PretrainModel(cfg)
    load_params(model, ckpt.params)
    return model.eval()


def evaluate_pretrain(model: PretrainModel, corpus: TokenizedCorpus, vocab: Vocab, seed: int,
                      batches: int = 10, batch_size: int = 32, max_len: int = 32) -> dict[str, float]:
    """MLM loss/accuracy and NSP accuracy on freshly sampled batches (eval mode)."""
    model.eval()
    stream = ExampleStream(corpus, vocab, _stream_rng(seed, 99), max_len)
    mlm_loss_sum = correct = count = nsp_correct = nsp_count = 0.0
    dtype = model.encoder.embeddings.token.dtype
    with no_record(), precision(dtype):
        for _ in range(batches):
            b = stream.batch(batch_size)
            hidden = model.encoder(b.token_ids, b.segment_ids, b.pad_mask)
            _, mlm, _ = model.losses(b)
            k = b.mlm_weights.sum()
            mlm_loss_sum += mlm.item() * k
            preds = mlm_predictions(hidden, b.mlm_positions, model.mlm)
            correct += ((preds == b.mlm_labels) * b.mlm_weights).sum()
            count += k
            nsp_pred = model.nsp.logits(hidden).data.argmax(-1)
            nsp_correct += (nsp_pred == b.nsp_labels).sum()
            nsp_count += len(b)
    return {"mlm_loss": mlm_loss_sum / count, "mlm_accuracy": correct / count,
            "nsp_accuracy": nsp_correct / nsp_count}


def evaluate_task(model: TaskModel, data: TaskBatch, batch_size: int = 64) -> float:
    """Classification accuracy, or exact match for the span task."""
    model.eval()
    hits = 0
    dtype = model.encoder.embeddings.token.dtype
    with no_record(), precision(dtype):
        for i in range(0, len(data), batch_size):
            b = data.take(slice(i, i + batch_size))
            pred = model.predict(b)
            if model.task == "span":
                hits += int(np.sum((pred[:, 0] == b.starts) & (pred[:, 1] == b.ends)))
            else:
                hits += int(np.sum(pred == b.labels))
    return hits / len(data)
