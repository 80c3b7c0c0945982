from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .loops import (
    DESK_FINETUNE,
    DESK_PRETRAIN,
    FinetuneHyper,
    FinetuneResult,
    PretrainHyper,
    Pretrainer,
    evaluate_pretrain,
    evaluate_task,
    finetune_loop,
    load_params,
    pretrain_loop,
    pretrain_model_from_checkpoint,
    task_model_from_checkpoint,
)
from .metrics import MetricsRecord, MetricsWriter, read_metrics, write_metrics
from .optim import AdamState, adam_step, clip_grad_norm, warmup_linear

__all__ = [
    "DESK_FINETUNE",
    "DESK_PRETRAIN",
    "AdamState",
    "Checkpoint",
    "FinetuneHyper",
    "FinetuneResult",
    "MetricsRecord",
    "MetricsWriter",
    "PretrainHyper",
    "Pretrainer",
    "adam_step",
    "clip_grad_norm",
    "evaluate_pretrain",
    "evaluate_task",
    "finetune_loop",
    "load_checkpoint",
    "load_params",
    "pretrain_loop",
    "pretrain_model_from_checkpoint",
    "read_metrics",
    "save_checkpoint",
    "task_model_from_checkpoint",
    "warmup_linear",
    "write_metrics",
]
