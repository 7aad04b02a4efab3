"""Multi-task continual learning for CTC sequence models, with FT and RT baselines."""

from .config import ExperimentConfig, load_config
from .ctc import ctc_loss, greedy_decode
from .data import DomainSpec, gen_domain, stack_lfr
from .evaluation import build_comparison, cer, evaluate
from .losses import HyperParams, distill_kl, loss_task1, loss_task2, loss_total
from .model import ModelConfig, forward, init_model, load_checkpoint, save_checkpoint
from .trainer import Schedule, train_base, train_ft, train_mtlcf, train_rt

__version__ = "0.1.0"

__all__ = [
    "DomainSpec",
    "ExperimentConfig",
    "HyperParams",
    "ModelConfig",
    "Schedule",
    "build_comparison",
    "cer",
    "ctc_loss",
    "distill_kl",
    "evaluate",
    "forward",
    "gen_domain",
    "greedy_decode",
    "init_model",
    "load_checkpoint",
    "load_config",
    "loss_task1",
    "loss_task2",
    "loss_total",
    "save_checkpoint",
    "stack_lfr",
    "train_base",
    "train_ft",
    "train_mtlcf",
    "train_rt",
]
