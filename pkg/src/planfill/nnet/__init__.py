from .masks import build_causal_mask, build_hybrid_mask, pad_attend_mask
from .model import (
    CausalLMNet,
    ForwardTrace,
    ModelConfig,
    PlannerNet,
    Seq2SeqNet,
    build_model,
)
from .train import OptimizerState, lr_at, run_training, train_step
from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .gradcheck import fd_gradient, gradcheck

__all__ = [
    "build_causal_mask",
    "build_hybrid_mask",
    "pad_attend_mask",
    "CausalLMNet",
    "ForwardTrace",
    "ModelConfig",
    "PlannerNet",
    "Seq2SeqNet",
    "build_model",
    "OptimizerState",
    "lr_at",
    "run_training",
    "train_step",
    "FORMAT_VERSION",
    "load_checkpoint",
    "save_checkpoint",
    "fd_gradient",
    "gradcheck",
]
