from .blocks import Block, identity_block, init_block, random_block
from .loss import LossResult, hybrid_loss, token_weight_vector
from .model import SurrogateModel, load_checkpoint, save_checkpoint
from .probes import (apply_swaps, layer_stack, layer_swap_eval, noisy_tied_stack,
                     perturb_rollout, run_stack, sensitivity_profile)
from .train import TrainConfig, init_model, rollout_errors, train_stage1, train_stage2

__all__ = [
    "Block", "identity_block", "init_block", "random_block",
    "LossResult", "hybrid_loss", "token_weight_vector",
    "SurrogateModel", "load_checkpoint", "save_checkpoint",
    "apply_swaps", "layer_stack", "layer_swap_eval", "noisy_tied_stack",
    "perturb_rollout", "run_stack", "sensitivity_profile",
    "TrainConfig", "init_model", "rollout_errors", "train_stage1", "train_stage2",
]
