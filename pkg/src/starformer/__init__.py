"""Star-topology Transformer encoder on a small float64 numpy autodiff core."""
from .attention import AttentionTrace, MultiHeadParams, multi_head_attention, scaled_dot_attention
from .baseline import BaselineConfig, BaselineModel
from .masked_sum import GenSpec, generate, target_oracle
from .optim import AdamState, adam_step
from .star import StarConfig, StarModel
from .tensor import Tensor, backward, no_grad

__all__ = [
    "AdamState", "AttentionTrace", "BaselineConfig", "BaselineModel", "GenSpec", "MultiHeadParams",
    "StarConfig", "StarModel", "Tensor", "adam_step", "backward", "generate", "multi_head_attention",
    "no_grad", "scaled_dot_attention", "target_oracle",
]

__version__ = "0.1.0"
