"""Cross-domain pretrain-finetune training engine for hyperspectral image
classification, with a deterministic from-scratch autodiff core."""

from .rng import Rng
from .tensor import Tape, Tensor, backward, finite_diff_check, finite_diff_grad

__all__ = ["Rng", "Tape", "Tensor", "backward", "finite_diff_check",
           "finite_diff_grad"]
__version__ = "0.1.0"
