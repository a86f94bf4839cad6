"""Dense tensors and reverse-mode differentiation."""

from anm.tensor.gradcheck import GradientReport, check_gradients
from anm.tensor.tape import Tape, evaluate
from anm.tensor.tensor import OP_KINDS, OpNode, Tensor, topological_order

__all__ = [
    "OP_KINDS",
    "GradientReport",
    "OpNode",
    "Tape",
    "Tensor",
    "check_gradients",
    "evaluate",
    "topological_order",
]
