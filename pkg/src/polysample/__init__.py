"""Learnable polyphase sampling layers with exact circular shift equivariance."""

from .nets import ClassifierSpec, SimpleClassifier, SimpleUNet, UNetSpec
from .polyphase import PolyphaseSet, decompose, permutation_of_shift, recompose
from .sampling import SamplerMode, aps, lpd, lpu, make_filter
from .selection import LearnedSelector, NormSelector, SelectorWeights, gumbel_softmax, ptheta
from .tensor import Tensor, backward, grad_check

__version__ = "0.1.0"

__all__ = [
    "ClassifierSpec", "LearnedSelector", "NormSelector", "PolyphaseSet", "SamplerMode",
    "SelectorWeights", "SimpleClassifier", "SimpleUNet", "Tensor", "UNetSpec", "aps",
    "backward", "decompose", "grad_check", "gumbel_softmax", "lpd", "lpu", "make_filter",
    "permutation_of_shift", "ptheta", "recompose",
]
