"""ace_lab: a desk-scale lab for counterfactual-explanation augmentation.

The package trains a small overconfident classifier on synthetic two-moons
data, trains a conditional explainer GAN against it, fine-tunes the
classifier on the explainer's counterfactuals, and measures what that buys:
uncertainty that tracks ambiguity, a usable OOD/abstention signal, and
adversarial robustness. Everything runs on a from-scratch autodiff engine
with a compiled kernel core and a NumPy fallback.
"""

from ._kernels import BACKEND
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["BACKEND", "Tensor", "__version__"]
