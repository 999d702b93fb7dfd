"""Find the undesirable pixels of an image classifier.

Learn a low-resolution mask whose zeros mark pixels that, once blurred away,
raise (or preserve, depending on the objective) the classifier's confidence
in a target class.  Everything is float64 numpy with hand-written gradients.
"""

from . import cli, explainer, metrics, models, objectives, optim, perturbation, tensor
from .explainer import ExplainConfig, ExplanationResult, explain
from .metrics import consistency_score, evaluate_batch, phi, pixel_ratio
from .models import (ClassifierSpec, ToyLinearModel, evaluate,
                     generate_synthetic_dataset, load_weights, make_toy_model,
                     save_weights, train_reference)
from .objectives import MODES, RegWeights, loss
from .perturbation import BlurConfig, bilinear_upsample, gaussian_blur, mask_apply

__version__ = "0.1.0"

__all__ = [
    "BlurConfig",
    "ClassifierSpec",
    "ExplainConfig",
    "ExplanationResult",
    "MODES",
    "RegWeights",
    "ToyLinearModel",
    "bilinear_upsample",
    "cli",
    "consistency_score",
    "evaluate",
    "evaluate_batch",
    "explain",
    "explainer",
    "gaussian_blur",
    "generate_synthetic_dataset",
    "load_weights",
    "loss",
    "make_toy_model",
    "mask_apply",
    "metrics",
    "models",
    "objectives",
    "optim",
    "perturbation",
    "phi",
    "pixel_ratio",
    "save_weights",
    "tensor",
    "train_reference",
]
