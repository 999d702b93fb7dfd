"""Learn a perturbation mask by gradient descent on one of the objectives.

The mask lives at low resolution (default 8x8 under 64 pixels a side, 28x28
at or above), is initialized uniformly inside a narrow band around 0.5, and
is clamped back into [0,1] after every optimizer step.  One shared Adam
implementation drives both this loop and classifier training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import models, objectives
from .objectives import MODES, RegWeights
from .optim import AdamState, adam_step  # noqa: F401  (re-exported)
from .perturbation import (BlurConfig, bilinear_upsample, blur_for_shape,
                           gaussian_blur, mask_apply)
from .tensor import Array, as_f64


class ExplainDiverged(RuntimeError):
    """Raised when the objective becomes NaN or Inf during optimization."""


def default_mask_shape(image_shape: tuple) -> tuple:
    """Low-resolution mask size for an image: coarse enough to force
    contiguous regions, fine enough to say which cell matters."""
    return (28, 28) if min(image_shape[0], image_shape[1]) >= 64 else (8, 8)


def project_mask(mask: Array) -> Array:
    return np.clip(mask, 0.0, 1.0)


@dataclass(frozen=True)
class ExplainConfig:
    mode: str = "ftc"
    target: int | None = None  # None: explain the model's top-1 class
    weights: RegWeights = field(default_factory=RegWeights)
    blur: BlurConfig | None = None  # None: picked from the image size
    mask_shape: tuple | None = None  # None: picked from the image size
    lr: float = 0.1
    iterations: int = 200
    seed: int = 0
    init_low: float = 0.4
    init_high: float = 0.6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (0.0 <= self.init_low <= self.init_high <= 1.0):
            raise ValueError("init band must satisfy 0 <= low <= high <= 1")


def with_seed(config: ExplainConfig, seed: int) -> ExplainConfig:
    return replace(config, seed=seed)


@dataclass(frozen=True)
class ExplanationResult:
    mask: Array          # final low-resolution mask, values in [0,1]
    upsampled: Array     # mask at image resolution
    perturbed: Array     # image with masked-out pixels replaced by blur
    target: int
    trace: Array         # objective value at every iteration
    eval_before: models.ClassifierEval
    eval_after: models.ClassifierEval
    config: ExplainConfig  # settings the run actually used, seed included

    @property
    def seed(self) -> int:
        return self.config.seed


def explain(model: models.Model, image: Array,
            config: ExplainConfig = ExplainConfig()) -> ExplanationResult:
    """Optimize a mask so that keeping only high-mask pixels serves the
    configured objective; deterministic for a fixed seed."""
    image = as_f64(image)
    expected = models.model_input_shape(model)
    if image.shape != expected:
        raise ValueError(f"image shape {image.shape} does not match model input {expected}")

    baseline = models.evaluate(model, image)
    target = baseline.top1 if config.target is None else config.target
    n = models.model_n_classes(model)
    if not 0 <= target < n:
        raise ValueError(f"target {target} out of range for {n} classes")

    blur_cfg = config.blur if config.blur is not None else blur_for_shape(image.shape)
    blurred = gaussian_blur(image, blur_cfg)
    mask_shape = config.mask_shape if config.mask_shape is not None else default_mask_shape(image.shape)

    rng = np.random.Generator(np.random.Philox(config.seed))
    mask = rng.uniform(config.init_low, config.init_high, size=mask_shape)
    state = AdamState.zeros(mask.shape)
    trace = np.zeros(config.iterations)
    for t in range(1, config.iterations + 1):
        step_eval = objectives.loss(config.mode, model, image, mask, target,
                                    weights=config.weights, blur_cfg=blur_cfg,
                                    baseline=baseline, blurred=blurred)
        if not np.isfinite(step_eval.total):
            raise ExplainDiverged(f"objective became {step_eval.total} at iteration {t}")
        trace[t - 1] = step_eval.total
        mask, state = adam_step(mask, step_eval.mask_gradient, state,
                                lr=config.lr, t=t)
        mask = project_mask(mask)

    upsampled = bilinear_upsample(mask, image.shape[:2])
    perturbed = mask_apply(image, upsampled, blurred)
    return ExplanationResult(
        mask=mask,
        upsampled=upsampled,
        perturbed=perturbed,
        target=target,
        trace=trace,
        eval_before=baseline,
        eval_after=models.evaluate(model, perturbed),
        config=config)
