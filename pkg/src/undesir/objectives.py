"""Objectives whose minimizers are perturbation masks.

Three modes share the masking pipeline (upsample -> blend with the blurred
image -> classify) and the mask regularizer, and differ in the class term
and in an optional penalty that ties the perturbed logits to the clean ones:

    plain   minimize -f_k(Q) + R_M
    ftc     minimize -f_k(Q) + R_M + gamma * |mean over i != k of
            (logit_i(Q) - logit_i(X))|
    fntc    minimize sum over i != k of f_i(Q) + R_M
            + gamma * |logit_k(Q) - logit_k(X)|

f are softmax probabilities; the preservation penalties read the pre-softmax
logits.  R_M is a total-variation term plus an L1 pull toward the all-ones
(keep everything) mask, so evidence must be paid for:

    R_M = lambda1 * sum_ij (|dM_v|^beta + |dM_h|^beta)^(1/beta)
        + lambda2 * sum |1 - M|

with out-of-range differences taken as zero.  Everything here returns both
the value and a hand-derived gradient with respect to the low-resolution
mask; gradients flow through the classifier via its input-gradient hook, not
through any taped autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import models, tensor
from .perturbation import (BlurConfig, bilinear_upsample, bilinear_upsample_vjp,
                           blur_for_shape, gaussian_blur, mask_apply,
                           mask_apply_mask_vjp)
from .tensor import Array, as_f64

MODES = ("plain", "ftc", "fntc")


@dataclass(frozen=True)
class RegWeights:
    """Regularizer strengths; defaults follow the reference configuration."""

    lambda1: float = 1.7
    lambda2: float = 3.0
    beta: float = 2.0
    gamma: float = 0.3
    ftc_vector: bool = False  # True: replace the mean-difference magnitude
    # with the Euclidean norm of the per-class logit differences / (N - 1)

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.gamma < 0:
            raise ValueError("regularizer weights must be non-negative")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")


def with_gamma(weights: RegWeights, gamma: float) -> RegWeights:
    return replace(weights, gamma=gamma)


# ---------------------------------------------------------------------------
# mask regularizers

def _tv_pieces(mask: Array, beta: float):
    h, w = mask.shape
    a = np.zeros((h, w))  # |M[i+1,j] - M[i,j]|, zero on the last row
    b = np.zeros((h, w))  # |M[i,j+1] - M[i,j]|, zero on the last column
    dv = np.zeros((h, w))
    dh = np.zeros((h, w))
    if h > 1:
        dv[:h - 1, :] = mask[1:, :] - mask[:-1, :]
    if w > 1:
        dh[:, :w - 1] = mask[:, 1:] - mask[:, :-1]
    a = np.abs(dv)
    b = np.abs(dh)
    s = a ** beta + b ** beta
    return dv, dh, a, b, s


def tv_norm(mask: Array, lambda1: float = 1.7, beta: float = 2.0) -> float:
    """Total variation of a 2-D mask, grouped per cell across both axes."""
    mask = as_f64(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    _, _, _, _, s = _tv_pieces(mask, beta)
    return float(lambda1 * np.sum(s ** (1.0 / beta)))


def tv_norm_vjp(inputs: tuple, cotangent) -> tuple:
    mask, lambda1, beta = inputs
    mask = as_f64(mask)
    ct = float(cotangent)
    dv, dh, a, b, s = _tv_pieces(mask, beta)
    pos = s > 0
    p = np.zeros_like(s)
    p[pos] = s[pos] ** (1.0 / beta - 1.0)
    gdv = p * a ** (beta - 1.0) * np.sign(dv)
    gdh = p * b ** (beta - 1.0) * np.sign(dh)
    g = np.zeros_like(mask)
    h, w = mask.shape
    if h > 1:
        g[1:, :] += gdv[:h - 1, :]
        g[:h - 1, :] -= gdv[:h - 1, :]
    if w > 1:
        g[:, 1:] += gdh[:, :w - 1]
        g[:, :w - 1] -= gdh[:, :w - 1]
    return (ct * lambda1 * g, None, None)


def l1_deviation(mask: Array, lambda2: float = 3.0) -> float:
    """L1 distance from the all-ones mask, scaled."""
    mask = as_f64(mask)
    return float(lambda2 * np.sum(np.abs(1.0 - mask)))


def l1_deviation_vjp(inputs: tuple, cotangent) -> tuple:
    mask, lambda2 = inputs
    mask = as_f64(mask)
    return (float(cotangent) * lambda2 * -np.sign(1.0 - mask), None)


def mask_regularizer(mask: Array, weights: RegWeights) -> float:
    return tv_norm(mask, weights.lambda1, weights.beta) + l1_deviation(mask, weights.lambda2)


# ---------------------------------------------------------------------------
# logit-preservation penalties

def _check_target(n: int, target: int) -> None:
    if not 0 <= target < n:
        raise ValueError(f"target {target} out of range for {n} classes")


def r_ftc(logits_q: Array, logits_x: Array, target: int, gamma: float = 0.3,
          vector: bool = False) -> float:
    """Penalty on drift of the non-target logits under the perturbation.

    Default reading: gamma times the magnitude of the mean non-target logit
    difference.  Vector reading: gamma / (N - 1) times the Euclidean norm of
    the per-class differences.
    """
    logits_q = as_f64(logits_q)
    logits_x = as_f64(logits_x)
    n = len(logits_q)
    _check_target(n, target)
    others = np.arange(n) != target
    delta = logits_q[others] - logits_x[others]
    if vector:
        return float(gamma / (n - 1) * tensor.l2_norm(delta))
    return float(gamma * abs(delta.mean()))


def r_ftc_logit_grad(logits_q: Array, logits_x: Array, target: int, gamma: float,
                     vector: bool) -> Array:
    """Gradient of ``r_ftc`` with respect to the perturbed logits."""
    logits_q = as_f64(logits_q)
    logits_x = as_f64(logits_x)
    n = len(logits_q)
    others = np.arange(n) != target
    delta = logits_q[others] - logits_x[others]
    g = np.zeros(n)
    if vector:
        norm = float(np.sqrt(np.sum(delta * delta)))
        if norm > 0:
            g[others] = gamma / (n - 1) * delta / norm
    else:
        g[others] = gamma * np.sign(delta.mean()) / (n - 1)
    return g


def r_fntc(logits_q: Array, logits_x: Array, target: int, gamma: float = 0.3) -> float:
    """Penalty on drift of the target logit under the perturbation."""
    _check_target(len(logits_q), target)
    return float(gamma * abs(float(logits_q[target]) - float(logits_x[target])))


def r_fntc_logit_grad(logits_q: Array, logits_x: Array, target: int, gamma: float) -> Array:
    g = np.zeros(len(logits_q))
    g[target] = gamma * np.sign(float(logits_q[target]) - float(logits_x[target]))
    return g


# ---------------------------------------------------------------------------
# full objective

@dataclass(frozen=True)
class ObjectiveEval:
    """One evaluation of an objective: value, per-term breakdown, and the
    gradient with respect to the low-resolution mask."""

    total: float
    class_term: float
    tv_term: float
    l1_term: float
    extra_term: float
    mask_gradient: Array
    perturbed: Array
    eval_q: models.ClassifierEval


def loss(mode: str, model: models.Model, image: Array, mask: Array, target: int,
         weights: RegWeights = RegWeights(), blur_cfg: BlurConfig | None = None,
         baseline: models.ClassifierEval | None = None,
         blurred: Array | None = None) -> ObjectiveEval:
    """Evaluate one objective and its mask gradient at a low-resolution mask.

    ``baseline`` (clean-image evaluation) and ``blurred`` may be passed in to
    avoid recomputing them every optimizer step; both are derived from
    ``image`` when omitted.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    image = as_f64(image)
    mask = as_f64(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    n = models.model_n_classes(model)
    if not 0 <= target < n:
        raise ValueError(f"target {target} out of range for {n} classes")
    if blur_cfg is None:
        blur_cfg = blur_for_shape(image.shape)
    if blurred is None:
        blurred = gaussian_blur(image, blur_cfg)
    if baseline is None:
        baseline = models.evaluate(model, image)

    target_shape = image.shape[:2]
    up = bilinear_upsample(mask, target_shape)
    perturbed = mask_apply(image, up, blurred)
    eval_q = models.evaluate(model, perturbed)

    onehot = np.zeros(n)
    onehot[target] = 1.0
    if mode == "fntc":
        class_term = float(np.sum(eval_q.probs) - eval_q.probs[target])
        class_ct = 1.0 - onehot
    else:
        class_term = -float(eval_q.probs[target])
        class_ct = -onehot
    (d_logits,) = tensor.softmax_vjp((eval_q.logits,), class_ct)

    extra_term = 0.0
    if mode == "ftc" and weights.gamma > 0:
        extra_term = r_ftc(eval_q.logits, baseline.logits, target, weights.gamma,
                           weights.ftc_vector)
        d_logits = d_logits + r_ftc_logit_grad(eval_q.logits, baseline.logits, target,
                                               weights.gamma, weights.ftc_vector)
    elif mode == "fntc" and weights.gamma > 0:
        extra_term = r_fntc(eval_q.logits, baseline.logits, target, weights.gamma)
        d_logits = d_logits + r_fntc_logit_grad(eval_q.logits, baseline.logits, target,
                                                weights.gamma)

    d_image = models.input_gradient(model, perturbed, d_logits)
    d_up = mask_apply_mask_vjp(image, blurred, d_image)
    (d_mask, _) = bilinear_upsample_vjp((mask, target_shape), d_up)
    (tv_g, _, _) = tv_norm_vjp((mask, weights.lambda1, weights.beta), 1.0)
    (l1_g, _) = l1_deviation_vjp((mask, weights.lambda2), 1.0)

    tv_term = tv_norm(mask, weights.lambda1, weights.beta)
    l1_term = l1_deviation(mask, weights.lambda2)
    return ObjectiveEval(
        total=class_term + tv_term + l1_term + extra_term,
        class_term=class_term,
        tv_term=tv_term,
        l1_term=l1_term,
        extra_term=extra_term,
        mask_gradient=d_mask + tv_g + l1_g,
        perturbed=perturbed,
        eval_q=eval_q)


def _sample_tv(rng: np.random.Generator) -> tuple:
    mask = rng.uniform(0.05, 0.95, size=(5, 4))
    return (mask, float(rng.uniform(0.5, 2.5)), float(rng.choice([2.0, 3.0])))


def _sample_l1(rng: np.random.Generator) -> tuple:
    # stay away from the |1 - M| kink at exactly 1
    return (rng.uniform(0.05, 0.9, size=(5, 4)), float(rng.uniform(0.5, 4.0)))


tensor.register(tensor.Primitive(
    name="tv_norm",
    forward=lambda mask, lambda1, beta: tv_norm(mask, lambda1, beta),
    vjp=tv_norm_vjp,
    sample=_sample_tv))

tensor.register(tensor.Primitive(
    name="l1_deviation",
    forward=lambda mask, lambda2: l1_deviation(mask, lambda2),
    vjp=l1_deviation_vjp,
    sample=_sample_l1))
