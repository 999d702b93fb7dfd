"""Scores for learned masks: accuracy improvement, sparsity, and stability.

phi measures how much of the remaining headroom above the clean top-1
probability the perturbation recovers, in percent:

    phi = (100 * f_h(Q) - 100 * f_h(X)) / (1 - f_h(X))

where h is the clean top-1 class.  pixel_ratio counts how much of the image
the mask actually removes.  consistency_score asks whether reruns with
different seeds find the same mask (mean pairwise Pearson correlation).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import models
from .explainer import ExplainConfig, ExplanationResult, explain
from .tensor import Array, as_f64

REMOVED_THRESHOLD = 0.6
THREADS_ENV = "UNDESIR_THREADS"


def phi(before: float, after: float) -> float:
    """Relative accuracy improvement, in percent of the available headroom.

    ``before`` and ``after`` are the clean-class probabilities without and
    with the perturbation.  Undefined when the classifier is already certain
    (``before`` is 1 or more).
    """
    before = float(before)
    after = float(after)
    if not (0.0 <= before < 1.0):
        raise ValueError(f"before must lie in [0, 1), got {before}")
    if not (0.0 <= after <= 1.0):
        raise ValueError(f"after must lie in [0, 1], got {after}")
    return (after * 100.0 - before * 100.0) / (1.0 - before)


def pixel_ratio(upsampled_mask: Array, threshold: float = REMOVED_THRESHOLD) -> float:
    """Fraction of pixels the mask removes: mean of (1 - M) >= threshold."""
    mask = as_f64(upsampled_mask)
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly inside (0, 1)")
    return float(np.count_nonzero(1.0 - mask >= threshold) / mask.size)


def consistency_score(masks: list) -> float:
    """Mean pairwise Pearson correlation of flattened masks.

    Needs at least two masks of one shape; a constant mask has no
    correlation with anything and is rejected.
    """
    if len(masks) < 2:
        raise ValueError("need at least two masks")
    flat = [as_f64(m).ravel() for m in masks]
    size = flat[0].size
    if any(f.size != size for f in flat):
        raise ValueError("masks must share one shape")
    centered = []
    for f in flat:
        c = f - f.mean()
        norm = float(np.sqrt(np.sum(c * c)))
        if norm == 0.0:
            raise ValueError("constant mask has undefined correlation")
        centered.append(c / norm)
    total = 0.0
    pairs = 0
    for i in range(len(centered)):
        for j in range(i + 1, len(centered)):
            total += float(np.dot(centered[i], centered[j]))
            pairs += 1
    return total / pairs


@dataclass(frozen=True)
class ConsistencyResult:
    masks: list
    score: float


def seed_consistency(model: models.Model, image: Array, config: ExplainConfig,
                     seeds: list) -> ConsistencyResult:
    """Rerun one explanation across seeds and score mask agreement."""
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    masks = [explain(model, image, replace(config, seed=int(s))).mask for s in seeds]
    return ConsistencyResult(masks=masks, score=consistency_score(masks))


# ---------------------------------------------------------------------------
# batch evaluation

@dataclass(frozen=True)
class ImageMetrics:
    index: int
    target: int | None
    before: float | None
    after: float | None
    phi: float | None
    pixel_ratio: float | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "target": self.target,
            "before": self.before,
            "after": self.after,
            "phi": self.phi,
            "pixel_ratio": self.pixel_ratio,
            "error": self.error,
        }


@dataclass(frozen=True)
class MetricReport:
    per_image: list
    mode: str
    config_echo: dict | None = None
    consistency: float | None = None

    @property
    def succeeded(self) -> list:
        return [m for m in self.per_image if m.error is None]

    @property
    def n_failed(self) -> int:
        return len(self.per_image) - len(self.succeeded)

    @property
    def phi_per_image(self) -> list:
        return [m.phi for m in self.succeeded]

    @property
    def pixel_ratio_per_image(self) -> list:
        return [m.pixel_ratio for m in self.succeeded]

    @property
    def phi_mean(self) -> float:
        ok = self.succeeded
        if not ok:
            raise ValueError("no successful images")
        return float(np.mean([m.phi for m in ok]))

    @property
    def pixel_ratio_mean(self) -> float:
        ok = self.succeeded
        if not ok:
            raise ValueError("no successful images")
        return float(np.mean([m.pixel_ratio for m in ok]))

    @property
    def improved_fraction(self) -> float:
        ok = self.succeeded
        if not ok:
            raise ValueError("no successful images")
        return float(np.mean([1.0 if m.after > m.before else 0.0 for m in ok]))

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "images": [m.to_dict() for m in self.per_image],
            "n_images": len(self.per_image),
            "n_failed": self.n_failed,
            "consistency": self.consistency,
            "config": self.config_echo,
        }
        if self.succeeded:
            out["phi_per_image"] = self.phi_per_image
            out["pixel_ratio_per_image"] = self.pixel_ratio_per_image
            out["phi_mean"] = self.phi_mean
            out["pixel_ratio_mean"] = self.pixel_ratio_mean
            out["improved_fraction"] = self.improved_fraction
        return out


def _thread_count(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return 1


def evaluate_batch(model: models.Model, images: list, mode: str,
                   config: ExplainConfig = ExplainConfig(),
                   base_seed: int = 0, threshold: float = REMOVED_THRESHOLD,
                   threads: int | None = None) -> MetricReport:
    """Explain every image (top-1 target, seed = base_seed + index) and score
    each run; a failing image is recorded and does not stop the batch.

    Results are index-ordered and independent of the thread count, which
    defaults to 1 and can be raised via the UNDESIR_THREADS variable.
    """
    if not images:
        raise ValueError("need at least one image")
    config = replace(config, mode=mode)

    def one(idx: int) -> ImageMetrics:
        try:
            run_cfg = replace(config, target=None, seed=base_seed + idx)
            result = explain(model, images[idx], run_cfg)
            before = float(result.eval_before.probs[result.target])
            after = float(result.eval_after.probs[result.target])
            return ImageMetrics(
                index=idx, target=result.target,
                before=before, after=after,
                phi=phi(before, after),
                pixel_ratio=pixel_ratio(result.upsampled, threshold))
        except Exception as exc:  # propagate per image, keep the batch alive
            return ImageMetrics(index=idx, target=None, before=None, after=None,
                                phi=None, pixel_ratio=None,
                                error=f"{type(exc).__name__}: {exc}")

    n_threads = _thread_count(threads)
    if n_threads == 1:
        rows = [one(i) for i in range(len(images))]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            rows = list(pool.map(one, range(len(images))))
    echo = {
        "mode": config.mode,
        "iterations": config.iterations,
        "lr": config.lr,
        "lambda1": config.weights.lambda1,
        "lambda2": config.weights.lambda2,
        "beta": config.weights.beta,
        "gamma": config.weights.gamma,
        "base_seed": base_seed,
        "threshold": threshold,
    }
    return MetricReport(per_image=rows, mode=config.mode, config_echo=echo)
