"""Blurred-reference image, mask upsampling, and the blend operator.

A perturbed image is a per-pixel convex blend between the original image and
its Gaussian-blurred copy, steered by a low-resolution mask in [0,1] that is
bilinearly upsampled to image resolution.  The blur is a fixed reference
computed once per image; only the mask is optimized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor
from .tensor import Array, as_f64


@dataclass(frozen=True)
class BlurConfig:
    """Separable Gaussian: standard deviation and odd kernel size."""

    sigma: float = 5.0
    kernel_size: int = 11

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and positive, got {self.kernel_size}")

    def taps(self) -> Array:
        """1-D kernel weights, normalized to sum 1."""
        half = self.kernel_size // 2
        t = np.arange(-half, half + 1, dtype=np.float64)
        w = np.exp(-0.5 * (t / self.sigma) ** 2)
        return w / w.sum()


PAPER_BLUR = BlurConfig(sigma=5.0, kernel_size=11)
DESK_BLUR = BlurConfig(sigma=2.0, kernel_size=5)


def blur_for_shape(shape) -> BlurConfig:
    """Blur support scales with image size: paper values at 224-ish scale,
    a tighter kernel for desk-scale inputs."""
    return DESK_BLUR if min(shape[0], shape[1]) < 64 else PAPER_BLUR


def _blur_axis(x: Array, taps: Array, axis: int) -> Array:
    n = x.shape[axis]
    half = len(taps) // 2
    out = np.zeros_like(x)
    for t, w in enumerate(taps):
        idx = np.clip(np.arange(n) + t - half, 0, n - 1)
        out += w * np.take(x, idx, axis=axis)
    return out


def _blur_axis_adjoint(ct: Array, taps: Array, axis: int) -> Array:
    n = ct.shape[axis]
    half = len(taps) // 2
    moved = np.moveaxis(ct, axis, 0)
    out = np.zeros_like(moved)
    for t, w in enumerate(taps):
        idx = np.clip(np.arange(n) + t - half, 0, n - 1)
        np.add.at(out, idx, w * moved)
    return np.moveaxis(out, 0, axis)


def gaussian_blur(image: Array, cfg: BlurConfig) -> Array:
    """Separable Gaussian filtering with replicate boundary, per channel.

    Constant images are fixed points; outputs stay inside the input range.
    """
    image = as_f64(image)
    taps = cfg.taps()
    return _blur_axis(_blur_axis(image, taps, 0), taps, 1)


def gaussian_blur_vjp(inputs: tuple, cotangent) -> tuple:
    image, cfg = inputs
    image = as_f64(image)
    ct = tensor._check_cotangent(cotangent, image.shape)
    taps = cfg.taps()
    return _blur_axis_adjoint(_blur_axis_adjoint(ct, taps, 1), taps, 0), None


def _sample_coords(n_src: int, n_dst: int):
    """Half-pixel-center source coordinates, split into corners and weights."""
    src = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    src = np.clip(src, 0.0, n_src - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_upsample(mask: Array, target: tuple) -> Array:
    """Resample a 2-D grid to ``target`` (H, W) with half-pixel-center bilinear
    interpolation; edge samples clamp to the border row/column.

    Written in nested-lerp form so constant grids are reproduced bit-exactly
    (a + f*(b - a) with b == a adds an exact zero).
    """
    mask = as_f64(mask)
    h, w = mask.shape
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ValueError(f"target extents must be positive, got {target}")
    if th < h or tw < w:
        raise ValueError(f"target {target} smaller than mask {mask.shape}")
    r0, r1, fr = _sample_coords(h, th)
    c0, c1, fc = _sample_coords(w, tw)
    g00 = mask[np.ix_(r0, c0)]
    g01 = mask[np.ix_(r0, c1)]
    g10 = mask[np.ix_(r1, c0)]
    g11 = mask[np.ix_(r1, c1)]
    top = g00 + fc[None, :] * (g01 - g00)
    bottom = g10 + fc[None, :] * (g11 - g10)
    return top + fr[:, None] * (bottom - top)


def bilinear_upsample_vjp(inputs: tuple, cotangent) -> tuple:
    mask, target = inputs
    mask = as_f64(mask)
    h, w = mask.shape
    th, tw = int(target[0]), int(target[1])
    ct = tensor._check_cotangent(cotangent, (th, tw))
    r0, r1, fr = _sample_coords(h, th)
    c0, c1, fc = _sample_coords(w, tw)
    wr0, wr1 = (1.0 - fr)[:, None], fr[:, None]
    wc0, wc1 = (1.0 - fc)[None, :], fc[None, :]
    g = np.zeros_like(mask)
    np.add.at(g, (r0[:, None], c0[None, :]), wr0 * wc0 * ct)
    np.add.at(g, (r0[:, None], c1[None, :]), wr0 * wc1 * ct)
    np.add.at(g, (r1[:, None], c0[None, :]), wr1 * wc0 * ct)
    np.add.at(g, (r1[:, None], c1[None, :]), wr1 * wc1 * ct)
    return g, None


def mask_apply(image: Array, upsampled_mask: Array, blurred: Array) -> Array:
    """Blend original and blurred pixels: image*M' + blurred*(1-M').

    The mask broadcasts across channels; M'=1 keeps the pixel, M'=0 replaces
    it with the blurred value.
    """
    image = as_f64(image)
    blurred = as_f64(blurred)
    m = as_f64(upsampled_mask)
    if image.shape != blurred.shape or image.shape[:2] != m.shape:
        raise ValueError(
            f"shape mismatch: image {image.shape}, blurred {blurred.shape}, mask {m.shape}")
    m3 = m[:, :, None]
    return image * m3 + blurred * (1.0 - m3)


def mask_apply_mask_vjp(image: Array, blurred: Array, cotangent: Array) -> Array:
    """Cotangent on the upsampled mask for a given output cotangent."""
    ct = tensor._check_cotangent(cotangent, image.shape)
    return ((as_f64(image) - as_f64(blurred)) * ct).sum(axis=2)


tensor.register(tensor.Primitive(
    "blur", gaussian_blur, gaussian_blur_vjp,
    lambda rng: (rng.uniform(0.0, 1.0, size=(6, 5, 3)), BlurConfig(sigma=2.0, kernel_size=5))))
tensor.register(tensor.Primitive(
    "bilinear_upsample", bilinear_upsample, bilinear_upsample_vjp,
    lambda rng: (rng.uniform(0.0, 1.0, size=(3, 4)), (7, 9))))
