"""Float64 array primitives and their vector-Jacobian products.

The optimization graph in this package never changes shape (mask -> upsample
-> blend -> classifier -> scalar loss), so gradients are composed by hand from
a small set of primitives instead of a taped autodiff engine.  Every primitive
is registered with an explicit VJP plus an input sampler, which lets the
gradient self-check iterate the whole registry against central finite
differences.

All arrays are C-order float64.  Image-like tensors are H x W x C, kernels are
Kh x Kw x Cin x Cout, vectors are flat.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray

VALID = "valid"
SAME_REPLICATE = "same-replicate"


def as_f64(x) -> Array:
    """Coerce to a C-order float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def _check_cotangent(cotangent, shape: tuple) -> Array:
    ct = np.asarray(cotangent, dtype=np.float64)
    if ct.shape != tuple(shape):
        raise ValueError(f"cotangent shape {ct.shape} does not match output shape {tuple(shape)}")
    return ct


# ---------------------------------------------------------------------------
# convolution

def _replicate_pad2d(x: Array, ph: int, pw: int) -> Array:
    return np.pad(x, ((ph, ph), (pw, pw), (0, 0)), mode="edge")


def _fold_replicate_pad2d(gp: Array, ph: int, pw: int) -> Array:
    """Adjoint of edge-mode padding: border gradients fold onto edge pixels."""
    h = gp.shape[0] - 2 * ph
    w = gp.shape[1] - 2 * pw
    g = gp[ph:ph + h, pw:pw + w].copy()
    if ph:
        g[0] += gp[:ph, pw:pw + w].sum(axis=0)
        g[-1] += gp[ph + h:, pw:pw + w].sum(axis=0)
    if pw:
        g[:, 0] += gp[ph:ph + h, :pw].sum(axis=1)
        g[:, -1] += gp[ph:ph + h, pw + w:].sum(axis=1)
    if ph and pw:
        g[0, 0] += gp[:ph, :pw].sum(axis=(0, 1))
        g[0, -1] += gp[:ph, pw + w:].sum(axis=(0, 1))
        g[-1, 0] += gp[ph + h:, :pw].sum(axis=(0, 1))
        g[-1, -1] += gp[ph + h:, pw + w:].sum(axis=(0, 1))
    return g


def conv2d(image: Array, kernels: Array, padding: str = VALID) -> Array:
    """Cross-correlate an H,W,Cin image with Kh,Kw,Cin,Cout kernels.

    "same-replicate" pads with replicated border values and preserves H,W;
    "valid" shrinks the output by the kernel extent.  Kernel extents must be
    odd.
    """
    image = as_f64(image)
    kernels = as_f64(kernels)
    kh, kw, cin, _ = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
    if image.ndim != 3 or image.shape[2] != cin:
        raise ValueError(f"input shape {image.shape} does not match kernel Cin={cin}")
    if padding == SAME_REPLICATE:
        image = _replicate_pad2d(image, kh // 2, kw // 2)
    elif padding != VALID:
        raise ValueError(f"unknown padding mode {padding!r}")
    if image.shape[0] < kh or image.shape[1] < kw:
        raise ValueError("input smaller than kernel under valid padding")
    windows = np.lib.stride_tricks.sliding_window_view(image, (kh, kw), axis=(0, 1))
    # windows: H',W',Cin,Kh,Kw
    return np.tensordot(windows, kernels, axes=([2, 3, 4], [2, 0, 1]))


def conv2d_vjp(inputs: tuple, cotangent) -> tuple:
    image, kernels, padding = inputs
    image = as_f64(image)
    kernels = as_f64(kernels)
    kh, kw, _, _ = kernels.shape
    padded = _replicate_pad2d(image, kh // 2, kw // 2) if padding == SAME_REPLICATE else image
    oh = padded.shape[0] - kh + 1
    ow = padded.shape[1] - kw + 1
    ct = _check_cotangent(cotangent, (oh, ow, kernels.shape[3]))
    g_pad = np.zeros_like(padded)
    g_k = np.zeros_like(kernels)
    for i in range(kh):
        for j in range(kw):
            patch = padded[i:i + oh, j:j + ow]
            g_k[i, j] = np.tensordot(patch, ct, axes=([0, 1], [0, 1]))
            g_pad[i:i + oh, j:j + ow] += ct @ kernels[i, j].T
    if padding == SAME_REPLICATE:
        g_img = _fold_replicate_pad2d(g_pad, kh // 2, kw // 2)
    else:
        g_img = g_pad
    return g_img, g_k, None


# ---------------------------------------------------------------------------
# dense / activations / pooling

def dense(x: Array, weight: Array, bias: Array) -> Array:
    """Affine map of a flat vector: x @ weight + bias."""
    x = as_f64(x)
    weight = as_f64(weight)
    if x.ndim != 1 or weight.ndim != 2 or x.shape[0] != weight.shape[0]:
        raise ValueError(f"dense shapes do not agree: {x.shape} vs {weight.shape}")
    return x @ weight + as_f64(bias)


def dense_vjp(inputs: tuple, cotangent) -> tuple:
    x, weight, bias = (as_f64(v) for v in inputs)
    ct = _check_cotangent(cotangent, (weight.shape[1],))
    return ct @ weight.T, np.outer(x, ct), ct.copy()


def relu(x: Array) -> Array:
    return np.maximum(as_f64(x), 0.0)


def relu_vjp(inputs: tuple, cotangent) -> tuple:
    x = as_f64(inputs[0])
    ct = _check_cotangent(cotangent, x.shape)
    # subgradient at exactly 0 is 0
    return (np.where(x > 0.0, ct, 0.0),)


def avgpool2(x: Array) -> Array:
    """2x2 average pooling with stride 2 over H,W,C (H and W must be even)."""
    x = as_f64(x)
    h, w = x.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2 needs even extents, got {h}x{w}")
    return x.reshape(h // 2, 2, w // 2, 2, *x.shape[2:]).mean(axis=(1, 3))


def avgpool2_vjp(inputs: tuple, cotangent) -> tuple:
    x = as_f64(inputs[0])
    h, w = x.shape[:2]
    ct = _check_cotangent(cotangent, (h // 2, w // 2) + x.shape[2:])
    return (np.repeat(np.repeat(ct, 2, axis=0), 2, axis=1) / 4.0,)


def softmax(logits: Array) -> Array:
    """Probabilities of a flat logit vector; the max logit is subtracted first."""
    z = as_f64(logits)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_vjp(inputs: tuple, cotangent) -> tuple:
    p = softmax(inputs[0])
    ct = _check_cotangent(cotangent, p.shape)
    return (p * (ct - ct @ p),)


# ---------------------------------------------------------------------------
# elementwise and reductions

def mul(a: Array, b: Array) -> Array:
    a, b = as_f64(a), as_f64(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def mul_vjp(inputs: tuple, cotangent) -> tuple:
    a, b = (as_f64(v) for v in inputs)
    ct = _check_cotangent(cotangent, a.shape)
    return ct * b, ct * a


def add(a: Array, b: Array) -> Array:
    a, b = as_f64(a), as_f64(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def add_vjp(inputs: tuple, cotangent) -> tuple:
    ct = _check_cotangent(cotangent, np.asarray(inputs[0]).shape)
    return ct.copy(), ct.copy()


def scale(x: Array, factor: float) -> Array:
    return as_f64(x) * float(factor)


def scale_vjp(inputs: tuple, cotangent) -> tuple:
    x, factor = inputs
    ct = _check_cotangent(cotangent, np.asarray(x).shape)
    return ct * float(factor), None


def tensor_sum(x: Array) -> float:
    return float(as_f64(x).sum())


def tensor_sum_vjp(inputs: tuple, cotangent) -> tuple:
    x = as_f64(inputs[0])
    return (np.full_like(x, float(cotangent)),)


def l2_norm(v: Array) -> float:
    """Euclidean norm of the flattened input (absolute value for scalars)."""
    return float(np.linalg.norm(as_f64(v).ravel()))


def l2_norm_vjp(inputs: tuple, cotangent) -> tuple:
    v = as_f64(inputs[0])
    n = np.linalg.norm(v.ravel())
    if n == 0.0:
        return (np.zeros_like(v),)
    return (v / n * float(cotangent),)


# ---------------------------------------------------------------------------
# registry and finite-difference oracle

@dataclass(frozen=True)
class Primitive:
    """A forward function, its VJP, and a sampler for self-checks.

    ``vjp(inputs, cotangent)`` returns one cotangent per forward input, with
    ``None`` in non-differentiable positions (mode strings, configs).
    """

    name: str
    forward: Callable
    vjp: Callable[[tuple, object], tuple]
    sample: Callable[[np.random.Generator], tuple]


REGISTRY: dict[str, Primitive] = {}


def register(prim: Primitive) -> Primitive:
    if prim.name in REGISTRY:
        raise ValueError(f"primitive {prim.name!r} already registered")
    REGISTRY[prim.name] = prim
    return prim


def vjp(name: str, inputs, cotangent) -> tuple:
    """Jᵀ·cotangent of a registered primitive at the recorded inputs."""
    if name not in REGISTRY:
        raise KeyError(f"unknown primitive {name!r}")
    return REGISTRY[name].vjp(tuple(inputs), cotangent)


def finite_difference_vjp(forward: Callable, inputs: tuple, cotangent, step: float = 1e-5) -> tuple:
    """Central-difference estimate of Jᵀ·cotangent, one entry per array input.

    Only depends on the forward function, so it serves as an independent
    oracle for the hand-written VJPs.
    """
    ct = np.asarray(cotangent, dtype=np.float64)

    def objective(args) -> float:
        return float(np.sum(np.asarray(forward(*args)) * ct))

    grads = []
    base = list(inputs)
    for pos, value in enumerate(base):
        if not isinstance(value, np.ndarray):
            grads.append(None)
            continue
        g = np.zeros(value.shape, dtype=np.float64)
        flat = g.reshape(-1)
        for i in range(value.size):
            bumped = value.astype(np.float64).copy()
            bumped.reshape(-1)[i] += step
            args = list(base)
            args[pos] = bumped
            hi = objective(args)
            bumped.reshape(-1)[i] -= 2 * step
            lo = objective(args)
            flat[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return tuple(grads)


def relative_error(a: Array | None, b: Array | None) -> float:
    """Max-abs difference normalized by the larger max-abs magnitude."""
    if a is None and b is None:
        return 0.0
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = float(np.max(np.abs(a - b))) if a.size else 0.0
    den = max(float(np.max(np.abs(a))) if a.size else 0.0,
              float(np.max(np.abs(b))) if b.size else 0.0, 1e-12)
    return num / den


def check_primitive(name: str, rng: np.random.Generator, trials: int = 10, step: float = 1e-5) -> float:
    """Worst relative error of a primitive's VJP against finite differences."""
    prim = REGISTRY[name]
    worst = 0.0
    for _ in range(trials):
        inputs = prim.sample(rng)
        out = prim.forward(*inputs)
        if np.isscalar(out) or np.asarray(out).ndim == 0:
            ct = float(rng.uniform(0.5, 1.5))
        else:
            ct = rng.standard_normal(np.asarray(out).shape)
        analytic = prim.vjp(tuple(inputs), ct)
        numeric = finite_difference_vjp(prim.forward, tuple(inputs), ct, step=step)
        for g_a, g_n in zip(analytic, numeric):
            if g_a is None and g_n is None:
                continue
            worst = max(worst, relative_error(g_a, g_n))
    return worst


def _sample_conv2d(rng):
    cin = int(rng.integers(1, 3))
    cout = int(rng.integers(1, 4))
    x = rng.uniform(-1.0, 1.0, size=(int(rng.integers(5, 8)), int(rng.integers(5, 8)), cin))
    k = rng.uniform(-1.0, 1.0, size=(3, 3, cin, cout))
    padding = SAME_REPLICATE if rng.integers(2) else VALID
    return x, k, padding


def _sample_dense(rng):
    n_in, n_out = int(rng.integers(3, 8)), int(rng.integers(2, 6))
    return (rng.uniform(-1, 1, size=n_in),
            rng.uniform(-1, 1, size=(n_in, n_out)),
            rng.uniform(-1, 1, size=n_out))


register(Primitive("conv2d", conv2d, conv2d_vjp, _sample_conv2d))
register(Primitive("dense", dense, dense_vjp, _sample_dense))
register(Primitive("relu", relu, relu_vjp,
                   lambda rng: (rng.uniform(-1, 1, size=int(rng.integers(4, 12))),)))
register(Primitive("avgpool2", avgpool2, avgpool2_vjp,
                   lambda rng: (rng.uniform(-1, 1, size=(6, 8, 3)),)))
register(Primitive("softmax", softmax, softmax_vjp,
                   lambda rng: (rng.uniform(-3, 3, size=int(rng.integers(3, 8))),)))
register(Primitive("mul", mul, mul_vjp,
                   lambda rng: (rng.uniform(-1, 1, size=(4, 5)), rng.uniform(-1, 1, size=(4, 5)))))
register(Primitive("add", add, add_vjp,
                   lambda rng: (rng.uniform(-1, 1, size=(4, 5)), rng.uniform(-1, 1, size=(4, 5)))))
register(Primitive("scale", scale, scale_vjp,
                   lambda rng: (rng.uniform(-1, 1, size=(3, 4)), float(rng.uniform(-2, 2)))))
register(Primitive("sum", tensor_sum, tensor_sum_vjp,
                   lambda rng: (rng.uniform(-1, 1, size=(4, 3)),)))
register(Primitive("l2_norm", l2_norm, l2_norm_vjp,
                   lambda rng: (rng.uniform(0.2, 1.0, size=int(rng.integers(1, 7)))
                                * rng.choice([-1.0, 1.0]),)))
