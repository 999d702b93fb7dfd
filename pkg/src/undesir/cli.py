"""Command-line surface; all file I/O lives here.

Subcommands: ``train`` (fit the reference CNN on the synthetic set),
``dataset`` (export synthetic images), ``explain`` (one image -> mask
artifacts), ``eval`` (batch metrics), ``gradcheck`` (finite-difference
self-test), ``consistency`` (seed-stability experiment).

File formats are deliberately boring: PPM P6 / PGM P5 with maxval 255, raw
little-endian float64 masks behind an "UNDM" header, UNDW weight buffers,
and JSON with sorted keys.  Every output directory gets a manifest.json
echoing the full argument set, so a run can be repeated bit-exactly; the
manifest's wall-clock duration is the one field that varies between repeats.
All files are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
import tempfile
import time
from dataclasses import replace

import numpy as np

from . import models, tensor
from .explainer import ExplainConfig, explain
from .metrics import (REMOVED_THRESHOLD, consistency_score, evaluate_batch,
                      phi, pixel_ratio)
from .objectives import MODES, RegWeights, loss
from .perturbation import BlurConfig
from .tensor import Array, as_f64

SCHEMA = 1
MASK_MAGIC = b"UNDM"
_MASK_HEADER = struct.Struct("<4sII")
GRADCHECK_TOLERANCE = 1e-5


class CLIError(ValueError):
    """User-facing failure: message on stderr, exit status 1."""


# ---------------------------------------------------------------------------
# atomic file writing

def write_bytes_atomic(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


def write_json_atomic(path: str, obj) -> None:
    write_bytes_atomic(path, dump_json(obj))


# ---------------------------------------------------------------------------
# PPM / PGM

def _quantize(values: Array) -> np.ndarray:
    return np.clip(np.rint(as_f64(values) * 255.0), 0, 255).astype(np.uint8)


def encode_ppm(image: Array) -> bytes:
    """P6, maxval 255; input float in [0,1], shape (H, W, 3)."""
    image = as_f64(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"need an (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + _quantize(image).tobytes()


def encode_pgm(gray: Array) -> bytes:
    """P5, maxval 255; input float in [0,1], shape (H, W)."""
    gray = as_f64(gray)
    if gray.ndim != 2:
        raise ValueError(f"need an (H, W) grayscale image, got {gray.shape}")
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + _quantize(gray).tobytes()


def decode_image(data: bytes) -> Array:
    """Parse P6 or P5 (maxval 255) into float64 (H, W, 3) in [0,1].

    Header tokens may be separated by any whitespace and '#' comments;
    grayscale input is replicated across the three channels.
    """
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos:pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CLIError("truncated image header")
        return data[start:pos]

    magic = token()
    if magic not in (b"P6", b"P5"):
        raise CLIError(f"unsupported image format {magic!r} (need P6 or P5)")
    try:
        w = int(token())
        h = int(token())
        maxval = int(token())
    except ValueError as exc:
        raise CLIError(f"bad image header: {exc}") from None
    if w < 1 or h < 1:
        raise CLIError(f"bad image dimensions {w}x{h}")
    if maxval != 255:
        raise CLIError(f"unsupported maxval {maxval} (need 255)")
    pos += 1  # single whitespace byte between header and raster
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    raster = data[pos:pos + need]
    if len(raster) != need:
        raise CLIError(f"raster has {len(raster)} bytes, need {need}")
    pixels = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return np.repeat(pixels.reshape(h, w, 1), 3, axis=2)
    return pixels.reshape(h, w, 3)


def load_image(path: str) -> Array:
    with open(path, "rb") as handle:
        return decode_image(handle.read())


# ---------------------------------------------------------------------------
# raw float64 masks

def encode_mask_f64(mask: Array) -> bytes:
    mask = as_f64(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    h, w = mask.shape
    return _MASK_HEADER.pack(MASK_MAGIC, h, w) + mask.astype("<f8").tobytes()


def decode_mask_f64(data: bytes) -> Array:
    if len(data) < _MASK_HEADER.size:
        raise CLIError("mask buffer shorter than header")
    magic, h, w = _MASK_HEADER.unpack_from(data)
    if magic != MASK_MAGIC:
        raise CLIError(f"bad mask magic {magic!r}")
    need = _MASK_HEADER.size + 8 * h * w
    if len(data) != need:
        raise CLIError(f"mask buffer length {len(data)} does not match {need}")
    return np.frombuffer(data, dtype="<f8", offset=_MASK_HEADER.size).reshape(h, w).copy()


def load_mask_f64(path: str) -> Array:
    with open(path, "rb") as handle:
        return decode_mask_f64(handle.read())


# ---------------------------------------------------------------------------
# manifests

def write_manifest(out_dir: str, command: str, args: argparse.Namespace,
                   started: float, results: dict | None = None) -> None:
    arguments = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "schema": SCHEMA,
        "command": command,
        "arguments": arguments,
        "version": _package_version(),
        "duration_seconds": time.time() - started,
    }
    if results is not None:
        manifest["results"] = results
    write_json_atomic(os.path.join(out_dir, "manifest.json"), manifest)


def _package_version() -> str:
    from . import __version__
    return __version__


def _ensure_out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_model(path: str) -> models.Model:
    try:
        with open(path, "rb") as handle:
            return models.load_weights(handle.read())
    except models.WeightFormatError as exc:
        raise CLIError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands

def _reg_weights(args: argparse.Namespace) -> RegWeights:
    return RegWeights(lambda1=args.lambda1, lambda2=args.lambda2, beta=args.beta,
                      gamma=args.gamma, ftc_vector=args.vector_ftc)


def _blur_config(args: argparse.Namespace) -> BlurConfig | None:
    if args.sigma is None and args.kernel_size is None:
        return None
    if args.sigma is None or args.kernel_size is None:
        raise CLIError("--sigma and --kernel-size must be given together")
    return BlurConfig(sigma=args.sigma, kernel_size=args.kernel_size)


def _explain_config(args: argparse.Namespace, target: int | None) -> ExplainConfig:
    mask_shape = None if args.mask_size is None else (args.mask_size, args.mask_size)
    return ExplainConfig(mode=args.mode, target=target, weights=_reg_weights(args),
                         blur=_blur_config(args), mask_shape=mask_shape,
                         lr=args.lr, iterations=args.iterations, seed=args.seed)


def _parse_target(raw: str) -> int | None:
    if raw == "top1":
        return None
    try:
        return int(raw)
    except ValueError:
        raise CLIError(f"--target must be a class index or 'top1', got {raw!r}") from None


def cmd_train(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = _ensure_out_dir(args.out)
    if args.epochs == 0:
        print("warning: untrained model (epochs=0)", file=sys.stderr)
    dataset = models.generate_synthetic_dataset(args.n, args.seed)
    result = models.train_reference(dataset, epochs=args.epochs, lr=args.lr,
                                    seed=args.seed, batch_size=args.batch_size)
    weight_path = os.path.join(out_dir, "model.undw")
    write_bytes_atomic(weight_path, models.save_weights(result.spec))
    write_manifest(out_dir, "train", args, started,
                   results={"accuracy": result.accuracy,
                            "final_loss": result.final_loss,
                            "weights": "model.undw"})
    print(f"train accuracy {result.accuracy:.4f} on {args.n} images "
          f"({args.epochs} epochs); weights -> {weight_path}")
    return 0


def cmd_dataset(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = _ensure_out_dir(args.out)
    items = models.generate_synthetic_dataset(args.n, args.seed,
                                              with_confuser=not args.no_confuser)
    index = []
    for i, item in enumerate(items):
        name = f"img_{i:04d}.ppm"
        write_bytes_atomic(os.path.join(out_dir, name), encode_ppm(item.image))
        index.append({
            "file": name,
            "label": item.label,
            "confuser_class": item.confuser_class,
            "confuser_box": list(item.confuser_box) if item.confuser_box else None,
        })
    write_json_atomic(os.path.join(out_dir, "index.json"),
                      {"schema": SCHEMA, "seed": args.seed, "n": args.n,
                       "images": index})
    write_manifest(out_dir, "dataset", args, started)
    print(f"wrote {args.n} images and index.json -> {out_dir}")
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = _ensure_out_dir(args.out)
    image = load_image(args.image)
    model = _load_model(args.weights)
    config = _explain_config(args, _parse_target(args.target))
    result = explain(model, image, config)

    removal = 1.0 - result.upsampled
    write_bytes_atomic(os.path.join(out_dir, "mask.pgm"), encode_pgm(removal))
    write_bytes_atomic(os.path.join(out_dir, "mask.f64"),
                       encode_mask_f64(result.upsampled))
    write_bytes_atomic(os.path.join(out_dir, "perturbed.ppm"),
                       encode_ppm(result.perturbed))

    before = float(result.eval_before.probs[result.target])
    after = float(result.eval_after.probs[result.target])
    report = {
        "schema": SCHEMA,
        "mode": args.mode,
        "target": result.target,
        "seed": args.seed,
        "before_probs": result.eval_before.probs.tolist(),
        "after_probs": result.eval_after.probs.tolist(),
        "before_target_prob": before,
        "after_target_prob": after,
        "phi": phi(before, after) if before < 1.0 else None,
        "pixel_ratio": pixel_ratio(result.upsampled),
        "trace": result.trace.tolist(),
    }
    write_json_atomic(os.path.join(out_dir, "result.json"), report)
    write_manifest(out_dir, "explain", args, started,
                   results={"target": result.target, "phi": report["phi"],
                            "pixel_ratio": report["pixel_ratio"]})
    print(f"class {result.target}: prob {before:.4f} -> {after:.4f}, "
          f"phi {report['phi']:.3f}, pixel ratio {report['pixel_ratio']:.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = _ensure_out_dir(args.out)
    index_path = os.path.join(args.dataset, "index.json")
    try:
        with open(index_path, "rb") as handle:
            index = json.load(handle)
    except OSError as exc:
        raise CLIError(f"cannot read dataset index: {exc}") from None
    entries = index.get("images", [])
    if args.n < 1:
        raise CLIError("--n must be >= 1")
    if args.n > len(entries):
        raise CLIError(f"dataset has only {len(entries)} images, --n {args.n} requested")
    entries = entries[:args.n]
    images = [load_image(os.path.join(args.dataset, e["file"])) for e in entries]
    model = _load_model(args.weights)
    config = _explain_config(args, None)
    report = evaluate_batch(model, images, args.mode, config, base_seed=args.seed)

    payload = {"schema": SCHEMA}
    payload.update(report.to_dict())
    write_json_atomic(os.path.join(out_dir, "report.json"), payload)
    write_manifest(out_dir, "eval", args, started,
                   results={"n_failed": report.n_failed,
                            "n_images": len(report.per_image)})
    for row in report.per_image:
        if row.error is not None:
            print(f"image {row.index}: {row.error}", file=sys.stderr)
    if report.n_failed == len(report.per_image):
        print("all images failed", file=sys.stderr)
        return 1
    print(f"{args.mode}: phi_mean {report.phi_mean:.3f}, "
          f"pixel_ratio_mean {report.pixel_ratio_mean:.4f}, "
          f"improved {report.improved_fraction:.0%}, "
          f"failures {report.n_failed}/{len(report.per_image)}")
    return 0


def _corrupted(prim: tensor.Primitive) -> tensor.Primitive:
    def bad_vjp(inputs, cotangent):
        grads = prim.vjp(inputs, cotangent)
        return tuple(None if g is None else g * 1.01 for g in grads)
    return tensor.Primitive(prim.name, prim.forward, bad_vjp, prim.sample)


def _check_loss_mode(mode: str, seed: int, trials: int) -> float:
    """Worst relative error of the analytic mask gradient against central
    finite differences, over random small linear-model instances."""
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    weights = RegWeights(lambda1=0.7, lambda2=0.9, beta=2.0, gamma=0.4)
    blur_cfg = BlurConfig(sigma=1.5, kernel_size=3)
    for _ in range(trials):
        n = int(rng.integers(3, 6))
        side = 8
        model = models.ToyLinearModel(
            weights=rng.normal(scale=0.5, size=(n, side, side, 3)),
            bias=rng.normal(scale=0.1, size=n))
        image = rng.uniform(0.0, 1.0, size=(side, side, 3))
        mask = rng.uniform(0.2, 0.8, size=(3, 3))
        target = int(rng.integers(n))

        analytic = loss(mode, model, image, mask, target, weights=weights,
                        blur_cfg=blur_cfg).mask_gradient

        def total(m):
            return loss(mode, model, image, m, target, weights=weights,
                        blur_cfg=blur_cfg).total

        (fd,) = tensor.finite_difference_vjp(total, (mask,), 1.0)
        worst = max(worst, tensor.relative_error(analytic, fd))
    return worst


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.corrupt:
        if args.corrupt not in tensor.REGISTRY:
            raise CLIError(f"unknown primitive {args.corrupt!r}")
        tensor.REGISTRY[args.corrupt] = _corrupted(tensor.REGISTRY[args.corrupt])
    rows = []
    rng = np.random.Generator(np.random.Philox(args.seed))
    for name in sorted(tensor.REGISTRY):
        rows.append((name, tensor.check_primitive(
            name, rng, trials=args.trials)))
    for mode in MODES:
        rows.append((f"loss:{mode}", _check_loss_mode(mode, args.seed + 1, args.trials)))
    failed = False
    for name, err in rows:
        ok = err <= GRADCHECK_TOLERANCE
        failed = failed or not ok
        print(f"{name:<22} {err:12.3e}  {'ok' if ok else 'FAIL'}")
    print(f"worst {max(err for _, err in rows):.3e} "
          f"(tolerance {GRADCHECK_TOLERANCE:.0e})")
    return 1 if failed else 0


def cmd_consistency(args: argparse.Namespace) -> int:
    started = time.time()
    if args.trials < 2:
        raise CLIError("--trials must be >= 2")
    out_dir = _ensure_out_dir(args.out)
    image = load_image(args.image)
    model = _load_model(args.weights)
    base = _explain_config(args, _parse_target(args.target))
    masks = []
    seeds = list(range(args.seed, args.seed + args.trials))
    for t, seed in enumerate(seeds):
        result = explain(model, image, replace(base, seed=seed))
        masks.append(result.mask)
        write_bytes_atomic(os.path.join(out_dir, f"trial_{t:02d}.f64"),
                           encode_mask_f64(result.mask))
    score = consistency_score(masks)
    write_json_atomic(os.path.join(out_dir, "consistency.json"),
                      {"schema": SCHEMA, "mode": args.mode, "seeds": seeds,
                       "score": score})
    write_manifest(out_dir, "consistency", args, started, results={"score": score})
    print(f"{args.mode}: consistency {score:.4f} over {args.trials} trials")
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default="ftc")
    p.add_argument("--lambda1", type=float, default=1.7,
                   help="total-variation weight (default 1.7)")
    p.add_argument("--lambda2", type=float, default=3.0,
                   help="keep-everything L1 weight (default 3.0)")
    p.add_argument("--beta", type=float, default=2.0,
                   help="total-variation exponent (default 2)")
    p.add_argument("--gamma", type=float, default=0.3,
                   help="logit-preservation weight (default 0.3)")
    p.add_argument("--vector-ftc", action="store_true",
                   help="use the vector-norm reading of the non-target penalty")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--mask-size", type=int, default=None,
                   help="square low-resolution mask side (default: from image size)")
    p.add_argument("--sigma", type=float, default=None,
                   help="blur standard deviation (default: from image size)")
    p.add_argument("--kernel-size", type=int, default=None,
                   help="blur kernel size, odd (default: from image size)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="undesir",
        description="Find undesirable pixels of an image classifier by "
                    "learning a perturbation mask.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the reference CNN on synthetic data")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=400, help="training images (default 400)")
    p.add_argument("--epochs", type=int, default=24)
    p.add_argument("--lr", type=float, default=6e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dataset", help="export synthetic images as PPM + index")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-confuser", action="store_true",
                   help="omit the planted foreign patch")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("explain", help="learn a mask for one image")
    p.add_argument("--image", required=True, help="PPM (P6) or PGM (P5) input")
    p.add_argument("--weights", required=True, help="UNDW weight file")
    p.add_argument("--out", required=True)
    p.add_argument("--target", default="top1",
                   help="class index, or 'top1' for the model's prediction")
    p.add_argument("--seed", type=int, default=0)
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("eval", help="batch metrics over an exported dataset")
    p.add_argument("--dataset", required=True, help="directory with index.json")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every gradient rule")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("consistency",
                       help="rerun one explanation across seeds and score agreement")
    p.add_argument("--image", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target", default="top1")
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_consistency)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, models.WeightFormatError, models.TrainingDiverged,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
