"""Data handling: physical/model-space scaling, augmentation, unpaired pools,
file formats and the synthetic shaded-heightmap dataset.

RGB images are stored as 8-bit PNG, depth maps as PFM (lossless float32).
Training pools are unpaired by construction; pixel-aligned pairs exist only in
the separate evaluation store.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

VALID_UNITS = ("micrometer", "unitless", "meter")


@dataclass(frozen=True)
class ScalingSpec:
    """Affine map between physical units and model space [-1, 1]."""

    physical_min: float
    physical_max: float
    unit: str = "unitless"
    background_value: float | None = None
    center_mode: str = "none"  # "none" | "median_subtract"

    def __post_init__(self):
        if self.physical_min >= self.physical_max:
            raise ValueError("physical_min must be smaller than physical_max")
        if self.unit not in VALID_UNITS:
            raise ValueError(f"unknown unit {self.unit!r}")
        if self.center_mode not in ("none", "median_subtract"):
            raise ValueError(f"unknown center_mode {self.center_mode!r}")

    @property
    def mid(self) -> float:
        return (self.physical_min + self.physical_max) / 2.0

    @property
    def half_range(self) -> float:
        return (self.physical_max - self.physical_min) / 2.0

    def to_dict(self) -> dict:
        return {
            "physical_min": self.physical_min,
            "physical_max": self.physical_max,
            "unit": self.unit,
            "background_value": self.background_value,
            "center_mode": self.center_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingSpec":
        return cls(**d)


# Per-dataset conventions: RGB is always [0, 255] -> [-1, 1]; depth ranges
# differ per application.
RGB_SCALING = ScalingSpec(0.0, 255.0, "unitless")
DEPTH_SCALING_PRESETS = {
    "surface": ScalingSpec(-5.0, 5.0, "micrometer"),
    "face": ScalingSpec(0.0, 1.0, "unitless"),
    "body": ScalingSpec(
        -0.4725, 0.4725, "meter", background_value=-0.4725, center_mode="median_subtract"
    ),
    "synth": ScalingSpec(-5.0, 5.0, "micrometer"),
}


def scale_to_model(x, spec: ScalingSpec):
    """Physical values to model space, clipped to [-1, 1].

    With center_mode="median_subtract" the per-image median is removed first.
    """
    arr = np.asarray(x, dtype=np.float32)
    if spec.center_mode == "median_subtract":
        arr = arr - np.median(arr)
    out = (arr - np.float32(spec.mid)) / np.float32(spec.half_range)
    return np.clip(out, -1.0, 1.0)


def unscale(y, spec: ScalingSpec):
    """Exact affine inverse of ``scale_to_model`` (the subtracted median is
    not restored; centered datasets are evaluated in centered units)."""
    arr = np.asarray(y, dtype=np.float32)
    return arr * np.float32(spec.half_range) + np.float32(spec.mid)


@dataclass(frozen=True)
class AugmentSpec:
    """Enabled augmentation ops and their parameters."""

    ops: tuple[str, ...] = ()
    crop_size: int = 64
    gamma_range: tuple[float, float] = (0.7, 1.4)
    blur_sigma_range: tuple[float, float] = (0.5, 1.5)

    _KNOWN = (
        "random_crop",
        "horizontal_flip",
        "vertical_flip",
        "gamma_jitter",
        "histogram_equalization",
        "gaussian_blur",
        "resize_pad",
    )

    def __post_init__(self):
        unknown = set(self.ops) - set(self._KNOWN)
        if unknown:
            raise ValueError(f"unknown augmentation ops: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "ops": list(self.ops),
            "crop_size": self.crop_size,
            "gamma_range": list(self.gamma_range),
            "blur_sigma_range": list(self.blur_sigma_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentSpec":
        return cls(
            ops=tuple(d.get("ops", ())),
            crop_size=d.get("crop_size", 64),
            gamma_range=tuple(d.get("gamma_range", (0.7, 1.4))),
            blur_sigma_range=tuple(d.get("blur_sigma_range", (0.5, 1.5))),
        )


def _equalize_luminance(img: np.ndarray) -> np.ndarray:
    lum = img.mean(axis=-1)
    flat = lum.reshape(-1)
    order = np.argsort(flat, kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(flat.size)
    target = ranks.astype(np.float32) / max(flat.size - 1, 1) * 255.0
    gain = np.ones_like(flat)
    nonzero = flat > 1e-6
    gain[nonzero] = target[nonzero] / flat[nonzero]
    return np.clip(img * gain.reshape(lum.shape)[..., None], 0.0, 255.0)


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float32)
    kernel = np.exp(-(t**2) / (2.0 * sigma**2))
    kernel /= kernel.sum()
    padded = np.pad(img, ((radius, radius), (radius, radius), (0, 0)), mode="reflect")
    out = np.apply_along_axis(lambda v: np.convolve(v, kernel, mode="valid"), 0, padded)
    out = np.apply_along_axis(lambda v: np.convolve(v, kernel, mode="valid"), 1, out)
    return out.astype(np.float32)


def augment(img: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply the enabled ops in a fixed order; deterministic under a fixed rng.

    ``img`` is H x W x C; gamma jitter and histogram equalization only touch
    3-channel (RGB, [0, 255]) inputs.
    """
    out = np.asarray(img, dtype=np.float32)
    for op in spec._KNOWN:
        if op not in spec.ops:
            continue
        if op == "random_crop":
            h, w = out.shape[:2]
            c = spec.crop_size
            if c > h or c > w:
                raise ValueError(f"crop size {c} exceeds image size {h}x{w}")
            top = int(rng.integers(0, h - c + 1))
            left = int(rng.integers(0, w - c + 1))
            out = out[top : top + c, left : left + c]
        elif op == "horizontal_flip":
            if rng.random() < 0.5:
                out = out[:, ::-1]
        elif op == "vertical_flip":
            if rng.random() < 0.5:
                out = out[::-1, :]
        elif op == "gamma_jitter" and out.shape[-1] == 3:
            lo, hi = spec.gamma_range
            g = float(rng.uniform(lo, hi))
            out = np.clip(out / 255.0, 0.0, 1.0) ** g * 255.0
        elif op == "histogram_equalization" and out.shape[-1] == 3:
            out = _equalize_luminance(out)
        elif op == "gaussian_blur":
            lo, hi = spec.blur_sigma_range
            out = _gaussian_blur(out, float(rng.uniform(lo, hi)))
        elif op == "resize_pad":
            h, w = out.shape[:2]
            c = spec.crop_size
            if h < c or w < c:
                pad_h, pad_w = max(c - h, 0), max(c - w, 0)
                out = np.pad(
                    out,
                    ((pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2), (0, 0)),
                )
    return np.ascontiguousarray(out, dtype=np.float32)


@dataclass
class UnpairedPools:
    """Two independent sample pools in model space; never index-aligned."""

    rgb_items: list  # each (H, W, 3) float32 in [-1, 1]
    depth_items: list  # each (H, W, 1) float32 in [-1, 1]

    def __post_init__(self):
        if not self.rgb_items or not self.depth_items:
            raise ValueError("both pools must be nonempty")


def sample_batch(pools: UnpairedPools, b: int, rng: np.random.Generator):
    """Draw b RGB and b depth samples independently, uniformly with
    replacement, plus fresh uniform eps draws.  Returns a losses.BatchPair."""
    import torch

    from .losses import BatchPair

    rgb_idx = rng.integers(0, len(pools.rgb_items), size=b)
    depth_idx = rng.integers(0, len(pools.depth_items), size=b)
    eps = rng.random(b).astype(np.float32)
    x = np.stack([pools.rgb_items[i].transpose(2, 0, 1) for i in rgb_idx])
    y = np.stack([pools.depth_items[i].transpose(2, 0, 1) for i in depth_idx])
    return BatchPair(
        x=torch.from_numpy(x), y=torch.from_numpy(y), eps=torch.from_numpy(eps)
    )


# ---------------------------------------------------------------------------
# Synthetic shaded-heightmap dataset


_HEIGHT_SKEW = 0.4


def _heightmap(size: int, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    """Band-limited random surface: white noise low-passed in Fourier domain,
    mildly skewed (peaks sharper than valleys, as on machined surfaces) and
    rescaled to +-amplitude.

    The skew matters beyond realism: a sign-symmetric height ensemble leaves
    an inverted surface statistically indistinguishable from a correct one,
    so nothing in unpaired training could pin the sign of the depth axis.
    """
    noise = rng.standard_normal((size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    cutoff = 4.0 / size
    envelope = np.exp(-(fx**2 + fy**2) / (2.0 * cutoff**2))
    smooth = np.fft.ifft2(np.fft.fft2(noise) * envelope).real
    std = smooth.std()
    if std < 1e-12:
        return np.zeros((size, size), dtype=np.float32)
    s = smooth / std
    skewed = s + _HEIGHT_SKEW * s**2
    skewed -= skewed.mean()
    return (skewed / np.abs(skewed).max() * amplitude).astype(np.float32)


def lambert_shade(
    height: np.ndarray,
    light: np.ndarray,
    tint: np.ndarray,
    brightness: float,
    slope_scale: float = 8.0,
    ambient: float = 0.2,
) -> np.ndarray:
    """Lambertian rendering of a heightmap; the per-pixel oracle for tests.

    Surface normal is ([-dh/dx, -dh/dy, 1] * slope on xy) normalized; shade is
    the clamped dot product with the unit light direction.
    """
    dhdy, dhdx = np.gradient(height.astype(np.float64))
    nx, ny, nz = -slope_scale * dhdx, -slope_scale * dhdy, np.ones_like(height, dtype=np.float64)
    norm = np.sqrt(nx**2 + ny**2 + nz**2)
    shade = np.clip((nx * light[0] + ny * light[1] + nz * light[2]) / norm, 0.0, 1.0)
    intensity = (ambient + (1.0 - ambient) * shade) * brightness
    rgb = intensity[..., None] * tint[None, None, :] * 255.0
    return np.clip(rgb, 0.0, 255.0).astype(np.float32)


def _random_light(rng: np.random.Generator) -> np.ndarray:
    # Narrow upper-hemisphere cone (zenith 25-45 degrees, azimuth +-30
    # degrees), mimicking a fixed measurement setup.  Consistent illumination
    # keeps shading-to-depth well posed: under arbitrary azimuths a
    # sign-flipped surface explains the image equally well.
    theta = rng.uniform(np.deg2rad(25.0), np.deg2rad(45.0))
    phi = rng.uniform(-np.deg2rad(30.0), np.deg2rad(30.0))
    light = np.array(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
    )
    return light / np.linalg.norm(light)


# Fraction of the rendered intensity carried by absolute height (confocal
# style response) versus Lambertian slope shading.
_HEIGHT_WEIGHT = 0.92


def _render(height: np.ndarray, rng: np.random.Generator, amplitude: float = 4.0) -> np.ndarray:
    light = _random_light(rng)
    tint = rng.uniform(0.9, 1.0, size=3)
    brightness = float(rng.uniform(0.9, 1.0))
    shade = lambert_shade(height, light, tint, brightness, slope_scale=1.5)
    height_norm = np.clip((height / amplitude + 1.0) / 2.0, 0.0, 1.0)
    height_rgb = height_norm[..., None] * tint[None, None, :] * brightness * 255.0
    mix = (1.0 - _HEIGHT_WEIGHT) * shade + _HEIGHT_WEIGHT * height_rgb
    return np.clip(mix, 0.0, 255.0).astype(np.float32)


@dataclass
class SynthDataset:
    pools: UnpairedPools
    eval_pairs: list  # list of (rgb [0,255] HxWx3, depth physical HxWx1)
    rgb_scaling: ScalingSpec
    depth_scaling: ScalingSpec
    augment_spec: AugmentSpec = field(default_factory=AugmentSpec)


def synth_dataset(
    n_train_rgb: int,
    n_train_depth: int,
    n_eval_pairs: int,
    size: int = 64,
    seed: int = 0,
    amplitude: float = 4.0,
) -> SynthDataset:
    """Procedural dataset: smooth random heightmaps as depth, Lambertian
    renders with randomized light/tint/brightness as RGB.

    Training pools come from disjoint heightmap populations, so no pairing
    exists; evaluation pairs are pixel aligned.
    """
    if min(n_train_rgb, n_train_depth, n_eval_pairs) < 1:
        raise ValueError("all sample counts must be >= 1")
    rng = np.random.default_rng(seed)
    depth_spec = DEPTH_SCALING_PRESETS["synth"]

    rgb_items = []
    for _ in range(n_train_rgb):
        h = _heightmap(size, rng, amplitude)
        rgb_items.append(scale_to_model(_render(h, rng, amplitude), RGB_SCALING))
    depth_items = [
        scale_to_model(_heightmap(size, rng, amplitude)[..., None], depth_spec)
        for _ in range(n_train_depth)
    ]
    eval_pairs = []
    for _ in range(n_eval_pairs):
        h = _heightmap(size, rng, amplitude)
        eval_pairs.append((_render(h, rng, amplitude), h[..., None].copy()))

    return SynthDataset(
        pools=UnpairedPools(rgb_items, depth_items),
        eval_pairs=eval_pairs,
        rgb_scaling=RGB_SCALING,
        depth_scaling=depth_spec,
    )


# ---------------------------------------------------------------------------
# File formats


class FileFormatError(ValueError):
    pass


def save_pfm(path, data: np.ndarray) -> None:
    """Write a single-channel float map as grayscale PFM (little endian,
    bottom-up row order)."""
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    if arr.ndim != 2:
        raise ValueError(f"expected an H x W (x1) depth map, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(arr[::-1].tobytes())


def load_pfm(path) -> np.ndarray:
    """Read a grayscale PFM file back as H x W x 1 float32."""
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if len(parts) < 4:
        raise FileFormatError(f"{path}: truncated PFM header ({len(buf)} bytes)")
    magic, dims, scale, payload = parts
    if magic != b"Pf":
        raise FileFormatError(f"{path}: bad PFM magic {magic!r} (grayscale 'Pf' expected)")
    try:
        w, h = (int(v) for v in dims.split())
        scale_val = float(scale)
    except ValueError as exc:
        raise FileFormatError(f"{path}: malformed PFM header: {exc}") from exc
    expected = w * h * 4
    if len(payload) < expected:
        offset = len(buf) - len(payload)
        raise FileFormatError(
            f"{path}: truncated PFM payload at offset {offset + len(payload)}, "
            f"expected {expected} bytes after offset {offset}"
        )
    dtype = "<f4" if scale_val < 0 else ">f4"
    arr = np.frombuffer(payload[:expected], dtype=dtype).reshape(h, w)
    return np.ascontiguousarray(arr[::-1].astype(np.float32))[..., None]


def save_png(path, rgb: np.ndarray) -> None:
    """Write an H x W x 3 array in [0, 255] as 8-bit PNG."""
    arr = np.clip(np.round(np.asarray(rgb)), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read a PNG back as H x W x 3 float32 in [0, 255]."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, SyntaxError) as exc:
        raise FileFormatError(f"{path}: unreadable PNG: {exc}") from exc


# ---------------------------------------------------------------------------
# On-disk dataset layout


def write_dataset(root, ds: SynthDataset) -> None:
    """Write the pool/eval layout: rgb/*.png, depth/*.pfm, eval/{rgb,depth}/*
    with matching stems, plus the dataset.json sidecar."""
    root = Path(root)
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    (root / "eval" / "rgb").mkdir(parents=True, exist_ok=True)
    (root / "eval" / "depth").mkdir(parents=True, exist_ok=True)
    for i, item in enumerate(ds.pools.rgb_items):
        save_png(root / "rgb" / f"{i:05d}.png", unscale(item, ds.rgb_scaling))
    for i, item in enumerate(ds.pools.depth_items):
        save_pfm(root / "depth" / f"{i:05d}.pfm", unscale(item, ds.depth_scaling))
    for i, (rgb, depth) in enumerate(ds.eval_pairs):
        save_png(root / "eval" / "rgb" / f"{i:05d}.png", rgb)
        save_pfm(root / "eval" / "depth" / f"{i:05d}.pfm", depth)
    sidecar = {
        "rgb_scaling": ds.rgb_scaling.to_dict(),
        "depth_scaling": ds.depth_scaling.to_dict(),
        "augment": ds.augment_spec.to_dict(),
    }
    (root / "dataset.json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_dataset(root) -> SynthDataset:
    """Load a dataset tree written by ``write_dataset``."""
    root = Path(root)
    sidecar = json.loads((root / "dataset.json").read_text())
    rgb_spec = ScalingSpec.from_dict(sidecar["rgb_scaling"])
    depth_spec = ScalingSpec.from_dict(sidecar["depth_scaling"])
    rgb_items = [
        scale_to_model(load_png(p), rgb_spec) for p in sorted((root / "rgb").glob("*.png"))
    ]
    depth_items = [
        scale_to_model(load_pfm(p), depth_spec)
        for p in sorted((root / "depth").glob("*.pfm"))
    ]
    eval_pairs = []
    eval_rgb = root / "eval" / "rgb"
    if eval_rgb.is_dir():
        for p in sorted(eval_rgb.glob("*.png")):
            depth_path = root / "eval" / "depth" / (p.stem + ".pfm")
            eval_pairs.append((load_png(p), load_pfm(depth_path)))
    return SynthDataset(
        pools=UnpairedPools(rgb_items, depth_items),
        eval_pairs=eval_pairs,
        rgb_scaling=rgb_spec,
        depth_scaling=depth_spec,
        augment_spec=AugmentSpec.from_dict(sidecar.get("augment", {})),
    )
