"""Hand-crafted preprocessing pipeline: grayscale -> auto gamma -> Fourier high-pass.

The composed operator strips brightness, illumination and color from an RGB
image so that only structural content survives.  All operations are pure and
differentiable (torch), and also accept numpy arrays for convenience.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

# 0.3 * 2.303, the fixed numerator of the automated gamma exponent.
_GAMMA_NUMERATOR = 0.3 * 2.303


@dataclass(frozen=True)
class GrayWeights:
    """Per-channel grayscale coefficients, applied after dividing by 255."""

    r: float = 0.299
    g: float = 0.587
    b: float = 0.144

    def __post_init__(self):
        if self.r < 0 or self.g < 0 or self.b < 0:
            raise ValueError("grayscale weights must be non-negative")


@dataclass(frozen=True)
class FilterConfig:
    """Parameters of the gamma and high-pass stages."""

    sigma: float = 4.0
    mean_clamp_eps: float = 1e-3

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.mean_clamp_eps < 0.5:
            raise ValueError(
                f"mean_clamp_eps must lie in (0, 0.5), got {self.mean_clamp_eps}"
            )


def _as_torch(x):
    if isinstance(x, torch.Tensor):
        return x, False
    arr = np.asarray(x)
    dtype = torch.float64 if arr.dtype == np.float64 else torch.float32
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype), True


def _maybe_numpy(t: torch.Tensor, to_numpy: bool):
    return t.numpy() if to_numpy else t


def to_grayscale(img, weights: GrayWeights = GrayWeights()):
    """Convert an H x W x 3 image with values in [0, 255] to H x W x 1.

    Output is (r*R + g*G + b*B) / 255.  With the default weights the output
    range is [0, 1.03] because the coefficients sum to 1.03.
    """
    x, to_numpy = _as_torch(img)
    if x.ndim != 3 or x.shape[-1] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {tuple(x.shape)}")
    gray = (
        weights.r * x[..., 0] + weights.g * x[..., 1] + weights.b * x[..., 2]
    ) / 255.0
    return _maybe_numpy(gray.unsqueeze(-1), to_numpy)


def gamma_exponent(mean_gray, cfg: FilterConfig = FilterConfig()):
    """Brightness-adaptive gamma exponent -0.3 * 2.303 / ln(mean).

    The mean is clamped to [eps, 1 - eps] first, which makes the operation
    total and keeps the exponent strictly positive.
    """
    if isinstance(mean_gray, torch.Tensor):
        m = mean_gray.clamp(cfg.mean_clamp_eps, 1.0 - cfg.mean_clamp_eps)
        return -_GAMMA_NUMERATOR / torch.log(m)
    m = min(max(float(mean_gray), cfg.mean_clamp_eps), 1.0 - cfg.mean_clamp_eps)
    return -_GAMMA_NUMERATOR / np.log(m)


def _safe_pow(base: torch.Tensor, exponent: torch.Tensor) -> torch.Tensor:
    # Forward is exactly base ** exponent; the backward path sees a floored
    # base so the pow gradient stays finite at base == 0.
    floored = base.clamp_min(1e-6)
    out = floored.pow(exponent)
    return out + (base.pow(exponent) - out).detach()


def auto_gamma(gray, cfg: FilterConfig = FilterConfig()):
    """Apply automated gamma correction to a grayscale image.

    Values are clamped to [0, 1] before exponentiation (the grayscale weights
    may push values slightly above 1).
    """
    x, to_numpy = _as_torch(gray)
    base = x.clamp(0.0, 1.0)
    g = gamma_exponent(base.mean(), cfg)
    return _maybe_numpy(_safe_pow(base, g), to_numpy)


def gaussian_highpass_mask(d1: int, d2: int, sigma: float):
    """Centered Gaussian high-pass mask, 1 - exp(-r^2 / (2 sigma^2)).

    Exactly zero at the integer center index (d1 // 2, d2 // 2); values grow
    towards 1 with the distance from the center.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if d1 < 2 or d2 < 2:
        raise ValueError("mask dimensions must be at least 2")
    ii = np.arange(d1, dtype=np.float64)[:, None] - d1 // 2
    jj = np.arange(d2, dtype=np.float64)[None, :] - d2 // 2
    return 1.0 - np.exp(-(ii**2 + jj**2) / (2.0 * sigma**2))


def _highpass_2d(x: torch.Tensor, sigma: float) -> torch.Tensor:
    # x: (..., H, W).  Unnormalized forward FFT, 1/(H*W) inverse; the mask
    # multiplies the center-shifted spectrum; the real part is returned.
    d1, d2 = x.shape[-2], x.shape[-1]
    mask = torch.from_numpy(gaussian_highpass_mask(d1, d2, sigma)).to(
        torch.complex128 if x.dtype == torch.float64 else torch.complex64
    )
    spec = torch.fft.fftshift(torch.fft.fft2(x), dim=(-2, -1))
    out = torch.fft.ifft2(torch.fft.ifftshift(spec * mask, dim=(-2, -1)))
    return out.real


def highpass_filter(img, cfg: FilterConfig = FilterConfig()):
    """Fourier-domain Gaussian high-pass of an H x W x 1 image.

    Linear, and annihilates the DC component: constant images map to ~0.
    """
    x, to_numpy = _as_torch(img)
    if x.ndim != 3 or x.shape[-1] != 1:
        raise ValueError(f"expected an H x W x 1 image, got shape {tuple(x.shape)}")
    out = _highpass_2d(x[..., 0], cfg.sigma).unsqueeze(-1)
    return _maybe_numpy(out, to_numpy)


def psi(img, weights: GrayWeights = GrayWeights(), cfg: FilterConfig = FilterConfig()):
    """Full pipeline on an H x W x 3 RGB image in [0, 255]: grayscale,
    automated gamma correction, then Gaussian high-pass."""
    return highpass_filter(auto_gamma(to_grayscale(img, weights), cfg), cfg)


def psi_batch(
    x: torch.Tensor,
    weights: GrayWeights = GrayWeights(),
    cfg: FilterConfig = FilterConfig(),
) -> torch.Tensor:
    """Differentiable pipeline on a (B, 3, H, W) batch in [0, 255].

    Returns (B, 1, H, W).  The gamma exponent uses the per-image mean.
    """
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected a (B, 3, H, W) batch, got shape {tuple(x.shape)}")
    gray = (weights.r * x[:, 0] + weights.g * x[:, 1] + weights.b * x[:, 2]) / 255.0
    base = gray.clamp(0.0, 1.0)
    g = gamma_exponent(base.mean(dim=(1, 2), keepdim=True), cfg)
    corrected = _safe_pow(base, g)
    return _highpass_2d(corrected, cfg.sigma).unsqueeze(1)
