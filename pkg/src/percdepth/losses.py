"""Empirical risks for the dual-critic adversarial training.

Critic risk with one-sided gradient penalty, adversarial generator risk, and
the gamma-blended perceptual reconstruction risk that mixes critic-feature
similarity with filtered-image pixel similarity.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import torch

from .filters import FilterConfig, GrayWeights, psi_batch


@dataclass
class LossConfig:
    p: float = 100.0
    lambda_rec: float = 10.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("gradient penalty weight must be >= 0")
        if self.lambda_rec < 0:
            raise ValueError("lambda_rec must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass
class BatchPair:
    """Independently drawn RGB and depth batches plus fresh uniform draws."""

    x: torch.Tensor  # (b, 3, H, W) in model space [-1, 1]
    y: torch.Tensor  # (b, 1, H, W) in model space [-1, 1]
    eps: torch.Tensor  # (b,) uniform in [0, 1]


@contextmanager
def frozen(*nets):
    """Temporarily exclude network parameters from gradient computation.

    Used around the generator step so that no gradient accumulates into the
    critic weights, and symmetrically around the critic step.
    """
    saved = [(p, p.requires_grad) for net in nets for p in net.parameters()]
    try:
        for p, _ in saved:
            p.requires_grad_(False)
        yield
    finally:
        for p, had_grad in saved:
            p.requires_grad_(had_grad)


def patch_score(critic, x: torch.Tensor) -> torch.Tensor:
    """Reduce the critic's patch map to one scalar score per sample."""
    scores = critic(x)
    return scores.mean(dim=tuple(range(1, scores.ndim)))


def mae(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).abs().mean()


def interpolate(real: torch.Tensor, fake: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Per-sample convex combination eps * fake + (1 - eps) * real."""
    if real.shape != fake.shape:
        raise ValueError(f"shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    e = eps.reshape(-1, *([1] * (real.ndim - 1))).to(real.dtype)
    return e * fake + (1.0 - e) * real


def gradient_penalty(critic, interp: torch.Tensor, p: float) -> torch.Tensor:
    """One-sided hinge on the per-sample input-gradient norm at ``interp``."""
    interp = interp.detach().requires_grad_(True)
    scores = patch_score(critic, interp)
    (grads,) = torch.autograd.grad(
        scores.sum(), interp, create_graph=True, retain_graph=True
    )
    if not torch.isfinite(grads).all():
        raise FloatingPointError("non-finite critic input gradient in penalty term")
    norms = grads.reshape(grads.shape[0], -1).norm(2, dim=1)
    return p * torch.relu(norms - 1.0).pow(2).mean()


def critic_risk_parts(critic, gen, x_batch, y_batch, eps, p) -> dict[str, torch.Tensor]:
    """Critic risk split into its Wasserstein estimate and the penalty.

    The generator output is treated as a constant with respect to the critic
    weights.
    """
    fake = gen(x_batch).detach()
    wasserstein = (patch_score(critic, fake) - patch_score(critic, y_batch)).mean()
    penalty = gradient_penalty(critic, interpolate(y_batch, fake, eps), p)
    return {"wasserstein": wasserstein, "penalty": penalty, "total": wasserstein + penalty}


def critic_risk(critic, gen, x_batch, y_batch, eps, p) -> torch.Tensor:
    return critic_risk_parts(critic, gen, x_batch, y_batch, eps, p)["total"]


def adversarial_risk(critic, gen, x_batch) -> torch.Tensor:
    """Negative mean critic score of generated samples."""
    return -patch_score(critic, gen(x_batch)).mean()


def _to_rgb_255(x: torch.Tensor) -> torch.Tensor:
    # Model space [-1, 1] back to raw RGB [0, 255]; the filter pipeline is
    # defined on raw images.
    return (x + 1.0) * 127.5


def perceptual_reconstruction_risk(
    gen_y,
    gen_x,
    critic_y,
    critic_x,
    x_batch: torch.Tensor,
    y_batch: torch.Tensor,
    gamma: float,
    filter_cfg: FilterConfig = FilterConfig(),
    gray_weights: GrayWeights = GrayWeights(),
) -> torch.Tensor:
    """Gamma blend of critic-feature cycle error and filtered pixel cycle error.

    gamma * [MAE(phi_x(GX(GY(x))), phi_x(x)) + MAE(phi_y(GY(GX(y))), phi_y(y))]
    + (1 - gamma) * [MAE(psi(GX(GY(x))), psi(x)) + MAE(GY(GX(y)), y)]
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    x_cycle = gen_x(gen_y(x_batch))
    y_cycle = gen_y(gen_x(y_batch))

    risk = x_batch.new_zeros(())
    if gamma > 0.0:
        feat = mae(critic_x.features(x_cycle), critic_x.features(x_batch)) + mae(
            critic_y.features(y_cycle), critic_y.features(y_batch)
        )
        risk = risk + gamma * feat
    if gamma < 1.0:
        pix = mae(
            psi_batch(_to_rgb_255(x_cycle), gray_weights, filter_cfg),
            psi_batch(_to_rgb_255(x_batch), gray_weights, filter_cfg),
        ) + mae(y_cycle, y_batch)
        risk = risk + (1.0 - gamma) * pix
    return risk


def generator_objective(
    gen_y,
    gen_x,
    critic_y,
    critic_x,
    batch: BatchPair,
    cfg: LossConfig,
    filter_cfg: FilterConfig = FilterConfig(),
) -> dict[str, torch.Tensor]:
    """Both generators' composite objectives, summed for a single backward.

    The adversarial terms are generator-specific, so the gradient of ``total``
    with respect to each generator equals its own R_adv + lambda_rec * R_rec.
    """
    r_adv_y = adversarial_risk(critic_y, gen_y, batch.x)
    r_adv_x = adversarial_risk(critic_x, gen_x, batch.y)
    r_rec = perceptual_reconstruction_risk(
        gen_y, gen_x, critic_y, critic_x, batch.x, batch.y, cfg.gamma, filter_cfg
    )
    total = r_adv_y + r_adv_x + cfg.lambda_rec * r_rec
    return {"r_adv_y": r_adv_y, "r_adv_x": r_adv_x, "r_rec": r_rec, "total": total}
