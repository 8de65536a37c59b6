"""RMSE / MAE evaluation on the original depth scale over registered pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import ScalingSpec
from .training import infer


@dataclass
class EvalReport:
    rmse_per_image: list[float]
    mae_per_image: list[float]
    unit: str

    @property
    def n_images(self) -> int:
        return len(self.rmse_per_image)

    @property
    def rmse_mean(self) -> float:
        return float(np.mean(self.rmse_per_image))

    @property
    def rmse_std(self) -> float:
        # Population standard deviation, across images.
        return float(np.std(self.rmse_per_image))

    @property
    def mae_mean(self) -> float:
        return float(np.mean(self.mae_per_image))

    @property
    def mae_std(self) -> float:
        return float(np.std(self.mae_per_image))

    def summary(self) -> str:
        return (
            f"n={self.n_images}  "
            f"RMSE {self.rmse_mean:.4f} +- {self.rmse_std:.4f} {self.unit} (std across images)  "
            f"MAE {self.mae_mean:.4f} +- {self.mae_std:.4f} {self.unit}"
        )

    def to_csv(self) -> str:
        lines = ["image,rmse,mae"]
        for i, (r, m) in enumerate(zip(self.rmse_per_image, self.mae_per_image)):
            lines.append(f"{i},{r:.9e},{m:.9e}")
        lines.append(f"mean,{self.rmse_mean:.9e},{self.mae_mean:.9e}")
        lines.append(f"std,{self.rmse_std:.9e},{self.mae_std:.9e}")
        return "\n".join(lines) + "\n"


def rmse(pred: np.ndarray, gt: np.ndarray) -> float:
    """Root of the mean squared per-pixel difference."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(math.sqrt(np.mean((pred - gt) ** 2)))


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute per-pixel difference."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.mean(np.abs(pred - gt)))


def _metrics(pred, gt, mask_background, background_value):
    if mask_background and background_value is not None:
        keep = np.asarray(gt) != background_value
        if not keep.any():
            raise ValueError("background mask removed every pixel")
        pred, gt = np.asarray(pred)[keep], np.asarray(gt)[keep]
    return rmse(pred, gt), mae(pred, gt)


def evaluate(
    gen_y,
    eval_pairs: list,
    spec: ScalingSpec,
    mask_background: bool = False,
) -> EvalReport:
    """Run inference over registered (rgb, depth) pairs and report per-image
    metrics in physical units."""
    rmses, maes = [], []
    for rgb, gt in eval_pairs:
        pred = infer(gen_y, rgb, spec)
        r, m = _metrics(pred, gt, mask_background, spec.background_value)
        rmses.append(r)
        maes.append(m)
    return EvalReport(rmses, maes, spec.unit)


def constant_median_baseline(eval_pairs: list) -> EvalReport:
    """Yardstick predictor: the median depth of the whole evaluation set,
    predicted everywhere."""
    median = float(np.median(np.concatenate([gt.reshape(-1) for _, gt in eval_pairs])))
    rmses, maes = [], []
    for _, gt in eval_pairs:
        pred = np.full_like(gt, median)
        rmses.append(rmse(pred, gt))
        maes.append(mae(pred, gt))
    return EvalReport(rmses, maes, "same-as-input")
