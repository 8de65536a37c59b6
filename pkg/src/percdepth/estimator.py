"""Scikit-learn style front end around the trainer.

``DepthEstimator.fit`` consumes an unpaired dataset (a directory tree or an
in-memory dataset object) and ``predict`` maps RGB images to depth maps in
physical units.  Hyperparameters follow the get_params/set_params protocol so
the estimator composes with the usual model-selection tooling.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import DEPTH_SCALING_PRESETS, SynthDataset, load_dataset
from .networks import NetScale
from .training import TrainConfig, Trainer, infer


class DepthEstimator(BaseEstimator):
    """Unsupervised RGB-to-depth estimator trained on unpaired pools."""

    def __init__(
        self,
        n_G: int = 10_000,
        n_f_initial: int = 24,
        n_f_halve_at: int = 1_000,
        b: int = 8,
        p: float = 100.0,
        alpha_f: float = 5e-5,
        alpha_G: float = 1e-4,
        lambda_rec: float = 10.0,
        sigma: float = 4.0,
        seed: int = 0,
        width_multiplier: float = 1.0,
        input_size: int = 256,
        checkpoint_every: int = 500,
        out_dir: str | None = None,
        deterministic: bool = False,
    ):
        self.n_G = n_G
        self.n_f_initial = n_f_initial
        self.n_f_halve_at = n_f_halve_at
        self.b = b
        self.p = p
        self.alpha_f = alpha_f
        self.alpha_G = alpha_G
        self.lambda_rec = lambda_rec
        self.sigma = sigma
        self.seed = seed
        self.width_multiplier = width_multiplier
        self.input_size = input_size
        self.checkpoint_every = checkpoint_every
        self.out_dir = out_dir
        self.deterministic = deterministic

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            n_G=self.n_G,
            n_f_initial=self.n_f_initial,
            n_f_halve_at=self.n_f_halve_at,
            b=self.b,
            p=self.p,
            alpha_f=self.alpha_f,
            alpha_G=self.alpha_G,
            lambda_rec=self.lambda_rec,
            sigma=self.sigma,
            seed=self.seed,
            net_scale=NetScale(self.width_multiplier, self.input_size),
            checkpoint_every=self.checkpoint_every,
        )

    def fit(self, X, y=None):
        """Train on an unpaired dataset.

        ``X`` is either a dataset root directory (with ``rgb/``, ``depth/``
        and ``dataset.json``) or a ``SynthDataset``.  ``y`` is ignored; the
        method exists for pipeline compatibility.
        """
        if isinstance(X, (str, Path)):
            dataset = load_dataset(X)
        elif isinstance(X, SynthDataset):
            dataset = X
        else:
            raise TypeError(
                "fit expects a dataset directory or a SynthDataset, "
                f"got {type(X).__name__}"
            )
        out_dir = self.out_dir or tempfile.mkdtemp(prefix="percdepth-")
        trainer = Trainer(
            self._train_config(), dataset.pools, out_dir, deterministic=self.deterministic
        )
        self.checkpoint_path_ = trainer.run()
        self.generator_ = trainer.gen_y.eval()
        self.depth_scaling_ = dataset.depth_scaling
        return self

    def predict(self, X):
        """Map RGB images ([0, 255], H x W x 3) to physical depth maps.

        Accepts a single image or a sequence; returns the matching structure.
        """
        check_is_fitted(self, "generator_")
        single = isinstance(X, np.ndarray) and X.ndim == 3
        images = [X] if single else list(X)
        preds = [infer(self.generator_, img, self.depth_scaling_) for img in images]
        return preds[0] if single else preds


def preset_depth_scaling(preset: str):
    if preset not in DEPTH_SCALING_PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    return DEPTH_SCALING_PRESETS[preset]
