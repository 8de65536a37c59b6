"""Alternating critic/generator optimization.

Per outer iteration k: n_f critic iterations (fresh batches and fresh
interpolation draws each time, both transfer directions), then one generator
update; the reconstruction blend gamma ramps linearly with k and the critic
iteration count is halved once after a fixed number of generator updates.
Optimization uses momentum-free, bias-corrected Adam (beta1=0, beta2=0.9).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import RGB_SCALING, ScalingSpec, UnpairedPools, sample_batch, scale_to_model, unscale
from .filters import FilterConfig
from .losses import LossConfig, critic_risk_parts, frozen, generator_objective
from .networks import NetScale, build_critic, build_generator

ADAM_BETA1 = 0.0
ADAM_BETA2 = 0.9
ADAM_EPS = 1e-8

METRICS_COLUMNS = [
    "step",
    "r_cri_Y",
    "r_cri_X",
    "r_adv_Y",
    "r_adv_X",
    "r_rec",
    "gamma",
    "n_f",
    "gp_Y",
    "gp_X",
]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    n_G: int = 10_000
    n_f_initial: int = 24
    n_f_halve_at: int = 1_000
    b: int = 8
    p: float = 100.0
    alpha_f: float = 5e-5
    alpha_G: float = 1e-4
    lambda_rec: float = 10.0
    sigma: float = 4.0
    seed: int = 0
    net_scale: NetScale = field(default_factory=NetScale)
    checkpoint_every: int = 500

    def __post_init__(self):
        if isinstance(self.net_scale, dict):
            self.net_scale = NetScale(**self.net_scale)
        for name in ("n_G", "n_f_initial", "n_f_halve_at", "b", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("p", "alpha_f", "alpha_G", "lambda_rec", "sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["net_scale"] = {
            "width_multiplier": self.net_scale.width_multiplier,
            "input_size": self.net_scale.input_size,
        }
        return d


class AdamState:
    """Per-parameter first/second moment buffers and a shared step counter."""

    def __init__(self, params: list[torch.Tensor]):
        self.m = [torch.zeros_like(p) for p in params]
        self.v = [torch.zeros_like(p) for p in params]
        self.t = 0

    def state_dict(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t}

    def load_state_dict(self, state: dict) -> None:
        self.m = [t.clone() for t in state["m"]]
        self.v = [t.clone() for t in state["v"]]
        self.t = int(state["t"])


@torch.no_grad()
def adam_update(
    params: list[torch.Tensor],
    grads: list[torch.Tensor],
    state: AdamState,
    alpha: float,
) -> None:
    """Bias-corrected Adam step (beta1=0 makes it momentum-free); updates
    parameters and state in place."""
    state.t += 1
    c1 = 1.0 - ADAM_BETA1**state.t
    c2 = 1.0 - ADAM_BETA2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m.mul_(ADAM_BETA1).add_(g, alpha=1.0 - ADAM_BETA1)
        v.mul_(ADAM_BETA2).addcmul_(g, g, value=1.0 - ADAM_BETA2)
        p.sub_(alpha * (m / c1) / ((v / c2).sqrt() + ADAM_EPS))


def gamma_schedule(k: int, n_G: int) -> float:
    """Reconstruction blend after completing iteration k: exactly k / n_G."""
    return k / n_G


def nf_schedule(k: int, cfg: TrainConfig) -> int:
    """Critic iterations for outer iteration k; halved once after the
    configured number of generator updates."""
    if k <= cfg.n_f_halve_at:
        return cfg.n_f_initial
    return max(1, cfg.n_f_initial // 2)


def _format_row(values: list) -> str:
    out = []
    for v in values:
        out.append(str(v) if isinstance(v, int) else format(float(v), ".9e"))
    return ",".join(out)


class Trainer:
    """Owns the four networks, their optimizer states and the RNG streams."""

    def __init__(
        self,
        cfg: TrainConfig,
        pools: UnpairedPools,
        out_dir,
        deterministic: bool = False,
    ):
        self.cfg = cfg
        self.pools = pools
        self.out_dir = Path(out_dir)
        self.deterministic = deterministic
        self.filter_cfg = FilterConfig(sigma=cfg.sigma)

        if deterministic:
            torch.use_deterministic_algorithms(True)
            torch.set_num_threads(1)
        torch.manual_seed(cfg.seed)
        self.rng = np.random.default_rng(cfg.seed)

        self.gen_y = build_generator(cfg.net_scale, out_channels=1)
        self.gen_x = build_generator(cfg.net_scale, out_channels=3)
        self.critic_y = build_critic(cfg.net_scale, in_channels=1)
        self.critic_x = build_critic(cfg.net_scale, in_channels=3)
        self.nets = {
            "generator_Y": self.gen_y,
            "generator_X": self.gen_x,
            "critic_Y": self.critic_y,
            "critic_X": self.critic_x,
        }
        self.adam = {
            role: AdamState(list(net.parameters())) for role, net in self.nets.items()
        }
        self.step = 0
        self.gamma = 0.0

    # -- persistence --------------------------------------------------------

    def _checkpoint_path(self, k: int) -> Path:
        return self.out_dir / "checkpoints" / f"step_{k}.pdgc"

    def save_checkpoint(self, k: int) -> Path:
        path = self._checkpoint_path(k)
        path.parent.mkdir(parents=True, exist_ok=True)
        ckpt.save_networks(path, self.nets)
        torch.save(
            {
                "step": k,
                "gamma": self.gamma,
                "adam": {role: st.state_dict() for role, st in self.adam.items()},
                "torch_rng": torch.get_rng_state(),
                "numpy_rng": self.rng.bit_generator.state,
            },
            path.with_suffix(".state.pt"),
        )
        return path

    def load_checkpoint(self, path) -> None:
        path = Path(path)
        ckpt.load_networks(path, self.nets)
        state = torch.load(path.with_suffix(".state.pt"), weights_only=False)
        self.step = int(state["step"])
        self.gamma = float(state["gamma"])
        for role, st in self.adam.items():
            st.load_state_dict(state["adam"][role])
        torch.set_rng_state(state["torch_rng"])
        self.rng.bit_generator.state = state["numpy_rng"]

    # -- optimization -------------------------------------------------------

    def _step_network(self, net, risk: torch.Tensor, role: str, alpha: float) -> None:
        params = list(net.parameters())
        for p in params:
            p.grad = None
        risk.backward()
        grads = []
        for name, p in net.named_parameters():
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            if not torch.isfinite(g).all():
                raise TrainingError(
                    f"non-finite gradient at step {self.step + 1} in {role}/{name}"
                )
            grads.append(g)
        adam_update(params, grads, self.adam[role], alpha)
        for p in params:
            p.grad = None

    def _check_finite(self, value: torch.Tensor, what: str) -> float:
        v = float(value.detach())
        if not np.isfinite(v):
            raise TrainingError(f"non-finite loss {what} at step {self.step + 1}")
        return v

    def _critic_iteration(self) -> dict:
        cfg = self.cfg
        batch = sample_batch(self.pools, cfg.b, self.rng)
        eps_x = torch.from_numpy(self.rng.random(cfg.b).astype(np.float32))
        with frozen(self.gen_y, self.gen_x):
            parts_y = critic_risk_parts(
                self.critic_y, self.gen_y, batch.x, batch.y, batch.eps, cfg.p
            )
            self._step_network(self.critic_y, parts_y["total"], "critic_Y", cfg.alpha_f)
            parts_x = critic_risk_parts(
                self.critic_x, self.gen_x, batch.y, batch.x, eps_x, cfg.p
            )
            self._step_network(self.critic_x, parts_x["total"], "critic_X", cfg.alpha_f)
        return {
            "r_cri_Y": self._check_finite(parts_y["total"], "r_cri_Y"),
            "r_cri_X": self._check_finite(parts_x["total"], "r_cri_X"),
            "gp_Y": self._check_finite(parts_y["penalty"], "gp_Y"),
            "gp_X": self._check_finite(parts_x["penalty"], "gp_X"),
        }

    def _generator_iteration(self, gamma: float) -> dict:
        cfg = self.cfg
        batch = sample_batch(self.pools, cfg.b, self.rng)
        loss_cfg = LossConfig(p=cfg.p, lambda_rec=cfg.lambda_rec, gamma=gamma)
        with frozen(self.critic_y, self.critic_x):
            obj = generator_objective(
                self.gen_y,
                self.gen_x,
                self.critic_y,
                self.critic_x,
                batch,
                loss_cfg,
                self.filter_cfg,
            )
            params = list(self.gen_y.parameters()) + list(self.gen_x.parameters())
            for p in params:
                p.grad = None
            obj["total"].backward()
            for role, net in (("generator_Y", self.gen_y), ("generator_X", self.gen_x)):
                grads = []
                for name, p in net.named_parameters():
                    g = p.grad if p.grad is not None else torch.zeros_like(p)
                    if not torch.isfinite(g).all():
                        raise TrainingError(
                            f"non-finite gradient at step {self.step + 1} in {role}/{name}"
                        )
                    grads.append(g)
                adam_update(list(net.parameters()), grads, self.adam[role], cfg.alpha_G)
            for p in params:
                p.grad = None
        return {
            "r_adv_Y": self._check_finite(obj["r_adv_y"], "r_adv_Y"),
            "r_adv_X": self._check_finite(obj["r_adv_x"], "r_adv_X"),
            "r_rec": self._check_finite(obj["r_rec"], "r_rec"),
        }

    def run(self, resume_from=None) -> Path:
        """Run the outer loop to n_G iterations; returns the final checkpoint
        path.  Appends to metrics.csv when resuming."""
        cfg = self.cfg
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if resume_from is not None:
            self.load_checkpoint(resume_from)
        metrics_path = self.out_dir / "metrics.csv"
        mode = "a" if (resume_from is not None and metrics_path.exists()) else "w"
        with open(metrics_path, mode, newline="") as f:
            if mode == "w":
                f.write(",".join(METRICS_COLUMNS) + "\n")
            for k in range(self.step + 1, cfg.n_G + 1):
                gamma_used = gamma_schedule(k - 1, cfg.n_G)
                n_f = nf_schedule(k, cfg)
                critic_stats = {}
                for _ in range(n_f):
                    critic_stats = self._critic_iteration()
                gen_stats = self._generator_iteration(gamma_used)
                self.step = k
                self.gamma = gamma_schedule(k, cfg.n_G)
                row = {
                    "step": k,
                    **critic_stats,
                    **gen_stats,
                    "gamma": gamma_used,
                    "n_f": n_f,
                }
                f.write(_format_row([row[c] for c in METRICS_COLUMNS]) + "\n")
                f.flush()
                if k % cfg.checkpoint_every == 0 and k != cfg.n_G:
                    self.save_checkpoint(k)
        return self.save_checkpoint(cfg.n_G)


def train(
    cfg: TrainConfig, pools: UnpairedPools, out_dir, deterministic: bool = False
) -> Path:
    """Train from scratch; returns the final checkpoint path."""
    return Trainer(cfg, pools, out_dir, deterministic).run()


def load_generator(checkpoint_path, net_scale: NetScale):
    """Restore only the RGB-to-depth generator from a checkpoint."""
    gen_y = build_generator(net_scale, out_channels=1)
    ckpt.load_networks(checkpoint_path, {"generator_Y": gen_y})
    gen_y.eval()
    return gen_y


def infer(
    gen_y,
    rgb: np.ndarray,
    depth_spec: ScalingSpec,
) -> np.ndarray:
    """RGB [0, 255] H x W x 3 -> depth map in physical units (H x W x 1)."""
    x = scale_to_model(rgb, RGB_SCALING).transpose(2, 0, 1)[None]
    with torch.no_grad():
        pred = gen_y(torch.from_numpy(np.ascontiguousarray(x)))
    return unscale(pred[0].permute(1, 2, 0).numpy(), depth_spec)
