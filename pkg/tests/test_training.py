import hashlib

import numpy as np
import pytest
import torch

from percdepth.data import DEPTH_SCALING_PRESETS, synth_dataset
from percdepth.networks import NetScale
from percdepth.training import (
    METRICS_COLUMNS,
    AdamState,
    TrainConfig,
    Trainer,
    adam_update,
    gamma_schedule,
    infer,
    load_generator,
    nf_schedule,
)


def _small_cfg(**overrides):
    base = dict(
        n_G=2,
        n_f_initial=2,
        n_f_halve_at=1000,
        b=2,
        alpha_f=5e-5,
        alpha_G=1e-4,
        seed=0,
        net_scale=NetScale(width_multiplier=0.0625, input_size=64),
        checkpoint_every=1,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def small_dataset():
    return synth_dataset(4, 4, 2, size=64, seed=3)


def _param_hash(net):
    h = hashlib.sha256()
    for p in net.parameters():
        h.update(p.detach().numpy().tobytes())
    return h.hexdigest()


class TestAdam:
    def test_zero_grad_no_move(self):
        p = torch.ones(3)
        state = AdamState([p])
        adam_update([p], [torch.zeros(3)], state, 0.1)
        torch.testing.assert_close(p, torch.ones(3))
        assert state.t == 1

    def test_first_step_is_signed_alpha(self):
        # With beta1=0 and bias correction, the first update is
        # -alpha * g / (|g| + eps) ~= -alpha * sign(g).
        p = torch.zeros(4)
        g = torch.tensor([3.0, -0.5, 10.0, -1e-3])
        adam_update([p], [g], AdamState([p]), 0.01)
        torch.testing.assert_close(p, -0.01 * torch.sign(g), atol=1e-6, rtol=1e-4)

    def test_matches_reference_formula(self):
        rng = np.random.default_rng(0)
        p = torch.from_numpy(rng.normal(size=5)).float()
        state = AdamState([p])
        ref = p.clone().numpy().astype(np.float64)
        m = np.zeros(5)
        v = np.zeros(5)
        for t in range(1, 6):
            g = rng.normal(size=5).astype(np.float32)
            adam_update([p], [torch.from_numpy(g)], state, 0.05)
            m = 0.0 * m + 1.0 * g
            v = 0.9 * v + 0.1 * g.astype(np.float64) ** 2
            m_hat = m / (1.0 - 0.0**t)
            v_hat = v / (1.0 - 0.9**t)
            ref -= 0.05 * m_hat / (np.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(p.numpy(), ref, atol=1e-5)

    def test_deterministic(self):
        for _ in range(2):
            p = torch.ones(3)
            state = AdamState([p])
            g = torch.tensor([1.0, 2.0, 3.0])
            adam_update([p], [g], state, 0.1)
            out = p.clone()
        torch.testing.assert_close(p, out)

    def test_state_roundtrip(self):
        p = torch.ones(3)
        state = AdamState([p])
        adam_update([p], [torch.ones(3)], state, 0.1)
        fresh = AdamState([torch.ones(3)])
        fresh.load_state_dict(state.state_dict())
        assert fresh.t == 1
        torch.testing.assert_close(fresh.v[0], state.v[0])


class TestSchedules:
    def test_gamma_endpoints(self):
        assert gamma_schedule(0, 100) == 0.0
        assert gamma_schedule(100, 100) == 1.0
        assert gamma_schedule(25, 100) == 0.25

    def test_nf_default(self):
        cfg = TrainConfig()
        assert nf_schedule(1, cfg) == 24
        assert nf_schedule(1000, cfg) == 24
        assert nf_schedule(1001, cfg) == 12
        assert nf_schedule(9999, cfg) == 12

    def test_nf_custom(self):
        cfg = _small_cfg(n_f_initial=6, n_f_halve_at=3)
        assert [nf_schedule(k, cfg) for k in (1, 3, 4, 10)] == [6, 6, 3, 3]

    def test_nf_floor(self):
        cfg = _small_cfg(n_f_initial=1, n_f_halve_at=1)
        assert nf_schedule(2, cfg) == 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            _small_cfg(n_G=0)
        with pytest.raises(ValueError):
            _small_cfg(alpha_G=-1.0)

    def test_config_dict_roundtrip(self):
        cfg = _small_cfg()
        d = cfg.to_dict()
        back = TrainConfig(**d)
        assert back == cfg
        assert back.net_scale == cfg.net_scale


class TestTrainerSmoke:
    def test_two_steps_write_metrics(self, small_dataset, tmp_path):
        cfg = _small_cfg()
        trainer = Trainer(cfg, small_dataset.pools, tmp_path / "run")
        final = trainer.run()
        assert final.is_file()
        lines = (tmp_path / "run" / "metrics.csv").read_text().strip().split("\n")
        assert lines[0] == ",".join(METRICS_COLUMNS)
        assert len(lines) == 1 + cfg.n_G
        row = dict(zip(METRICS_COLUMNS, lines[1].split(",")))
        assert int(row["step"]) == 1
        assert float(row["gamma"]) == 0.0  # first iteration uses gamma = 0
        assert int(row["n_f"]) == cfg.n_f_initial
        assert float(row["gp_Y"]) >= 0.0 and float(row["gp_X"]) >= 0.0
        row2 = dict(zip(METRICS_COLUMNS, lines[2].split(",")))
        assert float(row2["gamma"]) == pytest.approx(1 / cfg.n_G)
        for col in ("r_cri_Y", "r_cri_X", "r_adv_Y", "r_adv_X", "r_rec"):
            assert np.isfinite(float(row[col]))

    def test_all_networks_move(self, small_dataset, tmp_path):
        cfg = _small_cfg(n_G=1, n_f_initial=1)
        trainer = Trainer(cfg, small_dataset.pools, tmp_path / "run")
        before = {role: _param_hash(net) for role, net in trainer.nets.items()}
        trainer.run()
        after = {role: _param_hash(net) for role, net in trainer.nets.items()}
        for role in before:
            assert before[role] != after[role], f"{role} did not update"

    def test_critic_iteration_leaves_generators(self, small_dataset, tmp_path):
        cfg = _small_cfg()
        trainer = Trainer(cfg, small_dataset.pools, tmp_path / "run")
        gen_before = (_param_hash(trainer.gen_y), _param_hash(trainer.gen_x))
        cri_before = (_param_hash(trainer.critic_y), _param_hash(trainer.critic_x))
        trainer._critic_iteration()
        assert (_param_hash(trainer.gen_y), _param_hash(trainer.gen_x)) == gen_before
        assert (_param_hash(trainer.critic_y), _param_hash(trainer.critic_x)) != cri_before

    def test_generator_iteration_leaves_critics(self, small_dataset, tmp_path):
        cfg = _small_cfg()
        trainer = Trainer(cfg, small_dataset.pools, tmp_path / "run")
        cri_before = (_param_hash(trainer.critic_y), _param_hash(trainer.critic_x))
        gen_before = (_param_hash(trainer.gen_y), _param_hash(trainer.gen_x))
        stats = trainer._generator_iteration(gamma=0.5)
        assert (_param_hash(trainer.critic_y), _param_hash(trainer.critic_x)) == cri_before
        assert (_param_hash(trainer.gen_y), _param_hash(trainer.gen_x)) != gen_before
        assert stats["r_rec"] >= 0.0


class TestDeterminismAndResume:
    def test_byte_identical_metrics(self, small_dataset, tmp_path):
        cfg = _small_cfg(n_G=3)
        Trainer(cfg, small_dataset.pools, tmp_path / "a", deterministic=True).run()
        Trainer(cfg, small_dataset.pools, tmp_path / "b", deterministic=True).run()
        a = (tmp_path / "a" / "metrics.csv").read_bytes()
        b = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert a == b

    def test_seed_changes_trajectory(self, small_dataset, tmp_path):
        ca, cb = _small_cfg(n_G=1), _small_cfg(n_G=1, seed=1)
        Trainer(ca, small_dataset.pools, tmp_path / "a", deterministic=True).run()
        Trainer(cb, small_dataset.pools, tmp_path / "b", deterministic=True).run()
        a = (tmp_path / "a" / "metrics.csv").read_bytes()
        b = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert a != b

    def test_bit_exact_resume(self, small_dataset, tmp_path):
        cfg = _small_cfg(n_G=4, checkpoint_every=2)
        straight = Trainer(cfg, small_dataset.pools, tmp_path / "full", deterministic=True)
        final_full = straight.run()
        mid = tmp_path / "full" / "checkpoints" / "step_2.pdgc"

        resumed = Trainer(cfg, small_dataset.pools, tmp_path / "resumed", deterministic=True)
        final_resumed = resumed.run(resume_from=mid)

        from percdepth.checkpoint import load_pdgc

        full = load_pdgc(final_full)
        res = load_pdgc(final_resumed)
        assert full.keys() == res.keys()
        for name in full:
            np.testing.assert_array_equal(full[name], res[name])
        # The resumed run's metric rows match the tail of the straight run.
        a = (tmp_path / "full" / "metrics.csv").read_text().strip().split("\n")
        b = (tmp_path / "resumed" / "metrics.csv").read_text().strip().split("\n")
        assert b[0] == a[0]  # header
        assert b[1:] == a[3:]  # steps 3 and 4

    def test_checkpoint_cadence(self, small_dataset, tmp_path):
        cfg = _small_cfg(n_G=4, checkpoint_every=2)
        trainer = Trainer(cfg, small_dataset.pools, tmp_path / "run", deterministic=True)
        trainer.run()
        ckpts = sorted((tmp_path / "run" / "checkpoints").glob("*.pdgc"))
        assert [p.name for p in ckpts] == ["step_2.pdgc", "step_4.pdgc"]


class TestInference:
    def test_load_generator_matches_trainer(self, small_dataset, tmp_path):
        cfg = _small_cfg(n_G=1, n_f_initial=1)
        trainer = Trainer(cfg, small_dataset.pools, tmp_path / "run")
        final = trainer.run()
        gen = load_generator(final, cfg.net_scale)
        assert _param_hash(gen) == _param_hash(trainer.gen_y)

    def test_infer_output(self, small_dataset, tmp_path):
        cfg = _small_cfg(n_G=1, n_f_initial=1)
        trainer = Trainer(cfg, small_dataset.pools, tmp_path / "run")
        gen = load_generator(trainer.run(), cfg.net_scale)
        rgb = small_dataset.eval_pairs[0][0]
        spec = DEPTH_SCALING_PRESETS["synth"]
        depth = infer(gen, rgb, spec)
        assert depth.shape == (64, 64, 1)
        assert depth.min() >= spec.physical_min - 1e-5
        assert depth.max() <= spec.physical_max + 1e-5

    def test_infer_zero_head_gives_midpoint(self, small_dataset):
        from percdepth.networks import build_generator

        gen = build_generator(NetScale(0.0625, 64), out_channels=1)
        with torch.no_grad():
            gen.out.weight.zero_()
            gen.out.bias.zero_()
        gen.eval()
        spec = DEPTH_SCALING_PRESETS["surface"]
        depth = infer(gen, small_dataset.eval_pairs[0][0], spec)
        np.testing.assert_allclose(depth, spec.mid, atol=1e-6)
