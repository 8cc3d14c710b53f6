import numpy as np
import pytest
import torch

from windsr.dataset import build_dataset
from windsr.errors import TrainingDivergedError
from windsr.grids import apply_dropout
from windsr.losses import divergence_loss, dwt_loss, l1_denoise_loss, sobel_loss, total_loss
from windsr.model import (
    DenoiserNet,
    ModelSpec,
    TorchDenoiser,
    TrainConfig,
    load_checkpoint,
    model_for_dataset,
    save_checkpoint,
    speed_direction_to_uv,
    train,
    validation_l1,
)
from windsr.schedule import make_schedule
from windsr.synthetic import BASIC_INPUT_NAMES, empirical_stats, generate_synthetic_pair


def tiny_dataset(n=6, size=16, seeds=range(100, 200)):
    pairs = [generate_synthetic_pair(seed=s, hr_size=size, scale_factor=8)
             for s in list(seeds)[:n]]
    return build_dataset(pairs, stats=empirical_stats(pairs))


def tiny_net(in_channels):
    return DenoiserNet(ModelSpec(in_channels=in_channels, widths=(6, 8, 10), emb_dim=8))


class TestForward:
    def test_same_inputs_same_outputs(self):
        torch.manual_seed(0)
        net = tiny_net(7)
        x = torch.randn(2, 7, 16, 16)
        t = torch.tensor([5.0, 900.0])
        a = net(x, t)
        b = net(x, t)
        torch.testing.assert_close(a, b, rtol=0, atol=0)

    def test_output_shape_matches_targets(self):
        net = tiny_net(12)
        out = net(torch.randn(3, 12, 16, 16), torch.tensor([1.0, 2.0, 3.0]))
        assert out.shape == (3, 3, 16, 16)

    def test_all_dropped_conditioning_ignores_values(self, sched):
        ds = tiny_dataset(n=2)
        cfg = TrainConfig(train_steps=0, seed=1)
        net = model_for_dataset(ds, cfg)
        den = TorchDenoiser(net, ds.stats, ds.hr_shape, ds.scale_factor)
        x_t = np.random.default_rng(3).normal(size=(3,) + ds.hr_shape)
        groups_a = set(ds.pairs[0].conditioning.dropout_groups())
        groups_b = set(ds.pairs[1].conditioning.dropout_groups())
        out_a = den(x_t, apply_dropout(ds.pairs[0].conditioning, groups_a), 500)
        out_b = den(x_t, apply_dropout(ds.pairs[1].conditioning, groups_b), 500)
        np.testing.assert_array_equal(out_a, out_b)


class TestGradients:
    def probe(self, loss_fn, n_probes=10, h=1e-4, tol=1e-4):
        torch.manual_seed(7)
        net = tiny_net(4).double()
        x = torch.randn(2, 4, 8, 8, dtype=torch.float64)
        t = torch.tensor([100.0, 800.0], dtype=torch.float64)
        target = torch.randn(2, 3, 8, 8, dtype=torch.float64)

        def scalar():
            return loss_fn(net(x, t), target)

        net.zero_grad()
        scalar().backward()
        params = [p for p in net.parameters() if p.grad is not None]
        gen = np.random.default_rng(0)
        checked = 0
        while checked < n_probes:
            p = params[int(gen.integers(len(params)))]
            idx = tuple(int(gen.integers(s)) for s in p.shape)
            analytic = float(p.grad[idx])
            with torch.no_grad():
                orig = float(p[idx])
                p[idx] = orig + h
                up = float(scalar())
                p[idx] = orig - h
                down = float(scalar())
                p[idx] = orig
            fd = (up - down) / (2 * h)
            scale = max(abs(analytic), abs(fd), 1e-8)
            assert abs(analytic - fd) / scale < tol, (analytic, fd)
            checked += 1

    def test_l1_term(self):
        self.probe(lambda p, t: l1_denoise_loss(p, t))

    def test_dwt_term(self):
        self.probe(lambda p, t: dwt_loss(p, t))

    def test_divergence_term(self):
        self.probe(lambda p, t: divergence_loss(p[:, 0:2], t[:, 0:2]))

    def test_sobel_term(self):
        self.probe(lambda p, t: sobel_loss(p, t))

    def test_total_loss(self):
        self.probe(lambda p, t: total_loss(p, t))

    def test_scalar_head_gradient(self):
        # gradient of a single output cell of the network
        self.probe(lambda p, t: p[0, 0, 3, 3], n_probes=10)


class TestTraining:
    def test_zero_steps_leaves_model_unchanged(self, sched):
        ds = tiny_dataset()
        cfg = TrainConfig(train_steps=0, seed=3)
        net = model_for_dataset(ds, cfg)
        before = {k: v.clone() for k, v in net.state_dict().items()}
        curve = train(ds, net, cfg, sched)
        assert curve == []
        for k, v in net.state_dict().items():
            torch.testing.assert_close(before[k], v, rtol=0, atol=0)

    def test_reproducible_final_loss(self, sched):
        ds = tiny_dataset()
        results = []
        for _ in range(2):
            cfg = TrainConfig(train_steps=8, batch_size=2, seed=11,
                              variables=BASIC_INPUT_NAMES)
            net = model_for_dataset(ds, cfg, widths=(6, 8, 10))
            curve = train(ds, net, cfg, sched)
            results.append(curve[-1])
        assert abs(results[0] - results[1]) <= 1e-9

    def test_nan_aborts_with_diagnostics(self, sched):
        ds = tiny_dataset()
        cfg = TrainConfig(train_steps=5, batch_size=2, learning_rate=1e9, seed=0,
                          warmup_steps=0)
        net = model_for_dataset(ds, cfg, widths=(6, 8, 10))
        with pytest.raises(TrainingDivergedError, match="step"):
            train(ds, net, cfg, sched)

    def test_training_reduces_validation_l1_over_seeds(self, sched):
        # training-works sanity oracle on the 32x32 synthetic task
        pairs = [generate_synthetic_pair(seed=s, hr_size=32) for s in range(210, 222)]
        stats = empirical_stats(pairs)
        ds_train = build_dataset(pairs[:8], stats=stats)
        ds_val = build_dataset(pairs[8:], stats=stats)
        wins = 0
        for seed in range(5):
            cfg = TrainConfig(train_steps=120, batch_size=4, learning_rate=3e-3,
                              warmup_steps=20, seed=seed, variables=BASIC_INPUT_NAMES)
            net = model_for_dataset(ds_train, cfg, widths=(8, 12, 16))
            den = TorchDenoiser(net, stats, ds_train.hr_shape, ds_train.scale_factor)
            before = validation_l1(ds_val, den, sched, variables=cfg.variables, seed=99)
            train(ds_train, net, cfg, sched)
            after = validation_l1(ds_val, den, sched, variables=cfg.variables, seed=99)
            wins += int(after < before)
        assert wins == 5


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, sched):
        ds = tiny_dataset(n=2)
        cfg = TrainConfig(train_steps=3, batch_size=2, seed=5, variables=BASIC_INPUT_NAMES)
        net = model_for_dataset(ds, cfg, widths=(6, 8, 10))
        train(ds, net, cfg, sched)
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), net, ds.stats, ds.hr_shape, ds.scale_factor)
        den = load_checkpoint(str(path))
        for k, v in net.state_dict().items():
            got = den.net.state_dict()[k]
            torch.testing.assert_close(got, v.to(torch.float32), rtol=0, atol=0)
        assert den.net.spec == net.spec
        assert den.hr_shape == ds.hr_shape

    def test_truncated_checkpoint_rejected(self, tmp_path, sched):
        from windsr.errors import FormatError

        ds = tiny_dataset(n=2)
        cfg = TrainConfig(train_steps=0, seed=5)
        net = model_for_dataset(ds, cfg, widths=(6, 8, 10))
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), net, ds.stats, ds.hr_shape, ds.scale_factor)
        blob = path.read_bytes()
        path.write_bytes(blob[:-50])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(str(path))


class TestUvReconstruction:
    def test_matches_hand_formula(self):
        channels = torch.tensor([[[[0.5]], [[0.6]], [[0.8]]]], dtype=torch.float64)
        uv = speed_direction_to_uv(channels, speed_mean=8.0, speed_std=2.0)
        speed = 0.5 * 2.0 + 8.0
        assert float(uv[0, 0, 0, 0]) == pytest.approx(speed * 0.8, abs=1e-12)  # u
        assert float(uv[0, 1, 0, 0]) == pytest.approx(speed * 0.6, abs=1e-12)  # v
