"""Training loop: determinism, stream keying, divergence, prediction."""

import numpy as np
import pytest

from fetalseg.augment import IIAParams, compose_batch, config_for_arm
from fetalseg.errors import TrainingDivergedError
from fetalseg.nnet import TrainConfig, UNetConfig, init_unet, predict_slices, train_unet
from fetalseg.nnet.train import _batches
from fetalseg.rng import StreamKey, substream
from fetalseg.volume import Slice2D, normalize_slice

ARCH = UNetConfig(in_channels=1, n_classes=3, depth=1, base_channels=2)


def toy_dataset(rng, n=6, size=16):
    """Bright square on dark background; labels follow intensity exactly."""
    pairs = []
    for _ in range(n):
        img = rng.uniform(0.0, 200.0, size=(size, size)).astype(np.float32)
        lab = np.zeros((size, size), dtype=np.uint8)
        y, x = int(rng.integers(2, size - 8)), int(rng.integers(2, size - 8))
        img[y : y + 6, x : x + 6] = rng.uniform(700.0, 900.0)
        lab[y : y + 6, x : x + 6] = 1
        img[y + 2 : y + 4, x + 2 : x + 4] = 1000.0
        lab[y + 2 : y + 4, x + 2 : x + 4] = 2
        pairs.append(
            (Slice2D(data=img, spacing=(0.7, 0.7)), Slice2D(data=lab, spacing=(0.7, 0.7)))
        )
    return pairs


def train_config(**kw):
    base = dict(
        stage="tissue",
        epochs=2,
        batch_size=3,
        loss="dice",
        augment=config_for_arm("flip"),
        seed=5,
    )
    base.update(kw)
    return TrainConfig(**base)


def run(config, seed_data=1, n=6):
    data = toy_dataset(np.random.default_rng(seed_data), n=n)
    net = init_unet(ARCH, config.seed, config.stage)
    result = train_unet(net, data, config)
    return net, result


class TestDeterminism:
    def test_identical_runs_bitwise(self):
        net_a, res_a = run(train_config())
        net_b, res_b = run(train_config())
        assert res_a.epoch_losses == res_b.epoch_losses
        for (name, a), (_, b) in zip(net_a.named_parameters(), net_b.named_parameters()):
            np.testing.assert_array_equal(a, b, err_msg=name)

    def test_seed_changes_trajectory(self):
        _, res_a = run(train_config(seed=5))
        _, res_b = run(train_config(seed=6))
        assert res_a.epoch_losses != res_b.epoch_losses

    def test_zero_proportion_reproduces_plain_arm(self):
        """Shading at proportion 0 must leave the flip/rotation draws and
        therefore the whole training trajectory untouched."""
        plain = train_config(augment=config_for_arm("flip+rot"), epochs=2)
        gated = train_config(
            augment=config_for_arm("flip+rot+IIA", iia=IIAParams(proportion=0.0)),
            epochs=2,
        )
        net_a, res_a = run(plain)
        net_b, res_b = run(gated)
        assert res_a.epoch_losses == res_b.epoch_losses
        for (name, a), (_, b) in zip(net_a.named_parameters(), net_b.named_parameters()):
            np.testing.assert_array_equal(a, b, err_msg=name)


class TestStreamKeying:
    def test_draw_log_replays_from_documented_keys(self):
        config = train_config(
            augment=config_for_arm("flip+rot+IIA", iia=IIAParams(proportion=0.5)),
            log_draws=True,
        )
        data = toy_dataset(np.random.default_rng(1), n=6)
        net = init_unet(ARCH, config.seed, config.stage)
        result = train_unet(net, data, config)
        assert len(result.draws) == config.epochs
        for epoch in range(config.epochs):
            order = substream(config.seed, "order", config.stage, epoch).permutation(
                len(data)
            )
            for b, idx in enumerate(_batches(order, config.batch_size)):
                pairs = [data[int(i)] for i in idx]
                key = StreamKey(config.seed).child("augment", config.stage, epoch, b)
                _, want = compose_batch(pairs, config.augment, key)
                assert result.draws[epoch][b] == want

    def test_draws_not_logged_by_default(self):
        _, result = run(train_config())
        assert result.draws == []
        assert result.steps == 2 * 2  # 6 slices / batch 3 = 2 batches x 2 epochs


class TestTrainingBehavior:
    def test_loss_decreases_on_learnable_toy(self):
        _, result = run(train_config(epochs=30, loss="ce", seed=3))
        assert result.epoch_losses[-1] < result.epoch_losses[0]
        assert result.final_loss == result.epoch_losses[-1]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_unet(init_unet(ARCH, 0, "tissue"), [], train_config())

    def test_label_out_of_net_range_rejected(self):
        data = toy_dataset(np.random.default_rng(0), n=3)
        bad = Slice2D(
            data=np.full((16, 16), 7, dtype=np.uint8), spacing=(0.7, 0.7)
        )
        data[0] = (data[0][0], bad)
        with pytest.raises(ValueError, match="out of range"):
            train_unet(init_unet(ARCH, 0, "tissue"), data, train_config())

    def test_divergence_guard_trips(self):
        with pytest.raises(TrainingDivergedError):
            run(train_config(divergence_threshold=1e-9))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            train_config(epochs=0)
        with pytest.raises(ValueError):
            train_config(loss="mse")

    def test_progress_callback_sees_epoch_losses(self):
        seen = []
        config = train_config()
        data = toy_dataset(np.random.default_rng(1))
        net = init_unet(ARCH, config.seed, config.stage)
        result = train_unet(net, data, config, progress=lambda e, l: seen.append((e, l)))
        assert seen == list(enumerate(result.epoch_losses))


class TestPredictSlices:
    def test_matches_manual_eval_forward(self):
        net, _ = run(train_config())
        data = toy_dataset(np.random.default_rng(9), n=3)
        slices = [img for img, _ in data]
        probs = predict_slices(net, slices)
        x = np.stack([normalize_slice(s).data for s in slices])[:, None]
        want = net.forward(x.astype(np.float32), training=False)
        np.testing.assert_array_equal(probs, want)

    def test_batch_size_does_not_change_results(self):
        net, _ = run(train_config())
        slices = [img for img, _ in toy_dataset(np.random.default_rng(9), n=5)]
        a = predict_slices(net, slices, batch_size=2)
        b = predict_slices(net, slices, batch_size=32)
        assert a.shape == (5, 3, 16, 16)
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_eval_mode_leaves_running_stats_alone(self):
        net, _ = run(train_config())
        before = {n: b.copy() for n, b in net.named_buffers()}
        slices = [img for img, _ in toy_dataset(np.random.default_rng(2), n=2)]
        predict_slices(net, slices)
        for name, buf in net.named_buffers():
            np.testing.assert_array_equal(buf, before[name], err_msg=name)
