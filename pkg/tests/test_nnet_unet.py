"""U-net assembly, checkpoint format, and whole-network gradient checks."""

import numpy as np
import pytest

from fetalseg.errors import VolumeFormatError
from fetalseg.nnet import (
    UNet,
    UNetConfig,
    check_unet_gradients,
    init_unet,
    layer_gradient_report,
    load_checkpoint,
    save_checkpoint,
)


def tiny_config(**kw):
    base = dict(in_channels=1, n_classes=3, depth=1, base_channels=2)
    base.update(kw)
    return UNetConfig(**base)


def tiny_net(seed=0, **kw):
    return UNet(tiny_config(**kw), np.random.default_rng(seed))


class TestArchitecture:
    def test_parameter_order_is_canonical(self):
        names = [n for n, _ in tiny_net().named_parameters()]
        blocks = []
        for block in ("enc0", "bottleneck", "dec0"):
            for stage in (1, 2):
                blocks += [
                    f"{block}.conv{stage}.weight",
                    f"{block}.conv{stage}.bias",
                    f"{block}.bn{stage}.gamma",
                    f"{block}.bn{stage}.beta",
                ]
        up = ["up0.conv.weight", "up0.conv.bias", "up0.bn.gamma", "up0.bn.beta"]
        head = ["head.conv.weight", "head.conv.bias", "head.bn.gamma", "head.bn.beta"]
        assert names == blocks[:16] + up + blocks[16:] + head

    def test_channel_progression(self):
        net = UNet(
            UNetConfig(in_channels=1, n_classes=8, depth=2, base_channels=4),
            np.random.default_rng(0),
        )
        shapes = dict(net.named_parameters())
        assert shapes["enc0.conv1.weight"].shape == (4, 1, 3, 3)
        assert shapes["enc0.conv2.weight"].shape == (4, 4, 3, 3)
        assert shapes["enc1.conv1.weight"].shape == (8, 4, 3, 3)
        assert shapes["bottleneck.conv1.weight"].shape == (16, 8, 3, 3)
        assert shapes["up1.conv.weight"].shape == (8, 16, 2, 2)
        assert shapes["dec1.conv1.weight"].shape == (8, 16, 3, 3)  # skip doubles c_in
        assert shapes["up0.conv.weight"].shape == (4, 8, 2, 2)
        assert shapes["dec0.conv1.weight"].shape == (4, 8, 3, 3)
        assert shapes["head.conv.weight"].shape == (8, 4, 1, 1)

    def test_forward_shape_and_distribution(self, rng):
        net = tiny_net()
        x = rng.random((2, 1, 8, 8), dtype=np.float32)
        probs = net.forward(x, training=True)
        assert probs.shape == (2, 3, 8, 8)
        assert probs.dtype == np.float32
        assert probs.min() >= 0.0
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=1e-5)

    def test_forward_depth3_at_pipeline_size(self, rng):
        net = UNet(
            UNetConfig(in_channels=1, n_classes=2, depth=3, base_channels=2),
            np.random.default_rng(1),
        )
        probs = net.forward(rng.random((1, 1, 64, 64), dtype=np.float32), training=False)
        assert probs.shape == (1, 2, 64, 64)

    def test_indivisible_input_rejected(self, rng):
        net = tiny_net()  # depth 1 wants multiples of 2
        with pytest.raises(ValueError):
            net.forward(rng.random((1, 1, 7, 8), dtype=np.float32))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            UNetConfig(depth=0)
        with pytest.raises(ValueError):
            UNetConfig(n_classes=1)

    def test_init_depends_only_on_seed_and_stage(self):
        cfg = tiny_config()
        a = dict(init_unet(cfg, 7, "icv").named_parameters())
        b = dict(init_unet(cfg, 7, "icv").named_parameters())
        other_stage = dict(init_unet(cfg, 7, "tissue").named_parameters())
        other_seed = dict(init_unet(cfg, 8, "icv").named_parameters())
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])
        assert not np.array_equal(a["enc0.conv1.weight"], other_stage["enc0.conv1.weight"])
        assert not np.array_equal(a["enc0.conv1.weight"], other_seed["enc0.conv1.weight"])

    def test_fresh_net_has_identity_batchnorm_and_zero_bias(self):
        net = tiny_net()
        params = dict(net.named_parameters())
        np.testing.assert_array_equal(params["enc0.bn1.gamma"], np.ones(2))
        np.testing.assert_array_equal(params["enc0.conv1.bias"], np.zeros(2))
        buffers = dict(net.named_buffers())
        np.testing.assert_array_equal(buffers["enc0.bn1.running_var"], np.ones(2))

    def test_backward_requires_forward(self, rng):
        net = tiny_net()
        with pytest.raises(RuntimeError):
            net.backward(rng.random((1, 3, 8, 8)))


class TestCheckpoint:
    def test_round_trip_preserves_everything(self, rng, tmp_path):
        net = tiny_net(seed=3)
        net.forward(rng.random((2, 1, 8, 8), dtype=np.float32), training=True)
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, net)
        loaded = load_checkpoint(path)
        assert loaded.config == net.config
        for (name, a), (name2, b) in zip(
            net.named_parameters(), loaded.named_parameters()
        ):
            assert name == name2
            np.testing.assert_array_equal(a, b)
        for (_, a), (_, b) in zip(net.named_buffers(), loaded.named_buffers()):
            np.testing.assert_array_equal(a, b)

    def test_loaded_net_predicts_identically(self, rng, tmp_path):
        net = tiny_net(seed=4)
        net.forward(rng.random((4, 1, 8, 8), dtype=np.float32), training=True)
        save_checkpoint(tmp_path / "n.ckpt", net)
        loaded = load_checkpoint(tmp_path / "n.ckpt")
        x = rng.random((2, 1, 8, 8), dtype=np.float32)
        np.testing.assert_array_equal(
            net.forward(x, training=False), loaded.forward(x, training=False)
        )

    def test_save_load_save_is_byte_stable(self, tmp_path):
        net = tiny_net(seed=5)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, net)
        save_checkpoint(p2, load_checkpoint(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_directory_is_readable_text(self, tmp_path):
        net = tiny_net()
        path = tmp_path / "n.ckpt"
        save_checkpoint(path, net)
        head = path.read_bytes().split(b"\nend\n")[0].decode("ascii")
        assert head.startswith("UNET1\nconfig ")
        assert "param enc0.conv1.weight 2 1 3 3" in head
        assert "buffer enc0.bn1.running_mean 2" in head

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOPE1\nend\n")
        with pytest.raises(VolumeFormatError):
            load_checkpoint(p)

    def test_truncated_payload_rejected(self, tmp_path):
        net = tiny_net()
        p = tmp_path / "n.ckpt"
        save_checkpoint(p, net)
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(VolumeFormatError):
            load_checkpoint(p)

    def test_unknown_directory_line_rejected(self, tmp_path):
        p = tmp_path / "n.ckpt"
        p.write_bytes(b"UNET1\nmystery line\nend\n")
        with pytest.raises(VolumeFormatError):
            load_checkpoint(p)


class TestGradients:
    def test_per_layer_report_under_1e6(self):
        report = layer_gradient_report(seed=0)
        assert set(report) >= {
            "conv3x3",
            "conv2x2",
            "conv1x1",
            "batchnorm",
            "relu",
            "maxpool2x2",
            "upsample2x2",
            "softmax",
            "cross_entropy",
            "soft_dice",
        }
        for name, err in report.items():
            assert err <= 1e-6, f"{name}: {err}"

    @pytest.mark.parametrize("loss", ["ce", "dice"])
    def test_whole_net_backprop_matches_fd(self, loss):
        rng = np.random.default_rng(11)
        net = tiny_net(seed=11).astype(np.float64)
        x = rng.random((2, 1, 8, 8))
        labels = rng.integers(0, 3, size=(2, 8, 8))
        errors = check_unet_gradients(net, x, labels, loss=loss)
        assert "input" in errors
        worst = max(errors.values())
        assert worst <= 1e-4, max(errors.items(), key=lambda kv: kv[1])
