import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from lunet.checkpoint import Checkpoint, load_model, save_model
from lunet.losses import lunet_loss
from lunet.model import (
    DDCB,
    AttentionGate,
    ConfigError,
    DivisibilityError,
    LUNet,
    LUNetConfig,
    build_lunet,
    count_parameters,
    receptive_field,
)

from oracles import relative_error

SMALL = dict(base_channels=4, max_channels=8)


def toy_config(**kw):
    cfg = dict(depth=1, tail_blocks=0, encoder_channels=[4, 4], decoder_channels=[2], dropout_rate=0.0)
    cfg.update(kw)
    return LUNetConfig(**cfg)


def param_count_formula(cfg: LUNetConfig) -> int:
    """Layer-plan parameter count written out by hand."""
    k2 = cfg.kernel_size ** 2
    branches = 1 if cfg.merge == "concat" else 2

    def ddcb(cin, cout):
        return branches * k2 * cin * cout + 2 * cout

    enc, dec = cfg.encoder_channels, cfg.decoder_channels
    total, prev = 0, cfg.in_channels
    for c in enc:
        total += ddcb(prev, c)
        prev = c
    for level in range(cfg.depth):
        coarse = enc[-1] if level == cfg.depth - 1 else dec[level + 1]
        inter = max(1, enc[level] // 2)
        total += 9 * coarse * dec[level] + 2 * dec[level]           # up-conv + BN
        total += enc[level] * inter + coarse * inter + inter + inter + 1  # gate
        total += ddcb(enc[level] + dec[level], dec[level])
    total += cfg.tail_blocks * ddcb(dec[0], dec[0])
    total += dec[0] * cfg.out_channels + cfg.out_channels
    return total


class TestConfig:
    def test_default_channel_plan(self):
        cfg = LUNetConfig()
        assert cfg.encoder_channels == [16, 32, 64, 128, 256, 512, 512]
        assert cfg.decoder_channels == [8, 16, 32, 64, 128, 256]
        assert cfg.multiple == 64

    @pytest.mark.parametrize("kw", [
        dict(depth=0), dict(kernel_size=6), dict(tail_blocks=-1), dict(dropout_rate=1.0),
        dict(merge="mean"), dict(dilation_rate=0),
        dict(depth=1, encoder_channels=[4, 4], decoder_channels=[8]),
        dict(depth=1, encoder_channels=[4], decoder_channels=[2]),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            LUNetConfig(**kw)

    def test_dict_round_trip(self):
        cfg = LUNetConfig(**SMALL, dilation_rate=2)
        assert LUNetConfig.from_dict(cfg.to_dict()) == cfg

    def test_override_rederives_widths(self):
        model = build_lunet(LUNetConfig(), base_channels=4, max_channels=8)
        assert model.config.encoder_channels == [4, 8, 8, 8, 8, 8, 8]
        assert model.config.decoder_channels == [2, 4, 4, 4, 4, 4]

    def test_receptive_field_formula(self):
        assert receptive_field(7, 3) == 19
        assert receptive_field(7, 1) == 7


class TestStructure:
    def test_default_parameter_count_frozen(self):
        cfg = LUNetConfig()
        assert param_count_formula(cfg) == 36184952
        assert count_parameters(LUNet(cfg)) == 36184952

    @pytest.mark.parametrize("kw", [dict(**SMALL), dict(**SMALL, merge="sum"), dict(depth=2, tail_blocks=1, **SMALL)])
    def test_parameter_count_matches_formula(self, kw):
        cfg = LUNetConfig(**kw)
        assert count_parameters(LUNet(cfg)) == param_count_formula(cfg)

    def test_depth_and_tail(self):
        model = build_lunet()
        assert len(model.encoder) == 7 and len(model.gates) == 6
        assert len(model.tail) == 4

    def test_minimal_config(self):
        model = build_lunet(toy_config())
        out = model(torch.rand(1, 3, 8, 8))
        assert out.shape == (1, 2, 8, 8)


class TestForward:
    @pytest.mark.parametrize("side", [64, 128])
    def test_shape_and_range(self, side):
        torch.manual_seed(0)
        model = build_lunet(**SMALL).eval()
        with torch.no_grad():
            out = model(torch.rand(2, 3, side, side))
        assert out.shape == (2, 2, side, side)
        assert out.min() >= 0 and out.max() <= 1

    def test_non_square_multiple(self):
        model = build_lunet(**SMALL).eval()
        with torch.no_grad():
            assert model(torch.rand(1, 3, 64, 192)).shape == (1, 2, 64, 192)

    def test_832(self):
        model = build_lunet(base_channels=4, max_channels=4, decoder_ratio=0.5, tail_blocks=0).eval()
        with torch.no_grad():
            assert model(torch.rand(1, 3, 832, 832)).shape == (1, 2, 832, 832)

    def test_divisibility_error_names_multiple(self):
        model = build_lunet(**SMALL)
        with pytest.raises(DivisibilityError, match="64"):
            model(torch.rand(1, 3, 100, 100))

    def test_eval_deterministic(self):
        model = build_lunet(**SMALL).eval()
        x = torch.rand(1, 3, 64, 64)
        with torch.no_grad():
            assert torch.equal(model(x), model(x))

    def test_channels_not_softmax(self):
        torch.manual_seed(1)
        model = build_lunet(**SMALL).eval()
        with torch.no_grad():
            s = model(torch.rand(1, 3, 64, 64)).sum(1)
        assert not torch.allclose(s, torch.ones_like(s))


class TestDDCB:
    def test_same_padding(self):
        block = DDCB(3, 6)
        assert block(torch.rand(1, 3, 20, 24)).shape == (1, 6, 20, 24)

    def test_dilation_one_branches_identical(self):
        block = DDCB(3, 6, dilation=1)
        a, b = block.conv, block.dilated
        assert a.kernel_size == b.kernel_size and a.padding == b.padding and a.dilation == b.dilation

    def test_receptive_field_empirical(self):
        torch.manual_seed(0)
        block = DDCB(1, 2, kernel_size=7, dilation=3, dropout=0.0).double().eval()
        x = torch.rand(1, 1, 41, 41, dtype=torch.float64, requires_grad=True)
        block(x)[0, :, 20, 20].sum().backward()
        rows, cols = np.nonzero(x.grad[0, 0].numpy())
        assert rows.max() - rows.min() + 1 == 19
        assert cols.max() - cols.min() + 1 == 19


class TestAttentionGate:
    def setup_method(self):
        torch.manual_seed(0)
        self.gate = AttentionGate(4, 6).double()
        self.skip = torch.randn(2, 4, 8, 8, dtype=torch.float64)
        self.g = torch.randn(2, 6, 4, 4, dtype=torch.float64)

    def test_open_is_identity(self):
        self.gate.force_open = True
        assert torch.equal(self.gate(self.skip, self.g), self.skip)

    def test_saturated_open_and_closed(self):
        with torch.no_grad():
            self.gate.psi.weight.zero_()
            self.gate.psi.bias.fill_(1e3)
        assert torch.equal(self.gate(self.skip, self.g), self.skip)
        with torch.no_grad():
            self.gate.psi.bias.fill_(-1e3)
        assert torch.count_nonzero(self.gate(self.skip, self.g)) == 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_never_amplifies(self, seed):
        gen = torch.Generator().manual_seed(seed)
        skip = torch.randn(1, 4, 8, 8, generator=gen, dtype=torch.float64) * 10
        g = torch.randn(1, 6, 4, 4, generator=gen, dtype=torch.float64) * 10
        alpha = self.gate.attention_map(skip, g)
        assert alpha.min() >= 0 and alpha.max() <= 1
        assert torch.all(self.gate(skip, g).abs() <= skip.abs())

    def test_shape_error(self):
        with pytest.raises(ValueError):
            self.gate(self.skip, torch.randn(2, 6, 8, 8, dtype=torch.float64))

    def test_open_network_is_plain_unet(self):
        torch.manual_seed(0)
        model = build_lunet(**SMALL).eval()
        x = torch.rand(1, 3, 64, 64)
        for gate in model.gates:
            with torch.no_grad():
                gate.psi.weight.zero_()
                gate.psi.bias.fill_(1e3)
        with torch.no_grad():
            saturated = model(x)
            model.set_gates_open(True)
            opened = model(x)
        assert torch.equal(saturated, opened)


def test_parameter_gradients_match_finite_differences():
    torch.manual_seed(0)
    model = build_lunet(toy_config()).double()
    x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
    label = torch.randint(0, 2, (2, 3, 8, 8)).double()

    def loss():
        return lunet_loss(model(x), label)

    model.zero_grad()
    loss().backward()
    # weight steps shift every pixel, so a small step keeps clear of min/max kinks
    h = 1e-6
    for name, p in model.named_parameters():
        analytic = p.grad.detach().numpy().ravel().copy()
        numeric = np.zeros_like(analytic)
        flat = p.data.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss().item()
                flat[i] = orig - h
                down = loss().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * h)
        assert relative_error(analytic, numeric) < 1e-3, name


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        torch.manual_seed(0)
        model = build_lunet(**SMALL)
        model.train()
        with torch.no_grad():
            model(torch.rand(2, 3, 64, 64))  # move BN running stats
        model.eval()
        save_model(model, tmp_path / "m.ckpt", epoch=3, best_val_loss=0.5)
        loaded = load_model(tmp_path / "m.ckpt")
        x = torch.rand(1, 3, 64, 64)
        with torch.no_grad():
            assert torch.equal(model(x), loaded(x))
        ckpt = Checkpoint.load(tmp_path / "m.ckpt")
        assert ckpt.epoch == 3 and ckpt.best_val_loss == 0.5
        assert ckpt.model_config == model.config.to_dict()
        assert ckpt.normalization == "divide-by-255"
