import pytest
import torch
import torch.nn.functional as F

from leafspec.model import ModelConfig, SegmentationNet, adapt_first_conv, adapt_sliced_stem
from leafspec.model.blocks import focus_slice


@pytest.mark.parametrize("mode", ["replicate", "average", "zero"])
def test_first_three_channels_copied_bitwise(mode):
    w3 = torch.randn(8, 3, 3, 3)
    w9 = adapt_first_conv(w3, mode=mode)
    assert w9.shape == (8, 9, 3, 3)
    assert (w9[:, 0:3] == w3).all()


def test_average_mode_fills_channel_mean():
    w3 = torch.stack(
        [torch.ones(4, 3, 3), 2 * torch.ones(4, 3, 3), 3 * torch.ones(4, 3, 3)], dim=1
    )  # channel planes constant 1, 2, 3
    w9 = adapt_first_conv(w3, mode="average")
    assert (w9[:, 3:] == 2.0).all()


def test_zero_mode_preserves_rgb_forward_pass():
    torch.manual_seed(0)
    w3 = torch.randn(6, 3, 3, 3)
    bias = torch.randn(6)
    w9 = adapt_first_conv(w3, mode="zero")
    x9 = torch.rand(2, 9, 16, 16)
    out9 = F.conv2d(x9, w9, bias, padding=1)
    out3 = F.conv2d(x9[:, 0:3], w3, bias, padding=1)
    assert (out9 - out3).abs().max() < 1e-6


def test_replicate_mode_randomizes_extra_channels_deterministically():
    w3 = torch.zeros(4, 3, 3, 3)
    g1 = torch.Generator().manual_seed(7)
    g2 = torch.Generator().manual_seed(7)
    a = adapt_first_conv(w3, mode="replicate", generator=g1)
    b = adapt_first_conv(w3, mode="replicate", generator=g2)
    assert (a == b).all()
    assert a[:, 3:].std() > 0


def test_parameter_count_grows_by_six_per_output_and_kernel_cell():
    w3 = torch.randn(16, 3, 5, 5)
    w9 = adapt_first_conv(w3, mode="zero")
    assert w9.numel() - w3.numel() == (9 - 3) * 16 * 5 * 5


def test_invalid_inputs_rejected():
    with pytest.raises(ValueError):
        adapt_first_conv(torch.randn(4, 4, 3, 3))
    with pytest.raises(ValueError):
        adapt_first_conv(torch.randn(4, 3, 3, 3), mode="mystery")
    bad = torch.randn(4, 3, 3, 3)
    bad[0, 0, 0, 0] = float("nan")
    with pytest.raises(ValueError):
        adapt_first_conv(bad)


def test_sliced_stem_zero_mode_matches_three_channel_model():
    torch.manual_seed(1)
    cfg9 = ModelConfig.tiny(9, "conv", input_size=64)
    cfg3 = ModelConfig.tiny(3, "conv", input_size=64)
    net9, net3 = SegmentationNet(cfg9).eval(), SegmentationNet(cfg3).eval()
    w3_stem = net3.stem.conv.weight.detach()
    net9.adapt_stem_from_rgb(w3_stem, mode="zero")
    with torch.no_grad():
        net9.stem.bn.load_state_dict(net3.stem.bn.state_dict())

    x = torch.rand(1, 9, 64, 64)
    with torch.no_grad():
        stem9 = net9.stem(focus_slice(x))
        stem3 = net3.stem(focus_slice(x[:, 0:3]))
    assert (stem9 - stem3).abs().max() < 1e-6


def test_sliced_stem_block_structure():
    w = torch.randn(8, 12, 3, 3)
    out = adapt_sliced_stem(w, mode="zero")
    assert out.shape == (8, 36, 3, 3)
    blocks = out.view(8, 4, 9, 3, 3)
    src = w.view(8, 4, 3, 3, 3)
    assert (blocks[:, :, 0:3] == src).all()
    assert (blocks[:, :, 3:] == 0).all()
