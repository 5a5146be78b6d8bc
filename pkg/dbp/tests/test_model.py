import pytest
import torch

from dbp3d.model import MULTIPLE, NetworkConfig, build_network, pad_to_multiple


def test_forward_preserves_shape():
    net = build_network(NetworkConfig(base_channels=4))
    x = torch.randn(2, 1, 16, 32, 16)
    assert net(x).shape == x.shape


def test_indivisible_input_rejected():
    net = build_network(NetworkConfig(base_channels=4))
    with pytest.raises(ValueError):
        net(torch.randn(1, 1, 20, 16, 16))


def test_pad_to_multiple():
    padded, pads = pad_to_multiple((16, 16, 34))
    assert padded == (16, 16, 48)
    assert pads[0] == (0, 0) and pads[2] == (7, 7)
    assert all(size % MULTIPLE == 0 for size in padded)
    same, pads = pad_to_multiple((32, 32, 64))
    assert same == (32, 32, 64)
    assert all(p == (0, 0) for p in pads)


def test_doubling_width_quadruples_conv_parameters():
    def conv_params(width):
        net = build_network(NetworkConfig(base_channels=width))
        return sum(
            m.weight.numel()
            for m in net.modules()
            if isinstance(m, (torch.nn.Conv3d, torch.nn.ConvTranspose3d))
        )

    ratio = conv_params(8) / conv_params(4)
    assert 3.5 < ratio < 4.1


def test_zero_initialized_head_outputs_bias():
    net = build_network(NetworkConfig(base_channels=4))
    with torch.no_grad():
        net.head.weight.zero_()
        net.head.bias.fill_(0.37)
    out = net(torch.randn(1, 1, 16, 16, 16))
    assert torch.allclose(out, torch.full_like(out, 0.37))


def test_network_config_validation_and_json():
    with pytest.raises(ValueError):
        NetworkConfig(base_channels=0)
    cfg = NetworkConfig(base_channels=12)
    assert NetworkConfig.from_json(cfg.to_json()) == cfg


def test_gradient_matches_finite_differences():
    """Probe-parameter gradient of the masked loss vs central differences."""
    from dbp3d.train import masked_mse

    torch.manual_seed(0)
    net = build_network(NetworkConfig(base_channels=2)).double()
    x = torch.randn(2, 1, 16, 16, 16, dtype=torch.float64)
    y = torch.rand(2, 1, 16, 16, 16, dtype=torch.float64)
    mask = (torch.rand(1, 1, 16, 16, 16) > 0.3).double()

    loss = masked_mse(net(x), y, mask)
    loss.backward()
    probe = net.head.weight
    grad = probe.grad.reshape(-1)[0].item()

    h = 1e-6
    with torch.no_grad():
        probe.reshape(-1)[0] += h
        plus = masked_mse(net(x), y, mask).item()
        probe.reshape(-1)[0] -= 2 * h
        minus = masked_mse(net(x), y, mask).item()
        probe.reshape(-1)[0] += h
    fd = (plus - minus) / (2 * h)
    assert abs(grad - fd) / max(abs(fd), 1e-12) < 1e-3
