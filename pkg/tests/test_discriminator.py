import math

import numpy as np
import pytest
import torch

from disgan.discriminator import (
    DiscriminatorConfig,
    DwtConvUnit,
    DwtConvUnitConfig,
    build_discriminator,
    discriminator_forward,
)
from disgan.errors import ConfigError, OddExtent, ShapeError

from gradcheck import fd_input_check, relative_error


def unit(cin, cout, seed=0, zero_bias=True):
    torch.manual_seed(seed)
    u = DwtConvUnit(DwtConvUnitConfig(cin, cout)).double()
    if zero_bias:
        with torch.no_grad():
            u.low.bias.zero_()
            u.high.bias.zero_()
    return u


def test_unit_constant_input():
    u = unit(3, 8)
    c = torch.tensor([0.5, -1.0, 2.0], dtype=torch.float64)
    x = c.reshape(1, 3, 1, 1, 1).expand(1, 3, 4, 4, 4).contiguous()
    pre = u.pre_activation(x)
    assert torch.all(pre[:, 4:] == 0)
    w = u.low.weight[:, :, 0, 0, 0]  # (out, in)
    expected = 2 * math.sqrt(2) * (w @ c)
    np.testing.assert_allclose(pre[0, :4, 0, 0, 0].detach().numpy(), expected.detach().numpy(), rtol=1e-12)


def test_unit_shape():
    u = unit(4, 16)
    assert u(torch.zeros(1, 4, 8, 8, 8, dtype=torch.float64)).shape == (1, 16, 4, 4, 4)


def test_unit_linear_pre_activation(rng):
    u = unit(2, 6)
    x = torch.from_numpy(rng.standard_normal((1, 2, 6, 6, 6)))
    diff = u.pre_activation(2 * x) - 2 * u.pre_activation(x)
    assert float(diff.detach().abs().max()) < 1e-5


def test_unit_odd_extent():
    with pytest.raises(OddExtent):
        unit(1, 2)(torch.zeros(1, 1, 4, 5, 4, dtype=torch.float64))


def test_unit_needs_even_out_channels():
    with pytest.raises(ConfigError):
        DwtConvUnit(DwtConvUnitConfig(1, 3))


def test_full_scale_shape():
    d = build_discriminator(DiscriminatorConfig(), 0)
    with torch.no_grad():
        out = discriminator_forward(d, torch.zeros(64, 64, 64))
    assert out.shape == (64, 64, 64)


def test_deterministic(rng):
    d = build_discriminator(DiscriminatorConfig(), 0)
    x = torch.from_numpy(rng.standard_normal((2, 1, 16, 16, 16)).astype(np.float32))
    with torch.no_grad():
        assert torch.equal(d(x), d(x))


def test_indivisible_extent():
    d = build_discriminator(DiscriminatorConfig(), 0)
    with pytest.raises(ShapeError):
        d(torch.zeros(1, 1, 12, 16, 16))


def test_encoder_halves_each_level(rng):
    d = build_discriminator(DiscriminatorConfig(levels=3, channels=[4, 6, 8]), 0)
    h = torch.from_numpy(rng.standard_normal((1, 1, 24, 16, 32)).astype(np.float32))
    for i, u in enumerate(d.encoder, start=1):
        h = u(h)
        assert h.shape[2:] == (24 // 2 ** i, 16 // 2 ** i, 32 // 2 ** i)
        assert h.shape[1] == [4, 6, 8][i - 1]


@pytest.mark.parametrize("chans", [[8, 16, 32], [4, 6], [2]])
def test_decoder_channel_bookkeeping(chans):
    cfg = DiscriminatorConfig(levels=len(chans), channels=chans)
    d = build_discriminator(cfg, 0)
    levels = len(chans)
    cur = chans[-1]
    for conv, i in zip(d.decoder, range(levels - 1, -1, -1)):
        skip = 1 if i == 0 else chans[i - 1]
        assert conv.in_channels == cur + skip
        cur = chans[max(i - 1, 0)]
        assert conv.out_channels == cur
    assert d.score.in_channels == cur and d.score.out_channels == 1
    assert d.score.kernel_size == (1, 1, 1)


def test_no_normalization_and_raw_scores():
    d = build_discriminator(DiscriminatorConfig(), 0)
    assert not any("norm" in n or "bn" in n for n, _ in d.named_parameters())
    # no squashing: scores leave [0, 1] for large inputs
    with torch.no_grad():
        out = d(torch.full((1, 1, 16, 16, 16), 10.0))
    assert float(out.abs().max()) > 1 or float(out.min()) < 0


def test_scores_finite_for_bounded_inputs(rng):
    d = build_discriminator(DiscriminatorConfig(), 0)
    for mag in (0.1, 1.0, 10.0):
        x = torch.from_numpy((rng.uniform(-1, 1, (2, 1, 16, 16, 16)) * mag).astype(np.float32))
        with torch.no_grad():
            assert torch.isfinite(d(x)).all()


def test_input_gradient_matches_finite_differences(rng):
    d = build_discriminator(DiscriminatorConfig(levels=1, channels=[4]), 1).double()
    x0 = torch.from_numpy(rng.standard_normal((1, 1, 8, 8, 8)))
    analytic, numeric = fd_input_check(lambda x: d(x).mean(), x0, n_points=20, step=1e-3)
    assert relative_error(analytic, numeric) < 2e-2


def test_param_gradients_exist(rng):
    d = build_discriminator(DiscriminatorConfig(levels=2, channels=[4, 8]), 0)
    d(torch.from_numpy(rng.standard_normal((1, 1, 8, 8, 8)).astype(np.float32))).mean().backward()
    assert all(p.grad is not None for p in d.parameters())
