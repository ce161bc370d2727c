
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from misaligned_isp.errors import ConfigError, DimensionError, EmptyMaskWarning, LoadError, ParameterError
from misaligned_isp.losses import (
    LossWeights,
    RandomPyramidExtractor,
    VGGExtractor,
    downsample_mask,
    loss_discriminator,
    loss_gan_generator,
    loss_gcm,
    loss_isp,
    loss_total,
    masked_l1,
)

from conftest import fd_gradient, rel_error


def test_masked_l1_examples():
    a = torch.rand(3, 8, 8)
    assert masked_l1(a, a.clone(), torch.ones(1, 8, 8)) == 0
    assert masked_l1(a + 0.5, a, torch.ones(1, 8, 8)).item() == pytest.approx(0.5, abs=1e-7)
    b = torch.zeros(3, 8, 8, dtype=torch.float64)
    a = b.clone()
    a[:, :, :4] = 1.0
    a[:, :, 4:] = 100.0
    m = torch.zeros(1, 8, 8, dtype=torch.float64)
    m[:, :, :4] = 1
    assert masked_l1(a, b, m).item() == 1.0
    assert loss_gcm(a, b, m).item() == 1.0


def test_masked_l1_constant_exact():
    b = torch.zeros(2, 3, 4, 4, dtype=torch.float64)
    for c in (0.25, 0.5, 2.0):
        assert masked_l1(b + c, b, torch.ones(2, 1, 4, 4, dtype=torch.float64)).item() == c


def test_masked_l1_empty_mask_warns():
    a = torch.rand(3, 4, 4, requires_grad=True)
    with pytest.warns(EmptyMaskWarning):
        v = masked_l1(a, torch.zeros(3, 4, 4), torch.zeros(1, 4, 4))
    assert v.item() == 0
    v.backward()
    assert torch.all(a.grad == 0)


def test_masked_l1_shape_errors():
    with pytest.raises(DimensionError):
        masked_l1(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5))
    with pytest.raises(DimensionError):
        masked_l1(torch.zeros(3, 4, 4), torch.zeros(3, 4, 4), torch.ones(3, 4, 4))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.floats(-8, 8, allow_nan=False))
def test_masked_l1_mask_invariance_and_homogeneity(seed, k):
    gen = torch.Generator().manual_seed(seed)
    a = torch.rand(3, 9, 7, generator=gen, dtype=torch.float64)
    b = torch.rand(3, 9, 7, generator=gen, dtype=torch.float64)
    m = (torch.rand(1, 9, 7, generator=gen) > 0.4).double()
    m[0, 0, 0] = 1
    base = masked_l1(a, b, m)
    a2 = torch.where(m.bool(), a, torch.rand(3, 9, 7, generator=gen, dtype=torch.float64) * 50)
    assert masked_l1(a2, b, m).item() == base.item()
    scaled = masked_l1(b + k * (a - b), b, m)
    assert scaled.item() == pytest.approx(abs(k) * base.item(), rel=1e-9, abs=1e-12)
    assert base >= 0


def test_downsample_mask_examples():
    ones = torch.ones(1, 8, 8)
    for s in (1, 2, 4, 8):
        assert torch.all(downsample_mask(ones, s) == 1)
    m = ones.clone()
    m[0, 3, 5] = 0
    d = downsample_mask(m, 2)
    assert int((d == 0).sum()) == 1 and d[0, 1, 2] == 0
    checker = ((torch.arange(8)[:, None] + torch.arange(8)[None]) % 2).float()[None]
    assert torch.all(downsample_mask(checker, 2) == 0)
    with pytest.raises(DimensionError):
        downsample_mask(torch.ones(1, 6, 6), 4)


def test_extractor_frozen_and_scales():
    ex = RandomPyramidExtractor(seed=0)
    assert all(not p.requires_grad for p in ex.parameters())
    feats = ex.features(torch.rand(1, 3, 32, 32))
    assert [f.shape[-1] for f in feats] == [16, 8, 4] and ex.scales == [2, 4, 8]
    ex2 = RandomPyramidExtractor(seed=0)
    assert all(torch.equal(p, q) for p, q in zip(ex.parameters(), ex2.parameters()))


def test_vgg_missing_weights(tmp_path):
    with pytest.raises(LoadError, match="random-pyramid"):
        VGGExtractor(tmp_path / "vgg19.pth")


def test_loss_isp_examples():
    ex = RandomPyramidExtractor()
    y = torch.rand(1, 3, 16, 16)
    m = torch.ones(1, 1, 16, 16)
    assert loss_isp(y, y.clone(), m, ex).item() == 0
    yh = torch.rand(1, 3, 16, 16)
    w = LossWeights(lambda_vgg=0)
    assert torch.equal(loss_isp(yh, y, m, None, w), masked_l1(yh, y, m))
    with pytest.raises(ConfigError):
        loss_isp(yh, y, m, None)


def test_loss_isp_perceptual_term_is_mean_over_scales():
    ex = RandomPyramidExtractor()
    y, yh = torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16)
    m = torch.ones(1, 1, 16, 16)
    m[..., :5, :] = 0
    fa, fb = ex.features(yh), ex.features(y)
    perc = sum(masked_l1(a, b, downsample_mask(m, s)) for s, a, b in zip(ex.scales, fa, fb)) / 3
    expected = masked_l1(yh, y, m) + perc
    assert loss_isp(yh, y, m, ex).item() == pytest.approx(expected.item(), rel=1e-6)


def test_loss_isp_gradient():
    ex = RandomPyramidExtractor().double()
    yh = torch.rand(1, 3, 16, 16, dtype=torch.float64, requires_grad=True)
    y = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    m = torch.ones(1, 1, 16, 16, dtype=torch.float64)
    m[..., 3:7, 9:14] = 0
    num, ana = fd_gradient(lambda: loss_isp(yh, y, m, ex) * 1e3, [yh], n_samples=40)
    assert rel_error(num, ana) < 1e-4


def test_masked_l1_gradient():
    a = torch.rand(2, 3, 6, 6, dtype=torch.float64, requires_grad=True)
    b = torch.rand(2, 3, 6, 6, dtype=torch.float64)
    m = (torch.rand(2, 1, 6, 6) > 0.5).double()
    num, ana = fd_gradient(lambda: masked_l1(a, b, m), [a], n_samples=40)
    assert rel_error(num, ana) < 1e-4


@pytest.mark.parametrize("v,expected", [(1.0, 0.0), (0.0, 0.5), (-1.0, 2.0)])
def test_gan_generator_values(v, expected):
    assert loss_gan_generator(torch.full((2, 1, 5, 5), v)).item() == expected


@pytest.mark.parametrize("r,f,expected", [(1.0, 0.0, 0.0), (0.0, 1.0, 1.0), (0.5, 0.5, 0.25)])
def test_discriminator_values(r, f, expected):
    assert loss_discriminator(torch.full((3, 1, 4, 4), r), torch.full((3, 1, 4, 4), f)).item() == expected


def test_loss_total_examples():
    z = torch.tensor(0.0, dtype=torch.float64)
    assert loss_total({"gcm": z, "isp": z}, "isp").item() == 0
    assert loss_total({"gcm": z, "isp": z, "gan": torch.tensor(1.0, dtype=torch.float64)}, "ispgan").item() == 0.01
    assert loss_total({"gcm": z, "isp": z, "gan": torch.tensor(5.0)}, "isp").item() == 0
    with pytest.raises(ConfigError):
        loss_total({"gcm": z, "isp": z}, "ispgan")
    with pytest.raises(ParameterError):
        loss_total({"gcm": z, "isp": z}, "gan")


def test_loss_weights_nonnegative():
    with pytest.raises(ConfigError):
        LossWeights(lambda_gan=-0.1)
    w = LossWeights()
    assert (w.lambda_l1, w.lambda_vgg, w.lambda_gan) == (1.0, 1.0, 0.01)
