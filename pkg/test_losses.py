"""
Tests for losses and schedules
Run with: python -m pytest test_losses.py -v
"""
import math

import numpy as np
import pytest
import torch

from core.errors import ShapeMismatchError, ValidationError
from core.losses import (
    LossWeights,
    beta_schedule,
    dice_loss,
    discriminator_loss,
    generator_loss,
    mse_sdm_loss,
    supervised_loss,
)


def random_maps(seed, shape=(2, 1, 4, 4, 4)):
    gen = torch.Generator().manual_seed(seed)
    m = torch.rand(shape, generator=gen, dtype=torch.float64) * 0.9 + 0.05
    y = (torch.rand(shape, generator=gen, dtype=torch.float64) > 0.5).double()
    s = torch.rand(shape, generator=gen, dtype=torch.float64) * 1.8 - 0.9
    z = torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1
    return m, y, s, z


def central_difference(fn, x, eps=1e-6):
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    for i in range(flat.numel()):
        saved = flat[i].item()
        flat[i] = saved + eps
        plus = fn(x).item()
        flat[i] = saved - eps
        minus = fn(x).item()
        flat[i] = saved
        grad.view(-1)[i] = (plus - minus) / (2 * eps)
    return grad


def assert_gradient_matches(fn, x):
    x = x.clone().requires_grad_(True)
    fn(x).backward()
    analytic = x.grad.detach()
    numeric = central_difference(fn, x.detach().clone())
    error = (analytic - numeric).norm() / max(numeric.norm().item(), 1e-12)
    assert error < 1e-4


class TestDiceLoss:
    """Soft dice loss"""

    def test_perfect_prediction_near_zero(self):
        y = torch.zeros(1, 1, 4, 4, 4)
        y[..., 1:3, 1:3, 1:3] = 1
        assert dice_loss(y.clone(), y).item() == pytest.approx(0.0, abs=1e-6)

    def test_disjoint_prediction_near_one(self):
        y = torch.zeros(1, 1, 4, 4, 4)
        y[..., :2, :, :] = 1
        assert dice_loss(1 - y, y).item() == pytest.approx(1.0, abs=1e-6)

    def test_batch_mean_of_items(self):
        m, y, _, _ = random_maps(0)
        per_item = torch.stack([dice_loss(m[i:i + 1], y[i:i + 1]) for i in range(2)])
        assert dice_loss(m, y).item() == pytest.approx(per_item.mean().item())

    def test_empty_target_and_prediction(self):
        zeros = torch.zeros(1, 1, 2, 2, 2)
        assert dice_loss(zeros, zeros).item() == pytest.approx(0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            dice_loss(torch.zeros(1, 1, 2, 2, 2), torch.zeros(1, 1, 2, 2, 3))

    @pytest.mark.parametrize('seed', range(3))
    def test_gradient(self, seed):
        m, y, _, _ = random_maps(seed)
        assert_gradient_matches(lambda v: dice_loss(v, y), m)


class TestSdmLoss:
    """SDM regression and the supervised multi-task loss"""

    def test_mse_value(self):
        s = torch.full((1, 1, 2, 2, 2), 0.5)
        z = torch.zeros_like(s)
        assert mse_sdm_loss(s, z).item() == pytest.approx(0.25)

    @pytest.mark.parametrize('seed', range(3))
    def test_gradient(self, seed):
        _, _, s, z = random_maps(seed)
        assert_gradient_matches(lambda v: mse_sdm_loss(v, z), s)

    def test_supervised_combines_terms(self):
        m, y, s, z = random_maps(4)
        expected = dice_loss(m, y) + 0.3 * mse_sdm_loss(s, z)
        assert supervised_loss(m, y, s, z, alpha=0.3).item() == pytest.approx(expected.item())

    def test_alpha_zero_ignores_sdm(self):
        m, y, s, z = random_maps(5)
        assert supervised_loss(m, y, s, z, alpha=0.0).item() == pytest.approx(dice_loss(m, y).item())
        assert supervised_loss(m, y, None, None, alpha=0.3).item() == pytest.approx(dice_loss(m, y).item())


class TestAdversarialLosses:
    """Discriminator cross entropy and the generator surrogate"""

    def test_discriminator_loss_value(self):
        d_l = torch.tensor([0.8, 0.6], dtype=torch.float64)
        d_u = torch.tensor([0.3, 0.1], dtype=torch.float64)
        expected = -(np.mean(np.log([0.8, 0.6])) + np.mean(np.log([0.7, 0.9])))
        assert discriminator_loss(d_l, d_u).item() == pytest.approx(expected)

    def test_confident_discriminator_low_loss(self):
        assert discriminator_loss(torch.tensor([0.999]), torch.tensor([0.001])).item() < 0.01

    def test_generator_loss_value(self):
        d_u = torch.tensor([0.5, 0.25], dtype=torch.float64)
        assert generator_loss(d_u).item() == pytest.approx(-(math.log(0.5) + math.log(0.25)) / 2)

    def test_saturated_outputs_stay_finite(self):
        ones, zeros = torch.ones(2), torch.zeros(2)
        assert math.isfinite(discriminator_loss(zeros, ones).item())
        assert math.isfinite(generator_loss(zeros).item())

    @pytest.mark.parametrize('seed', range(3))
    def test_gradients(self, seed):
        gen = torch.Generator().manual_seed(seed)
        d_l = torch.rand(4, generator=gen, dtype=torch.float64) * 0.9 + 0.05
        d_u = torch.rand(4, generator=gen, dtype=torch.float64) * 0.9 + 0.05
        assert_gradient_matches(generator_loss, d_u)
        assert_gradient_matches(lambda v: discriminator_loss(v, d_u), d_l)
        assert_gradient_matches(lambda v: discriminator_loss(d_l, v), d_u)


class TestBetaSchedule:
    """Gaussian warm-up of the adversarial weight"""

    def test_endpoints(self):
        assert beta_schedule(6000, 6000) == 0.001
        assert beta_schedule(0, 6000) == pytest.approx(0.001 * math.exp(-5), abs=1e-12)

    def test_monotone(self):
        values = [beta_schedule(t, 6000) for t in np.linspace(0, 6000, 1000)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_clamped_after_t_max(self):
        assert beta_schedule(9000, 6000) == beta_schedule(6000, 6000)

    def test_custom_maximum(self):
        assert beta_schedule(100, 100, beta_max=0.5) == 0.5

    def test_invalid_arguments(self):
        with pytest.raises(ValidationError):
            beta_schedule(-1, 6000)
        with pytest.raises(ValidationError):
            beta_schedule(0, 0)


class TestLossWeights:
    """Default weights"""

    def test_defaults(self):
        weights = LossWeights()
        assert (weights.alpha, weights.beta_max, weights.t_max) == (0.3, 0.001, 6000)

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            LossWeights(alpha=-0.1)
