import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import cosine_distance_oracle, kl_quadrature_oracle, l1_mean_oracle
from pgae.exceptions import ConfigurationError, ShapeMismatchError
from pgae.losses import (LossWeights, MarginSchedule, batch_moments,
                         decoder_loss, encoder_loss, kl_unit_gaussian,
                         margin_for, recon_x, recon_z)
from pgae.model import PhaseState
from pgae.presets import celebahq_paper


class TestKlUnitGaussian:
    def test_standardized_batch_is_zero(self):
        codes = torch.tensor([[1.0, -1.0], [-1.0, 1.0]])  # mean 0, variance 1
        assert float(kl_unit_gaussian(codes)) == pytest.approx(0.0, abs=1e-7)

    def test_one_dimensional_shifted(self):
        codes = torch.tensor([[0.0], [2.0]])  # mean 1, variance 1
        assert float(kl_unit_gaussian(codes)) == pytest.approx(0.5, abs=1e-6)

    def test_matches_quadrature_oracle(self):
        gen = torch.Generator().manual_seed(42)
        codes = torch.randn(8, 4, generator=gen, dtype=torch.float64) * 1.7 + 0.4
        value = float(kl_unit_gaussian(codes))
        assert value == pytest.approx(kl_quadrature_oracle(codes), abs=1e-6)

    def test_variance_floor_and_flag(self):
        codes = torch.ones(4, 3)
        mu, var, degenerate = batch_moments(codes)
        assert degenerate
        assert torch.all(var >= 1e-12)
        assert math.isfinite(float(kl_unit_gaussian(codes)))

    def test_requires_two_samples(self):
        with pytest.raises(ShapeMismatchError):
            kl_unit_gaussian(torch.randn(1, 4))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_non_negative(self, seed):
        gen = torch.Generator().manual_seed(seed)
        codes = torch.randn(6, 5, generator=gen) * 2.0
        assert float(kl_unit_gaussian(codes)) >= -1e-6


class TestReconX:
    def test_identical_is_zero(self):
        x = torch.randn(2, 3, 4, 4)
        assert float(recon_x(x, x)) == 0.0

    def test_constant_offset(self):
        x = torch.zeros(2, 3, 4, 4)
        assert float(recon_x(x, x + 0.5)) == pytest.approx(0.5, abs=1e-7)

    def test_matches_direct_summation_oracle(self):
        gen = torch.Generator().manual_seed(3)
        a = torch.randn(3, 3, 5, 5, generator=gen)
        b = torch.randn(3, 3, 5, 5, generator=gen)
        assert float(recon_x(a, b)) == pytest.approx(l1_mean_oracle(a, b), abs=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            recon_x(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 8, 8))


class TestReconZ:
    def _unit(self, t):
        return t / t.norm(dim=-1, keepdim=True)

    def test_equal_codes(self):
        z = self._unit(torch.randn(4, 8))
        assert float(recon_z(z, z)) == pytest.approx(0.0, abs=1e-6)

    def test_orthogonal_codes(self):
        z = torch.eye(4)
        z_rec = torch.roll(torch.eye(4), 1, dims=1)
        assert float(recon_z(z, z_rec)) == pytest.approx(1.0, abs=1e-6)

    def test_antipodal_codes(self):
        z = self._unit(torch.randn(4, 8))
        assert float(recon_z(z, -z)) == pytest.approx(2.0, abs=1e-6)

    def test_matches_oracle(self):
        gen = torch.Generator().manual_seed(8)
        z = self._unit(torch.randn(5, 6, generator=gen))
        z_rec = self._unit(torch.randn(5, 6, generator=gen))
        assert float(recon_z(z, z_rec)) == pytest.approx(
            cosine_distance_oracle(z, z_rec), abs=1e-6)

    def test_rejects_non_unit(self):
        z = self._unit(torch.randn(2, 4))
        with pytest.raises(ValueError):
            recon_z(z * 2.0, z)


class TestEncoderLoss:
    def test_hinge_active(self):
        w = LossWeights(lambda_x=1.0)
        value = encoder_loss(torch.tensor(0.0), torch.tensor(1.0),
                             torch.tensor(0.3), w, 0.4)
        assert float(value) == pytest.approx(-0.1, abs=1e-7)

    def test_hinge_inactive(self):
        w = LossWeights(lambda_x=1.0)
        value = encoder_loss(torch.tensor(1.2), torch.tensor(1.0),
                             torch.tensor(0.3), w, 0.4)
        assert float(value) == pytest.approx(0.5, abs=1e-7)

    def test_infinite_margin_recovers_plain_difference(self):
        w = LossWeights(lambda_x=0.0)
        value = encoder_loss(torch.tensor(-3.0), torch.tensor(2.0),
                             torch.tensor(0.0), w, math.inf)
        assert float(value) == -5.0

    def test_infinite_margin_identity_bitwise(self):
        gen = torch.Generator().manual_seed(17)
        w = LossWeights(lambda_x=0.73)
        for _ in range(20):
            k1, k2, rx = torch.randn(3, generator=gen).unbind()
            rx = rx.abs()
            hinged = encoder_loss(k1, k2, rx, w, math.inf)
            plain = (k1 - k2) + w.lambda_x * rx
            assert float(hinged) == float(plain)

    def test_hinge_gradient_gating(self):
        w = LossWeights(lambda_x=0.5)
        kl_real = torch.tensor(0.0, requires_grad=True)
        kl_fake = torch.tensor(5.0, requires_grad=True)
        rx = torch.tensor(0.2, requires_grad=True)
        loss = encoder_loss(kl_real, kl_fake, rx, w, 0.4)  # gap -5 < -0.4
        loss.backward()
        assert kl_real.grad.item() == 0.0
        assert kl_fake.grad.item() == 0.0
        assert rx.grad.item() == pytest.approx(0.5)

    def test_hinge_gradient_passthrough_when_inactive(self):
        w = LossWeights(lambda_x=0.5)
        kl_real = torch.tensor(2.0, requires_grad=True)
        kl_fake = torch.tensor(1.0, requires_grad=True)
        rx = torch.tensor(0.2, requires_grad=True)
        encoder_loss(kl_real, kl_fake, rx, w, 0.4).backward()
        assert kl_real.grad.item() == 1.0
        assert kl_fake.grad.item() == -1.0


class TestDecoderLoss:
    def test_zero_case(self):
        w = LossWeights(lambda_z=10.0)
        assert float(decoder_loss(torch.tensor(0.0), torch.tensor(0.0), w)) == 0.0

    def test_arithmetic(self):
        w = LossWeights(lambda_z=10.0)
        value = decoder_loss(torch.tensor(1.5), torch.tensor(0.1), w)
        assert float(value) == pytest.approx(2.5, abs=1e-7)

    def test_random_inputs_match_two_term_sum(self):
        gen = torch.Generator().manual_seed(21)
        w = LossWeights(lambda_z=3.3)
        for _ in range(10):
            kf, rz = torch.randn(2, generator=gen).unbind()
            assert float(decoder_loss(kf, rz, w)) == float(kf + w.lambda_z * rz)

    def test_adversarial_opposition_signs(self):
        # kl_fake pushes encoder and decoder in opposite directions
        w = LossWeights(lambda_x=0.0, lambda_z=0.0)
        kf_enc = torch.tensor(1.0, requires_grad=True)
        encoder_loss(torch.tensor(1.05), kf_enc, torch.tensor(0.0), w, 10.0).backward()
        kf_dec = torch.tensor(1.0, requires_grad=True)
        decoder_loss(kf_dec, torch.tensor(0.0), w).backward()
        assert kf_enc.grad.item() == -1.0
        assert kf_dec.grad.item() == 1.0


class TestMarginSchedule:
    def test_empty_schedule_always_disabled(self):
        schedule = MarginSchedule.disabled()
        assert margin_for(schedule, PhaseState(level=3, samples_seen=10**9)) == math.inf

    def test_thresholds_must_increase(self):
        with pytest.raises(ConfigurationError):
            MarginSchedule(entries=[(100, 0, 0.2), (100, 1, 0.2)])

    def test_paper_preset_before_activation(self):
        schedule = celebahq_paper().margin_schedule
        phase = PhaseState(level=4, samples_seen=12_000_000)
        assert margin_for(schedule, phase) == math.inf

    def test_paper_preset_at_64px_after_activation(self):
        schedule = celebahq_paper().margin_schedule
        phase = PhaseState(level=4, samples_seen=13_500_000)
        assert margin_for(schedule, phase) == pytest.approx(0.2)

    def test_paper_preset_at_256px(self):
        config = celebahq_paper()
        phase = PhaseState(level=6, samples_seen=config.phase_start(6) + 1)
        assert margin_for(config.margin_schedule, phase) == pytest.approx(0.4)
