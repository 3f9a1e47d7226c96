from cyclab.hooks import RESID_POST_MLP
from cyclab.probes import FourierProbePair
from cyclab.steering import *
from cyclab.tasks import addition_spec, get_task_spec, generate_dataset, make_prompt, default_vocabulary
from cyclab.test import all_close, PlantedSumNetwork
from cyclab.utils import ConfigError, ContractError
import math
import numpy as np
import torch
import pytest


def _axis_probes(d: int=8):
    eye = torch.eye(d, dtype=torch.float64)
    return [FourierProbePair(5, 0, eye[0], eye[1]), FourierProbePair(10, 0, 2 * eye[2], 2 * eye[3])]


class TestSteerState:
    def test_readouts_hit_target(self):
        torch.manual_seed(0)
        probes = _axis_probes()
        h = torch.randn(6, 8, dtype=torch.float64)
        steered, skipped = steer_state(h, probes, [10, 5], target=7, alpha=3.0)
        assert skipped == []
        for probe in probes:
            s0, c0 = probe.readout(h)
            radius = torch.sqrt(s0 ** 2 + c0 ** 2)
            s, c = probe.readout(steered)
            theta = 2 * math.pi * 7 / probe.period
            assert all_close(s, 3.0 * radius * math.sin(theta), 1e-9)
            assert all_close(c, 3.0 * radius * math.cos(theta), 1e-9)
        # directions outside the probe planes are untouched
        assert torch.equal(steered[:, 4:], h[:, 4:])

    def test_vanishing_radius_is_skipped(self):
        h = torch.zeros(2, 8)
        h[:, 2] = 1.0
        steered, skipped = steer_state(h, _axis_probes(), [5, 10], target=3, alpha=2.0)
        assert skipped == [5]
        assert torch.equal(steered[:, :2], h[:, :2])

    def test_missing_probe(self):
        with pytest.raises(ContractError):
            steer_state(torch.ones(8), _axis_probes(), [7], target=1, alpha=1.0)

    def test_config(self):
        cfg = SteeringConfig(periods=(10, 2, 5, 5), hook_point='post_mlp')
        assert cfg.periods == [2, 5, 10] and cfg.hook_point == RESID_POST_MLP
        with pytest.raises(ConfigError):
            SteeringConfig(alpha=0.0).validate()
        SteeringConfig(alpha=0.0, bypass=True).validate()
        with pytest.raises(ConfigError):
            SteeringConfig(periods=()).validate()

    def test_restrict_distribution(self):
        probs = torch.tensor([[0.5, 0.2, 0.3], [0.1, 0.1, 0.8]])
        restricted = restrict_distribution(probs, [0, 2])
        assert all_close(restricted, torch.tensor([[0.5, 0.3, 0.2], [0.1, 0.8, 0.1]]))


class TestSteeringPlantedModel:
    def setup_method(self):
        self.model = PlantedSumNetwork()
        self.cfg = SteeringConfig(periods=self.model.periods, alpha=1.0, layer=0)

    def test_steer_single_prompt(self):
        prompt = make_prompt(get_task_spec('addition'), '12', 9)
        result = steer(self.model, prompt, self.model.probes(), self.cfg.with_target(40))
        assert float(result.distribution.sum()) == pytest.approx(1.0)
        assert int(result.distribution.argmax()) == default_vocabulary().token_id('40')
        assert result.skipped == []

    def test_addition_matrix_is_diagonal(self):
        dataset = generate_dataset(addition_spec((1, 20), (1, 20)))[:30]
        targets = [3, 17, 42, 88]
        report = steering_matrix(self.model, dataset, targets, self.model.probes(), self.cfg)
        assert report.answers == ['3', '17', '42', '88']
        assert report.columns[-1] == OTHER
        assert report.matrix.shape == (4, 5)
        assert np.allclose(report.matrix.sum(axis=1), 1.0)
        assert min(report.diagonal_mass()) > 0.9
        assert len(report.per_prompt) == 30
        assert len(report.per_prompt_rows()) == 30 * 4

    def test_months_follow_target_sum(self):
        dataset = generate_dataset(get_task_spec('months'))[:24]
        report = steering_matrix(self.model, dataset, [14, 30], self.model.probes(), self.cfg, per_prompt=False)
        assert report.answers == list(dataset[0].spec.concept_names)
        assert report.expected == ['February', 'June']
        assert min(report.diagonal_mass()) > 0.9

    def test_alpha_sweep(self):
        dataset = generate_dataset(addition_spec((1, 10), (1, 10)))[:20]
        reports = alpha_sweep(self.model, dataset, [30], self.model.probes(), self.cfg, alphas=(0.0, 1.0))
        assert list(reports) == [0.0, 1.0]
        assert reports[0.0].alpha == 0.0
        assert reports[0.0].diagonal_mass()[0] < 0.05
        assert reports[1.0].diagonal_mass()[0] > 0.9
