from cyclab.interventions import Subspace
from cyclab.models import predict
from cyclab.neurons import *
from cyclab.probes import FourierProbePair
from cyclab.tasks import get_task_spec, generate_dataset, addition_spec
from cyclab.test import PlantedSumNetwork, tiny_model
from cyclab.utils import ContractError, DomainError, UndefinedScoreError
import math
import numpy as np
import torch
import pytest


PLANTED = [3, 7, 11]


def _planted_model():
    """Tiny model whose down rows PLANTED lie in span(e0, e1) and every other row in its complement"""
    model = tiny_model()
    generator = torch.Generator().manual_seed(1)
    with torch.no_grad():
        down = torch.randn(64, 32, generator=generator)
        down[:, :2] = 0.0
        for i in PLANTED:
            down[i] = 0.0
            down[i, :2] = torch.randn(2, generator=generator)
        model.blocks[1].mlp.W_down.copy_(down)
    return model


def _subspace(*axes: int, task: str='months') -> Subspace:
    return Subspace(torch.eye(32)[:, list(axes)], task=task, variable='output_concept', layer=1)


class TestWriteScores:
    def test_score_values(self):
        basis = torch.eye(3)[:, :1]
        assert write_score(torch.tensor([3.0, 4.0, 0.0]), basis) == pytest.approx(0.6)
        with pytest.raises(UndefinedScoreError):
            write_score(torch.zeros(3), basis)
        with pytest.raises(UndefinedScoreError):
            write_scores(torch.tensor([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), basis)

    def test_selects_planted_neurons(self):
        model = _planted_model()
        selection = select_neurons(model, 1, {'months': _subspace(0, 1), 'hours': _subspace(0, task='hours')})
        assert selection.sets['months'].members == PLANTED
        assert set(selection.sets['hours'].members) <= set(PLANTED)
        assert selection.differences('months') == {'hours': []}
        assert ('months', 'hours') in selection.correlations

        top = float(selection.scores['months'].max())
        empty = select_neurons(model, 1, {'months': _subspace(0, 1)}, tau=top + 1e-9)
        assert len(empty.sets['months']) == 0

    def test_constant_scores_have_no_correlation(self):
        subspaces = {
            'months': _subspace(0, 1), 'everything': _subspace(*range(32), task='everything'),
            'hours': _subspace(0, task='hours')
        }
        selection = select_neurons(_planted_model(), 1, subspaces)
        assert np.allclose(selection.scores['everything'], 1.0)
        assert len(selection.sets['everything']) == 64
        assert selection.correlations[('months', 'everything')] is None
        assert selection.correlations[('everything', 'hours')] is None
        assert np.isfinite(selection.correlations[('months', 'hours')])

    def test_histogram(self):
        scores = np.array([0.0, 0.05, 0.5, 0.99, 1.0])
        rows = score_histogram(scores, bins=10)
        assert len(rows) == 10
        assert sum(row['count'] for row in rows) == 5
        assert rows[-1]['count'] == 2


class TestPeriods:
    def test_assign_period(self):
        model = PlantedSumNetwork()
        probes = model.probes()
        assert assign_period(model.Q[:, 2], probes) == (10, pytest.approx(1.0, abs=1e-5))
        outside = model.marker
        period, alignment = assign_period(outside, probes)
        assert period is None and alignment < 1e-5

    def test_assign_periods_baseline(self):
        model = _planted_model()
        eye = torch.eye(32)
        probes = [FourierProbePair(10, 1, eye[0], eye[1]), FourierProbePair(5, 1, eye[2], eye[3])]
        result = assign_periods(model, 1, PLANTED, probes)
        assert [row['neuron'] for row in result['assignments']] == PLANTED
        assert all(row['period'] == 10 for row in result['assignments'])
        assert 0.0 < result['baseline'] < 1.0

    def test_split_mixed(self):
        model = tiny_model()
        with torch.no_grad():
            mlp = model.blocks[0].mlp
            mlp.W_gate[0].zero_()
            mlp.W_gate[0, 0] = 1.0
            mlp.W_up[0].zero_()
            mlp.W_up[0, 0] = 1.0
            mlp.W_gate[1].zero_()
            mlp.W_gate[1, :2] = 1.0
        concept, offset = _subspace(0), _subspace(1)
        assert split_mixed_classify(model, 0, 0, concept, offset) == 'split'
        assert split_mixed_classify(model, 0, 1, concept, offset) == 'mixed'
        counts = split_mixed_counts(model, 0, [0, 1], {'months': (concept, offset)})
        assert counts['counts']['months'] == {'split': 1, 'mixed': 1}
        assert len(counts['rows']) == 2

    def test_neuron_records(self):
        model = _planted_model()
        records = neuron_records(model, 1, PLANTED, {'months': _subspace(0, 1)})
        assert [r.index for r in records] == PLANTED
        assert all(r.write_scores['months'] == pytest.approx(1.0) for r in records)
        assert records[0].to_dict()['layer'] == 1
        with pytest.warns(UserWarning):
            assert neuron_records(model, 1, [], {}) == []


class TestAblation:
    def setup_method(self):
        self.model = tiny_model(seed=2)
        self.dataset = generate_dataset(get_task_spec('weekdays'))

    def test_complementary_modes(self):
        clean = predict(self.model, self.dataset)
        all_neurons = list(range(self.model.config.d_mlp))
        assert ablate(self.model, self.dataset, all_neurons, 'only_keep', 0).predictions == clean
        assert ablate(self.model, self.dataset, [], 'zero', 0).predictions == clean
        assert ablate(self.model, self.dataset, all_neurons, 'zero', 0).predictions == \
            ablate(self.model, self.dataset, [], 'only_keep', 0).predictions
        with pytest.raises(DomainError):
            ablate(self.model, self.dataset, [0], 'scale', 0)

    def test_ablation_table(self):
        rows = ablation_table(self.model, self.dataset, [0, 1, 2], 1)
        assert [row['number_range'] for row in rows] == ['1->7', '8->14']
        assert all(row['chance'] == pytest.approx(1 / 7) for row in rows)
        assert sum(row['n'] for row in rows) == len(self.dataset)
        assert {'clean', 'only_keep', 'zero', 'flip'} <= set(rows[0])

    def test_error_by_magnitude(self):
        dataset = generate_dataset(addition_spec((1, 10), (1, 10)))
        predictions = [p.gold_id if p.pre_modulo_sum < 10 else -1 for p in dataset]
        rows = error_by_magnitude(predictions, dataset, bucket=10, label='zero')
        assert [row['sum_low'] for row in rows] == [0, 10, 20]
        assert rows[0]['error_rate'] == 0.0 and rows[1]['error_rate'] == 1.0
        assert sum(row['total'] for row in rows) == 100
        assert rows[0]['run'] == 'zero'


class TestAnalysis:
    def test_clusters_ignore_sign(self):
        v1, v2 = torch.tensor([1.0, 2.0, 0.0]), torch.tensor([0.0, 0.0, 1.0])
        clusters = cluster_by_cosine(torch.stack([v1, -v1, 2 * v1, v2]), [10, 11, 12, 13])
        groups = sorted(sorted(group) for group in clusters.clusters().values())
        assert groups == [[10, 11, 12], [13]]
        assert clusters.distance[0, 1] == pytest.approx(0.0)
        assert len(set(cluster_by_cosine(torch.stack([v1, v2]), n_clusters=1).labels)) == 1
        with pytest.raises(ContractError):
            cluster_by_cosine(torch.stack([v1, torch.zeros(3)]))

    def test_mean_activation_by_sum(self):
        model = tiny_model()
        dataset = generate_dataset(get_task_spec('weekdays'))
        ribbons = mean_activation_by_sum(model, dataset, [0, 5], 1)
        assert ribbons.sums == list(range(2, 22))
        assert ribbons.matrix.shape == (2, 20)
        assert np.abs(ribbons.clipped(0.01)).max() <= 0.01
        assert len(ribbons.rows()) == 40

    def test_downproj_plane_export(self):
        model = _planted_model()
        eye = torch.eye(32)
        probes = [FourierProbePair(7, 1, eye[0], eye[1])]
        prompt = generate_dataset(get_task_spec('weekdays'))[10]
        export = downproj_plane_export(model, 1, PLANTED, probes, prompt)
        entry = export[7]
        assert [arrow['neuron'] for arrow in entry['arrows']] == PLANTED
        assert entry['sum']['sin'] == pytest.approx(sum(a['sin'] for a in entry['arrows']))
        assert entry['ground_truth_angle'] == pytest.approx(2 * math.pi * (prompt.pre_modulo_sum % 7) / 7)
        assert 0.0 <= entry['angular_error'] <= math.pi
        with pytest.raises(ContractError):
            downproj_plane_export(model, 1, PLANTED, probes, prompt, periods=[5])
