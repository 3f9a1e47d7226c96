from cyclab.hooks import ORTHONORMAL_TOLERANCE, RESID_POST_ATTN, RESID_POST_MLP
from cyclab.interventions import *
from cyclab.models import predict
from cyclab.numerics import gram_deviation, matrix_rank, save_artifact
from cyclab.tasks import addition_spec, get_task_spec, generate_dataset, make_prompt, sample_counterfactual_pairs, \
    default_vocabulary
from cyclab.test import all_close, PlantedSubspaceNetwork, PlantedSumNetwork
from cyclab.utils import ArtifactError, ContractError, DimensionError, ConfigError
import math
import torch
import pytest


def _axes(d: int, *indices: int) -> torch.Tensor:
    return torch.eye(d)[:, list(indices)]


class TestSubspaceGeometry:
    def test_das_patch(self):
        e1 = _axes(2, 0)
        assert all_close(das_patch(torch.tensor([1.0, 2.0]), torch.tensor([5.0, 7.0]), e1), torch.tensor([5.0, 2.0]))
        with pytest.raises(DimensionError):
            das_patch(torch.zeros(3), torch.zeros(3), e1)
        with pytest.raises(ContractError):
            das_patch(torch.zeros(2), torch.zeros(2), torch.tensor([[1.0], [1.0]]))

    def test_union(self):
        torch.manual_seed(0)
        shared = torch.randn(10, 1)
        a = Subspace(torch.linalg.qr(torch.cat([shared, torch.randn(10, 2)], 1))[0], task='months')
        b = Subspace(torch.linalg.qr(torch.cat([shared, torch.randn(10, 3)], 1))[0], task='addition')
        union = union_subspace(a, b)
        assert union.task == 'months+addition'
        assert gram_deviation(union.basis) < 1e-5
        assert union.k == matrix_rank(torch.cat([a.basis, b.basis], 1)) == 6
        with pytest.raises(DimensionError):
            union_subspace(a, Subspace(_axes(4, 0)))

    def test_principal_angle_overlap(self):
        assert principal_angle_overlap(_axes(5, 0, 1), _axes(5, 0, 2)) == pytest.approx(0.5)
        assert principal_angle_overlap(_axes(5, 0, 1), _axes(5, 1, 0)) == pytest.approx(1.0)
        assert principal_angle_overlap(_axes(5, 0), _axes(5, 3)) == pytest.approx(0.0)

    def test_random_baseline(self):
        baseline = random_overlap_baseline(64, 8, 8, n_pairs=200, seed=1)
        assert abs(baseline['mean'] - math.sqrt(8 / 64)) < 0.08
        assert baseline['p2.5'] <= baseline['median'] <= baseline['p97.5']

    def test_subspace_contract(self):
        with pytest.raises(ContractError):
            Subspace(torch.tensor([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(DimensionError):
            Subspace(torch.ones(3))
        with pytest.raises(ConfigError):
            DASTrainConfig(k=0).validate(8)

    def test_save_load(self, tmp_path):
        subspace = Subspace(_axes(6, 1, 4), task='hours', variable='offset', layer=2, hook_point='post_attn',
                            test_iia=0.75)
        directory = str(tmp_path / 'subspace')
        save_subspace(subspace, directory)
        loaded = load_subspace(directory)
        assert torch.equal(loaded.basis, subspace.basis)
        assert (loaded.task, loaded.variable, loaded.layer) == ('hours', 'offset', 2)
        assert loaded.hook_point == RESID_POST_ATTN and loaded.test_iia == 0.75

    def test_load_non_orthonormal(self, tmp_path):
        directory = str(tmp_path / 'subspace')
        basis = _axes(6, 1, 4)
        basis[0, 0] = 0.1
        save_artifact(directory, {'kind': 'subspace', 'task': 't', 'variable': 'offset', 'layer': 0,
                                  'hook_point': RESID_POST_MLP, 'position': 'final', 'k': 2}, {'R': basis})
        with pytest.raises(ArtifactError):
            load_subspace(directory)

    @pytest.mark.parametrize("deviation", [5e-5, 1e-3])
    def test_construction_and_loading_share_a_tolerance(self, tmp_path, deviation):
        basis = _axes(6, 1, 4)
        basis[1, 0] = math.sqrt(1.0 + deviation)
        directory = str(tmp_path / 'subspace')
        save_artifact(directory, {'kind': 'subspace', 'task': 't', 'variable': 'offset', 'layer': 0,
                                  'hook_point': RESID_POST_MLP, 'position': 'final', 'k': 2}, {'R': basis})

        def accepted(build) -> bool:
            try:
                build()
            except (ArtifactError, ContractError):
                return False
            return True

        expected = gram_deviation(basis) <= ORTHONORMAL_TOLERANCE
        assert expected == (deviation < ORTHONORMAL_TOLERANCE)
        assert accepted(lambda: Subspace(basis)) == expected
        assert accepted(lambda: load_subspace(directory)) == expected


class TestPlantedRecovery:
    @pytest.mark.slow
    def test_das_recovers_planted_subspace(self):
        model = PlantedSubspaceNetwork()
        spec = addition_spec((0, 19), (0, 19))
        assert all(pred == p.gold_id for pred, p in zip(predict(model, generate_dataset(spec)), generate_dataset(spec)))

        train, test = sample_counterfactual_pairs(spec, 'input_concept', 600, 200, seed=0)
        cfg = DASTrainConfig(k=4, n_epoch=5, lr=1e-2, batch_size=32)
        subspace = train_das(model, train, 'input_concept', 0, RESID_POST_ATTN, cfg, test)
        assert subspace.test_iia >= 0.99
        assert principal_angle_overlap(subspace, model.planted_subspace()) >= 0.95
        assert gram_deviation(subspace.basis) < 1e-4
        assert eval_iia(model, model.planted_subspace(), test) == 1.0

    def test_full_residual_patch_follows_counterfactual(self):
        model = PlantedSubspaceNetwork()
        spec = addition_spec((0, 19), (0, 19))
        original, counterfactual = make_prompt(spec, '3', 4), make_prompt(spec, '10', 8)
        logits = residual_patch(model, original, counterfactual, 0, RESID_POST_ATTN)
        assert int(logits.argmax()) == counterfactual.gold_id

    def test_cross_task_patch(self):
        model = PlantedSumNetwork()
        union = model.sum_subspace()
        vocab = default_vocabulary()
        source = make_prompt(get_task_spec('addition'), '6', 8)
        target = make_prompt(get_task_spec('months'), 'March', 2)
        assert predict(model, [source, target]) == [vocab.token_id('14'), vocab.token_id('May')]
        assert expected_cross_task_label(source, target) == 'February'
        logits = cross_task_patch(model, source, target, union)
        assert int(logits.argmax()) == vocab.token_id('February')

    def test_cross_task_report(self):
        model = PlantedSumNetwork()
        sources = generate_dataset(addition_spec((1, 40), (1, 40)))
        targets = generate_dataset(get_task_spec('months'))
        report = cross_task_report(model, sources, targets, model.sum_subspace(), n_pairs=300, seed=2)
        assert report['expected_rate'] == 1.0
        assert report['answers'] == list(targets[0].spec.concept_names)
        assert sum(row['count'] for row in report['rows']) == 300
        for probabilities in report['heatmap'].values():
            assert len(probabilities) == 12
