from cyclab.tasks import *
from cyclab.utils import ArtifactError, DomainError, SamplingError, GenerationError
import numpy as np
import pytest


class TestCausalModel:
    @pytest.mark.parametrize("name", ['months', 'weekdays', 'hours', 'addition'])
    def test_causal_eval_is_modular_arithmetic(self, name):
        spec = get_task_spec(name)
        model = CausalModel(spec)
        for concept in spec.concept_names:
            for offset in spec.offsets:
                answer = causal_eval(model, concept, offset)
                if name == 'months':
                    m = (MONTHS.index(concept) + 1 + offset) % 12
                    assert answer == MONTHS[(m - 1) % 12]
                elif name == 'weekdays':
                    m = (WEEKDAYS.index(concept) + 1 + offset) % 7
                    assert answer == WEEKDAYS[(m - 1) % 7]
                elif name == 'hours':
                    assert answer == HOURS[(HOURS.index(concept) + offset) % 24]
                else:
                    assert answer == str(int(concept) + offset)

    def test_examples(self):
        months = CausalModel(get_task_spec('months'))
        assert causal_eval(months, 'September', 5) == 'February'
        assert causal_eval(months, 'December', 12) == 'December'
        hours = CausalModel(get_task_spec('hours'))
        assert causal_eval(hours, '23:00', 1) == '00:00'
        assert months.num_to_con(14) == 'February'

    def test_weekday_offset_shifts_enumeration(self):
        shifted = get_task_spec('weekdays', weekday_offset=4)
        assert shifted.concept_value('Monday') == 5
        # the answer does not depend on how the cycle is enumerated
        assert causal_eval(CausalModel(shifted), 'Friday', 3) == 'Monday'

    @pytest.mark.parametrize("name", ['months', 'weekdays', 'hours', 'addition'])
    def test_interchange_matches_reevaluation(self, name):
        spec = get_task_spec(name)
        model = CausalModel(spec)
        dataset = generate_dataset(spec)
        rng = np.random.default_rng(0)
        for i, j in rng.integers(0, len(dataset), size=(2500, 2)):
            o, c = dataset[int(i)], dataset[int(j)]
            assert causal_interchange(model, o, c, 'input_concept') == causal_eval(model, c.concept, o.offset)
            assert causal_interchange(model, o, c, 'offset') == causal_eval(model, o.concept, c.offset)
            assert causal_interchange(model, o, c, 'output_concept') == c.gold_label

    def test_interchange_across_tasks(self):
        months, hours = generate_dataset(get_task_spec('months')), generate_dataset(get_task_spec('hours'))
        with pytest.raises(DomainError):
            causal_interchange(CausalModel(months[0].spec), months[0], hours[0], 'offset')

    def test_unknown_variable(self):
        model = CausalModel(get_task_spec('months'))
        with pytest.raises(DomainError):
            model.run('May', 3, {'Q': 1})


class TestDatasets:
    def test_sizes(self):
        assert len(generate_dataset(get_task_spec('months'))) == 12 * 24
        assert len(generate_dataset(get_task_spec('weekdays'))) == 7 * 14
        assert len(generate_dataset(get_task_spec('hours'))) == 24 * 48
        assert len(generate_dataset(get_task_spec('addition', a_range=(1, 10), b_range=(1, 5)))) == 50

    def test_prompt_fields(self):
        prompt = make_prompt(get_task_spec('months'), 'September', 5)
        assert prompt.tokens[prompt.concept_position] == 'September'
        assert prompt.tokens[prompt.offset_position] == 'five'
        assert prompt.pre_modulo_sum == 14
        assert prompt.gold_label == 'February'
        assert prompt.gold_id == default_vocabulary().token_id('February')
        assert prompt.position('final') == len(prompt.tokens) - 1
        assert prompt.variable_value('offset') == 5

    def test_template_variants(self):
        spec = get_task_spec('months', template_variant=2)
        prompt = generate_dataset(spec)[0]
        assert 'pregnant' in prompt.tokens
        with pytest.raises(DomainError):
            get_template('months', 3)

    def test_explicit_mod(self):
        dataset = generate_explicit_mod((1, 50), (1, 50), (2, 10), sample_n=200, seed=1, max_sum_factor=3)
        assert len(dataset) == 200
        for prompt in dataset:
            assert prompt.pre_modulo_sum <= 3 * prompt.modulus
            assert prompt.gold_label == str(prompt.pre_modulo_sum % prompt.modulus)
            assert prompt.period == prompt.modulus
        with pytest.raises(GenerationError):
            generate_explicit_mod((100, 101), (100, 101), (2, 2), max_sum_factor=1)

    def test_counterfactual_pairs(self):
        spec = get_task_spec('weekdays')
        train, test = sample_counterfactual_pairs(spec, 'offset', 100, 20, seed=3)
        assert len(train) == 80 and len(test) == 20
        again, _ = sample_counterfactual_pairs(spec, 'offset', 100, 20, seed=3)
        assert [p.target_label for p in train] == [p.target_label for p in again]
        model = CausalModel(spec)
        for pair in train:
            assert pair.target_label == causal_eval(model, pair.original.concept, pair.counterfactual.offset)

    def test_correct_only_filter(self):
        spec = get_task_spec('months')
        train, _ = sample_counterfactual_pairs(spec, 'input_concept', 50, 0, 0, lambda p: p.concept == 'May')
        assert all(p.original.concept == 'May' and p.counterfactual.concept == 'May' for p in train)
        with pytest.raises(SamplingError):
            sample_counterfactual_pairs(spec, 'input_concept', 10, 0, 0, lambda p: False)
        with pytest.raises(SamplingError):
            sample_counterfactual_pairs(spec, 'input_concept', 10, 11, 0)

    def test_save_load(self, tmp_path):
        dataset = generate_dataset(get_task_spec('hours', template_variant=1))
        path = str(tmp_path / 'hours.jsonl')
        save_dataset(dataset, path)
        assert load_dataset(path) == dataset

        with open(path) as f:
            lines = f.readlines()
        with open(path, 'w') as f:
            f.writelines(lines[:3] + [lines[3].replace('"offset": 4', '"offset": 5')] + lines[4:])
        with pytest.raises(ArtifactError, match="line 4"):
            load_dataset(path)


class TestBreakdown:
    def test_accuracy_breakdown(self):
        dataset = generate_dataset(get_task_spec('weekdays'))
        # right exactly on offsets within one cycle
        predictions = [p.gold_id if p.offset <= 7 else default_vocabulary().token_id('<pad>') for p in dataset]
        report = accuracy_breakdown(predictions, dataset)
        assert report.overall == pytest.approx(0.5)
        assert report.by_offset['1..p'] == 1.0
        assert report.by_offset['p..2p'] == 0.0
        assert report.row()['offset 1..p'] == 1.0
        assert sum(count for _, count in report.per_sum.values()) == len(dataset)

    def test_empty_cells_are_none(self):
        dataset = [p for p in generate_dataset(get_task_spec('weekdays')) if p.offset <= 2]
        report = accuracy_breakdown([p.gold_label for p in dataset], dataset)
        assert report.overall == 1.0
        assert report.by_offset['p..2p'] is None

    def test_in_cycle(self):
        months = generate_dataset(get_task_spec('months'))
        assert sum(is_in_cycle(p) for p in months) == 12 * 12
        addition = make_prompt(get_task_spec('addition'), '60', 50)
        assert not is_in_cycle(addition)

    def test_breakdown_by_task(self):
        dataset = generate_dataset(get_task_spec('weekdays')) + generate_dataset(get_task_spec('months'))
        reports = breakdown_by_task([p.gold_id for p in dataset], dataset)
        assert list(reports) == ['weekdays', 'months']
        assert all(report.overall == 1.0 for report in reports.values())
