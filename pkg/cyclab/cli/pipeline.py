"""
Staged experiment pipeline. Each stage writes its artifacts under <out>/<stage>/ and a stage.json marker
keyed by a hash of its parameters and of its upstream stages; a stage whose marker matches and whose outputs
all exist is not recomputed.
"""
import os
import warnings
import numpy as np
import torch
from collections import OrderedDict
from typing import Any, Callable, Dict, List, Optional
from ..interventions import (
    DASTrainConfig, Site, dim_sweep, layer_sweep, load_subspace, principal_angle_overlap, random_overlap_baseline,
    residual_patch_sweep, save_subspace, train_das, union_subspace, cross_task_report
)
from ..learner import train
from ..models import (
    ModelConfig, TrainSchedule, TransformerModel, load_checkpoint, save_checkpoint, predict,
    model_correct_predicate
)
from ..numerics import MANIFEST_NAME
from ..neurons import (
    select_neurons, score_histogram, ablation_table, ablate, error_by_magnitude, mean_activation_by_sum,
    cluster_by_cosine, assign_periods, downproj_plane_export, split_mixed_counts, neuron_records
)
from ..probes import (
    ProbeTrainConfig, r2_sweep, save_fourier_probes, load_fourier_probes, plane_projection_report,
    probe_orthogonality, circular_probe_for_task, period_overlaps, select_steering_periods, overlap_report
)
from ..steering import SteeringConfig, steering_matrix, alpha_sweep
from ..interventions import collect_states
from ..tasks import (
    PromptInstance, generate_dataset, generate_explicit_mod, save_dataset, load_dataset, accuracy_breakdown,
    is_in_cycle, sample_counterfactual_pairs
)
from ..utils import (
    ConfigError, ResolutionError, config_hash, set_seed, save_json, load_json
)
from .config import ExperimentConfig, STAGES, STAGE_DEPENDENCIES
from .report import BUNDLE_NAME, ReportBundle, to_plain


__all__ = ['run_pipeline', 'resolve_inputs', 'PipelineContext', 'STAGE_FILE']


STAGE_FILE = 'stage.json'


class PipelineContext:
    """Shared state of one pipeline run: config, bundle, and lazily loaded upstream artifacts"""
    def __init__(self, config: ExperimentConfig, bundle: ReportBundle, verbose: bool=True):
        self.config, self.bundle, self.verbose = config, bundle, verbose
        self.keys: Dict[str, str] = {}
        self._datasets = None
        self._model = None
        self._outputs: Dict[str, Dict[str, Any]] = {}
        self._stage = None
        self._written: List = []

    def stage_dir(self, stage: str) -> str: return os.path.join(self.config.out, stage)

    def marker(self, stage: str) -> Optional[Dict[str, Any]]:
        path = os.path.join(self.stage_dir(stage), STAGE_FILE)
        return load_json(path) if os.path.exists(path) else None

    def has_output(self, stage: str) -> bool:
        return stage in self._outputs or self.marker(stage) is not None

    def extra(self, stage: str) -> Dict[str, Any]:
        """Stage-specific metadata written with the stage's marker"""
        if stage in self._outputs:
            return self._outputs[stage]
        marker = self.marker(stage)
        if marker is None:
            raise ResolutionError("no output of stage '" + stage + "' in " + self.config.out, self._stage or stage)
        return marker['extra']

    # tables written through the context are remembered as the current stage's outputs
    def add_table(self, name: str, rows: List[Dict]):
        self._written.append(('table', name, self.bundle.add_table(name, rows)))

    def add_grid(self, name: str, data: Any):
        self._written.append(('grid', name, self.bundle.add_grid(name, data)))

    @property
    def datasets(self) -> 'OrderedDict[str, List[PromptInstance]]':
        if self._datasets is None:
            directory = self.stage_dir('gen')
            self._datasets = OrderedDict()
            for key in self.config.task_specs():
                path = os.path.join(directory, key + '.jsonl')
                if not os.path.exists(path):
                    raise ResolutionError("missing dataset " + path, self._stage or 'gen')
                self._datasets[key] = load_dataset(path)
        return self._datasets

    def training_datasets(self) -> 'OrderedDict[str, List[PromptInstance]]':
        return OrderedDict((key, self.datasets[key]) for key in self.config.training_tasks())

    @property
    def model(self) -> TransformerModel:
        if self._model is None:
            if 'train' in self.config.stages or self.config.model is None:
                directory = os.path.join(self.stage_dir('train'), 'checkpoint')
            else:
                directory = self.config.model
            self._model, _ = load_checkpoint(directory)
        return self._model

    def subspace(self, task: str, variable: str='output_concept'):
        saved = self.extra('das').get('subspaces', {}).get(task, {})
        if variable not in saved:
            return None
        return load_subspace(os.path.join(self.config.out, saved[variable]))

    def probes(self, layer: int):
        return load_fourier_probes(os.path.join(self.stage_dir('probe'), 'fourier', 'layer_' + str(layer)))

    def _rng(self) -> np.random.Generator:
        return np.random.default_rng(self.config.seed)


def resolve_inputs(config: ExperimentConfig):
    """Every input of every requested stage is produced by this run or already on disk"""
    for stage in config.ordered_stages():
        for dependency in STAGE_DEPENDENCIES[stage]:
            if dependency in config.stages:
                continue
            if dependency == 'train' and config.model is not None:
                if not os.path.exists(os.path.join(config.model, MANIFEST_NAME)):
                    raise ResolutionError("model checkpoint " + config.model + " does not exist", stage)
                continue
            marker = os.path.join(config.out, dependency, STAGE_FILE)
            if not os.path.exists(marker):
                raise ResolutionError(
                    "input '" + dependency + "' is neither produced by this run nor found at " + marker, stage
                )


def _stage_key(config: ExperimentConfig, stage: str, upstream: Dict[str, str]) -> str:
    inputs = OrderedDict([
        ('stage', stage), ('params', config.params[stage]), ('seed', config.seed), ('tasks', config.tasks),
        ('upstream', OrderedDict((dep, upstream.get(dep)) for dep in STAGE_DEPENDENCIES[stage]))
    ])
    if stage == 'train' or 'train' in STAGE_DEPENDENCIES[stage]:
        inputs['model'] = config.model if 'train' not in config.stages else None
    return config_hash(inputs)


# Stages


def _restrict(entries: 'OrderedDict[str, Any]', names: Optional[List[str]], name_of: Callable[[Any], str]):
    """Entries whose task key or task name is among `names`; None keeps them all"""
    if names is None:
        return entries
    chosen = OrderedDict((key, value) for key, value in entries.items() if key in names or name_of(value) in names)
    if not chosen:
        raise ConfigError("none of the tasks " + str(list(names)) + " is configured")
    return chosen


def _gen(ctx: PipelineContext) -> Dict[str, Any]:
    directory = ctx.stage_dir('gen')
    os.makedirs(directory, exist_ok=True)
    specs = _restrict(OrderedDict(ctx.config.task_specs()), ctx.config.params['gen']['tasks'], lambda spec: spec.name)
    rows = []
    for key, spec in specs.items():
        if spec.name == 'explicit_mod':
            a_range = (spec.concept_start, spec.concept_start + len(spec.concept_names) - 1)
            dataset = generate_explicit_mod(a_range, spec.offset_range, seed=ctx.config.seed)
        else:
            dataset = generate_dataset(spec)
        save_dataset(dataset, os.path.join(directory, key + '.jsonl'))
        rows.append(OrderedDict([
            ('task', key), ('template_variant', spec.template_variant), ('n_prompts', len(dataset)),
            ('n_in_cycle', sum(is_in_cycle(p) for p in dataset))
        ]))
    ctx.add_table('dataset_summary', rows)
    return {'datasets': sorted(specs)}


def _train(ctx: PipelineContext) -> Dict[str, Any]:
    params = ctx.config.params['train']
    model_params = dict(params['model'])
    model_params.setdefault('seed', ctx.config.seed)
    schedule_params = dict(params['schedule'])
    schedule_params.setdefault('seed', ctx.config.seed)
    model = TransformerModel(ModelConfig.from_dict(model_params))
    schedule = TrainSchedule.from_dict(schedule_params)

    checkpoint = os.path.join(ctx.stage_dir('train'), 'checkpoint')
    log = train(model, ctx.training_datasets(), schedule, checkpoint_dir=checkpoint, verbose=ctx.verbose)
    if log.checkpoint is None:
        save_checkpoint(model, checkpoint, verbose=ctx.verbose)
    record = log.to_dict()
    record['checkpoint'] = 'train/checkpoint'
    save_json(to_plain(record), os.path.join(ctx.stage_dir('train'), 'training_log.json'))
    ctx.add_grid('training_log', record)
    ctx._model = None
    return {'checkpoint': 'train/checkpoint', 'best_in_cycle_accuracy': log.best_in_cycle_accuracy}


def _report(ctx: PipelineContext) -> Dict[str, Any]:
    breakdown_rows, per_sum_rows = [], []
    for key, dataset in ctx.datasets.items():
        report = accuracy_breakdown(predict(ctx.model, dataset), dataset)
        row = report.row()
        row['task'] = key
        breakdown_rows.append(row)
        for r in report.per_sum_rows():
            r['task'] = key
            per_sum_rows.append(r)
    ctx.add_table('table2_accuracy_breakdown', breakdown_rows)
    ctx.add_table('table3_accuracy_by_sum', per_sum_rows)
    return {}


def _layers(ctx: PipelineContext, layers) -> List[int]:
    return list(range(ctx.model.config.n_layers)) if layers is None else [int(layer) for layer in layers]


def _task_name(dataset: List[PromptInstance]) -> str: return dataset[0].spec.name


def _das(ctx: PipelineContext) -> Dict[str, Any]:
    params, seed = ctx.config.params['das'], ctx.config.seed
    model, layers = ctx.model, _layers(ctx, params['layers'])
    cfg = DASTrainConfig(params['k'], params['n_epoch'], params['lr'], params['batch_size'], seed=seed)
    layer_rows, dim_rows, summary, saved = [], [], [], OrderedDict()

    for key, dataset in _restrict(ctx.training_datasets(), params['tasks'], _task_name).items():
        predicate = model_correct_predicate(model, dataset) if params['correct_only'] else None
        train_pairs, test_pairs = sample_counterfactual_pairs(
            dataset, params['variable'], params['n_pairs'], params['n_test'], seed, predicate
        )
        rows = layer_sweep(model, train_pairs, params['variable'], layers, params['hook_points'], cfg, test_pairs)
        layer_rows += rows
        best = max(rows, key=lambda r: r['test_iia'])
        site = Site(best['layer'], best['hook_point'])
        sweep = dim_sweep(model, train_pairs, params['variable'], site, params['k_values'], cfg, test_pairs,
                          ctx.verbose)
        dim_rows += sweep.curve

        saved[key] = OrderedDict()
        found = [(params['variable'], sweep.best)]
        for variable in [v for v in params['input_variables'] if v != params['variable']]:
            pairs, held_out = sample_counterfactual_pairs(
                dataset, variable, params['n_pairs'], params['n_test'], seed, predicate
            )
            found.append((variable, train_das(
                model, pairs, variable, site.layer, params['input_hook_point'], cfg, held_out
            )))
        for variable, subspace in found:
            relative = os.path.join('das', key, variable)
            save_subspace(subspace, os.path.join(ctx.config.out, relative))
            saved[key][variable] = relative
            summary.append(OrderedDict([
                ('task', key), ('variable', variable), ('layer', subspace.layer),
                ('hook_point', subspace.hook_point), ('k', subspace.k), ('test_iia', subspace.test_iia),
                ('test_iia_differing', subspace.metadata.get('test_iia_differing'))
            ]))

    ctx.add_table('iia_by_layer', layer_rows)
    ctx.add_table('das_dim_sweep', dim_rows)
    ctx.add_table('fig4_das_iia', summary)

    # overlap of the tasks' output subspaces against a random baseline of matching shape
    tasks = list(saved)
    overlap_rows = []
    for i, a in enumerate(tasks):
        for b in tasks[i + 1:]:
            sa = load_subspace(os.path.join(ctx.config.out, saved[a][params['variable']]))
            sb = load_subspace(os.path.join(ctx.config.out, saved[b][params['variable']]))
            baseline = random_overlap_baseline(sa.d_model, sa.k, sb.k, n_pairs=200, seed=seed)
            overlap_rows.append(OrderedDict([
                ('task_a', a), ('task_b', b), ('k_a', sa.k), ('k_b', sb.k),
                ('overlap', principal_angle_overlap(sa, sb)), ('random_mean', baseline['mean']),
                ('random_p97.5', baseline['p97.5'])
            ]))
    if overlap_rows:
        ctx.add_table('das_subspace_overlap', overlap_rows)
    return {'subspaces': saved}


def _patch(ctx: PipelineContext) -> Dict[str, Any]:
    params = ctx.config.params['patch']
    rows = []
    for key, dataset in ctx.training_datasets().items():
        pairs, _ = sample_counterfactual_pairs(dataset, params['variable'], params['n_pairs'], 0, ctx.config.seed)
        for row in residual_patch_sweep(ctx.model, pairs, _layers(ctx, params['layers']), params['hook_point']):
            row['task'] = key
            rows.append(row)
    ctx.add_table('residual_patch_sweep', rows)
    return {}


def _crosspatch(ctx: PipelineContext) -> Dict[str, Any]:
    params = ctx.config.params['crosspatch']
    rows, summary, heatmaps = [], [], OrderedDict()
    for source, target in params['pairs']:
        a, b = ctx.subspace(source), ctx.subspace(target)
        if a is None or b is None or source not in ctx.datasets or target not in ctx.datasets:
            warnings.warn("skipping cross-task patching " + source + " -> " + target + ": missing subspace or task")
            continue
        union = union_subspace(a, b)
        report = cross_task_report(
            ctx.model, ctx.datasets[source], ctx.datasets[target], union, n_pairs=params['n_pairs'],
            seed=ctx.config.seed
        )
        for row in report['rows']:
            row['source'], row['target'] = source, target
            rows.append(row)
        summary.append(OrderedDict([
            ('source', source), ('target', target), ('union_k', union.k), ('expected_rate', report['expected_rate']),
            ('source_token_rate', report['source_token_rate'])
        ]))
        heatmaps[source + '->' + target] = {'answers': report['answers'], 'heatmap': report['heatmap']}
    ctx.add_table('cross_task_patch', rows)
    ctx.add_table('cross_task_summary', summary)
    ctx.add_grid('cross_task_heatmap', heatmaps)
    return {}


def _probe(ctx: PipelineContext) -> Dict[str, Any]:
    params, seed = ctx.config.params['probe'], ctx.config.seed
    model = ctx.model
    extra = {}
    if params['fourier']:
        if params['task'] not in ctx.datasets:
            raise ConfigError("probe task " + repr(params['task']) + " is not among the configured tasks")
        dataset = ctx.datasets[params['task']]
        lo, hi = params['periods']
        cfg = ProbeTrainConfig(params['n_epoch'], params['lr'], params['batch_size'], seed=seed)
        sweep = r2_sweep(model, dataset, _layers(ctx, params['layers']), range(lo, hi + 1), cfg, params['hook_point'])
        ctx.add_table('fourier_r2', sweep.rows())

        scores = np.nan_to_num(sweep.grid, nan=-np.inf).max(axis=1)
        best_layer = sweep.layers[int(np.argmax(scores))]
        for layer, probes in sweep.probes.items():
            save_fourier_probes(probes, os.path.join(ctx.stage_dir('probe'), 'fourier', 'layer_' + str(layer)))
        best = sweep.probes[best_layer]
        ctx.add_table('probe_orthogonality', probe_orthogonality(best))
        shown = [probe for probe in best if probe.period in (2, 5, 10, 100)]
        if shown:
            states = collect_states(model, dataset, Site(best_layer, params['hook_point']))
            ctx.add_table('probe_plane_projection',
                          plane_projection_report(shown, states, [p.pre_modulo_sum for p in dataset]))
        extra.update({'layers': sweep.layers, 'best_layer': best_layer})

    if params['circular']:
        rows, scatter = [], OrderedDict()
        for key, dataset in _restrict(ctx.training_datasets(), params['circular_tasks'], _task_name).items():
            if not dataset[0].spec.is_cyclic:
                continue
            for layer in _layers(ctx, params['circular_layers']):
                probe = circular_probe_for_task(model, dataset, layer, params['hook_point'], d_pca=params['d_pca'],
                                                seed=seed)
                rows.append(OrderedDict([
                    ('task', key), ('layer', layer), ('period', probe.period), ('r2_sin', probe.r2_sin),
                    ('r2_cos', probe.r2_cos)
                ]))
                scatter[key + '|' + str(layer)] = probe.scatter
        ctx.add_table('circular_probe_r2', rows)
        ctx.add_grid('circular_probe_scatter', scatter)
    return extra


def _steering_layer(ctx: PipelineContext) -> int:
    params = ctx.config.params['steer']
    if params['layer'] is not None:
        return int(params['layer'])
    if ctx.has_output('das'):
        subspace = ctx.subspace('addition')
        if subspace is not None and subspace.layer in ctx.extra('probe').get('layers', []):
            return subspace.layer
    if 'best_layer' not in ctx.extra('probe'):
        raise ResolutionError("no Fourier probes to steer with", 'steer')
    return ctx.extra('probe')['best_layer']


def _long_rows(report, matrix=None, extra: Dict[str, Any]=None) -> List[Dict]:
    """Steering matrix as (task, alpha, target, answer, probability) rows"""
    matrix = report.matrix if matrix is None else matrix
    rows = []
    for i, target in enumerate(report.targets):
        for j, answer in enumerate(report.columns):
            row = OrderedDict([('task', report.task), ('alpha', report.alpha), ('target', target),
                               ('expected', report.expected[i]), ('answer', answer),
                               ('probability', float(matrix[i, j]))])
            row.update(extra or {})
            rows.append(row)
    return rows


def _steer(ctx: PipelineContext) -> Dict[str, Any]:
    params = ctx.config.params['steer']
    layer = _steering_layer(ctx)
    probes = ctx.probes(layer)
    rng = ctx._rng()
    matrix_rows, prompt_rows, sweep_rows, overlap_rows, used = [], [], [], [], OrderedDict()

    for task in params['tasks']:
        if task not in ctx.datasets:
            warnings.warn("skipping steering on unknown task " + task)
            continue
        dataset = ctx.datasets[task]
        subspace = ctx.subspace(task) if ctx.has_output('das') else None
        if params['periods'] is not None:
            periods = [int(p) for p in params['periods']]
        elif subspace is not None:
            overlap_rows += overlap_report(probes, {task: subspace})
            periods = select_steering_periods(period_overlaps(probes, subspace), params['period_threshold'])
        else:
            periods = list(SteeringConfig().periods)
        if not periods:
            continue
        used[task] = periods
        spec = dataset[0].spec
        if params['targets'] is not None:
            targets = [int(t) for t in params['targets']]
        elif spec.is_cyclic:
            targets = [spec.concept_value(concept) for concept in spec.concept_names]
        else:
            lo, hi = params['addition_targets']
            targets = list(range(lo, hi + 1))
        chosen = sorted(rng.choice(len(dataset), size=min(params['n_prompts'], len(dataset)), replace=False))
        prompts = [dataset[int(i)] for i in chosen]
        cfg = SteeringConfig(periods=periods, alpha=params['alpha'], layer=layer, hook_point=probes[0].hook_point)

        report = steering_matrix(ctx.model, prompts, targets, probes, cfg)
        matrix_rows += _long_rows(report)
        for label, matrix in report.per_prompt.items():
            prompt_rows += _long_rows(report, matrix, {'prompt': label})
        for alpha, swept in alpha_sweep(ctx.model, prompts, targets, probes, cfg, params['alphas']).items():
            for target, expected, mass in zip(swept.targets, swept.expected, swept.diagonal_mass()):
                sweep_rows.append(OrderedDict([('task', task), ('alpha', alpha), ('target', target),
                                               ('expected', expected), ('expected_mass', mass)]))

    ctx.add_table('fig7_steering_matrix', matrix_rows)
    ctx.add_table('steering_per_prompt', prompt_rows)
    ctx.add_table('steering_alpha_sweep', sweep_rows)
    if overlap_rows:
        ctx.add_table('probe_subspace_overlap', overlap_rows)
    return {'layer': layer, 'periods': used}


def _neurons(ctx: PipelineContext) -> Dict[str, Any]:
    params = ctx.config.params['neurons']
    model = ctx.model
    tasks = _restrict(ctx.training_datasets(), params['tasks'], _task_name)
    outputs = OrderedDict((task, ctx.subspace(task)) for task in tasks if ctx.subspace(task) is not None)
    if not outputs:
        raise ResolutionError("no output subspaces to score neurons against", 'neurons')
    reference = 'addition' if 'addition' in outputs else next(iter(outputs))
    layer = int(params['layer']) if params['layer'] is not None else outputs[reference].layer

    selection = select_neurons(model, layer, outputs, params['tau'])
    ctx.add_table('write_scores', [
        OrderedDict([('task', task), ('neuron', i), ('write_score', float(score))])
        for task, scores in selection.scores.items() for i, score in enumerate(scores)
    ])
    ctx.add_table('write_score_histogram', [
        dict(row, task=task) for task, scores in selection.scores.items()
        for row in score_histogram(scores, params['histogram_bins'])
    ])
    ctx.add_table('neuron_sets', [
        OrderedDict([('task', task), ('tau', s.tau), ('size', len(s)), ('members', " ".join(map(str, s.members)))])
        for task, s in selection.sets.items()
    ])
    ctx.add_grid('neuron_set_relations', {
        'correlations': selection.correlations, 'missing_from_' + reference: selection.differences(reference)
    })

    neurons = selection.sets[reference].members
    everything = [prompt for dataset in ctx.datasets.values() for prompt in dataset]
    ctx.add_table('table4_ablation', ablation_table(model, everything, neurons, layer))

    if reference in ctx.datasets and not ctx.datasets[reference][0].spec.is_cyclic:
        dataset = ctx.datasets[reference]
        rows = error_by_magnitude(predict(model, dataset), dataset, label='clean')
        rows += error_by_magnitude(ablate(model, dataset, neurons, 'zero', layer).predictions, dataset, label='zero')
        ctx.add_table('ablation_error_by_magnitude', rows)
    if not neurons:
        warnings.warn("no neuron exceeds tau=" + str(params['tau']) + " at layer " + str(layer))
        return {'layer': layer, 'neurons': []}

    ribbons = mean_activation_by_sum(model, ctx.datasets[reference], neurons, layer)
    ctx.add_table('fig8_ribbons', ribbons.rows(clip=params['clip']))
    down = model.mlp_weights(layer).down[neurons]
    clusters = cluster_by_cosine(down, neurons, cut=params['cut'])
    ctx.add_table('neuron_clusters', [
        OrderedDict([('neuron', n), ('cluster', c)]) for n, c in zip(clusters.neurons, clusters.labels)
    ])
    if params['report'] == 'summary':
        return {'layer': layer, 'neurons': neurons}

    probes = []
    if ctx.has_output('probe') and layer in ctx.extra('probe').get('layers', []):
        probes = ctx.probes(layer)
        assigned = assign_periods(model, layer, neurons, probes)
        ctx.add_table('neuron_periods', [dict(row, baseline=assigned['baseline']) for row in assigned['assignments']])
        periods = [p.period for p in probes if p.period in (2, 5, 10, 100)] or None
        export = OrderedDict()
        for prompt in ctx.datasets[reference][:params['export_prompts']]:
            export[" ".join(prompt.tokens[1:])] = downproj_plane_export(model, layer, neurons, probes, prompt, periods)
        ctx.add_grid('downproj_plane', export)

    inputs = OrderedDict()
    for task in outputs:
        concept, offset = ctx.subspace(task, 'input_concept'), ctx.subspace(task, 'offset')
        if concept is not None and offset is not None:
            inputs[task] = (concept, offset)
    if inputs:
        split = split_mixed_counts(model, layer, neurons, inputs)
        ctx.add_table('split_mixed_counts', [
            OrderedDict([('task', task), ('split', c['split']), ('mixed', c['mixed'])])
            for task, c in split['counts'].items()
        ])
        ctx.add_table('neuron_read_scores', split['rows'])
    records = neuron_records(model, layer, neurons, outputs, probes, inputs)
    ctx.add_grid('neuron_records', [record.to_dict() for record in records])
    return {'layer': layer, 'neurons': neurons}


STAGE_RUNNERS: Dict[str, Callable[[PipelineContext], Dict[str, Any]]] = {
    'gen': _gen, 'train': _train, 'das': _das, 'patch': _patch, 'crosspatch': _crosspatch, 'probe': _probe,
    'steer': _steer, 'neurons': _neurons, 'report': _report
}


def _cached(ctx: PipelineContext, stage: str, key: str) -> bool:
    marker = ctx.marker(stage)
    if marker is None or marker.get('key') != key:
        return False
    outputs = list(marker['tables'].values()) + list(marker['grids'].values()) + marker.get('artifacts', [])
    return all(os.path.exists(os.path.join(ctx.config.out, path)) for path in outputs)


def _run_stage(ctx: PipelineContext, stage: str):
    upstream = {}
    for dependency in STAGE_DEPENDENCIES[stage]:
        if dependency in ctx.keys:
            upstream[dependency] = ctx.keys[dependency]
        elif ctx.marker(dependency) is not None:
            upstream[dependency] = ctx.marker(dependency)['key']
    key = _stage_key(ctx.config, stage, upstream)
    ctx.keys[stage] = key

    if _cached(ctx, stage, key):
        marker = ctx.marker(stage)
        ctx.bundle.tables.update(marker['tables'])
        ctx.bundle.grids.update(marker['grids'])
        ctx._outputs[stage] = marker['extra']
        if ctx.verbose: print("Stage " + stage + ": up to date")
    else:
        if ctx.verbose: print("Stage " + stage)
        set_seed(ctx.config.seed + STAGES.index(stage))
        ctx._stage, ctx._written = stage, []
        os.makedirs(ctx.stage_dir(stage), exist_ok=True)
        extra = to_plain(STAGE_RUNNERS[stage](ctx))
        ctx._outputs[stage] = extra
        artifacts = sorted(
            os.path.relpath(root, ctx.config.out)
            for root, _, files in os.walk(ctx.stage_dir(stage)) if MANIFEST_NAME in files
        )
        save_json(OrderedDict([
            ('stage', stage), ('key', key),
            ('tables', OrderedDict((name, path) for kind, name, path in ctx._written if kind == 'table')),
            ('grids', OrderedDict((name, path) for kind, name, path in ctx._written if kind == 'grid')),
            ('artifacts', artifacts), ('extra', extra)
        ]), os.path.join(ctx.stage_dir(stage), STAGE_FILE))
    ctx.bundle.record_stage(stage, 'completed', sorted(ctx.marker(stage)['tables']) + sorted(ctx.marker(stage)['grids']))


def _open_bundle(config: ExperimentConfig) -> ReportBundle:
    """Continue the bundle of an earlier run with the same config hash and seed (per-stage invocations)"""
    bundle = ReportBundle(config.out, config.hash(), config.seed)
    if os.path.exists(os.path.join(config.out, BUNDLE_NAME)):
        previous = ReportBundle.load(config.out)
        if (previous.config_hash, previous.seed) == (bundle.config_hash, bundle.seed):
            rerun = set(config.stages)
            bundle.tables.update(previous.tables)
            bundle.grids.update(previous.grids)
            bundle.stages.update((s, v) for s, v in previous.stages.items() if s not in rerun)
            bundle.failures = [f for f in previous.failures if f['stage'] not in rerun]
    return bundle


def run_pipeline(config: ExperimentConfig, verbose: bool=True) -> ReportBundle:
    """
    Run the configured stages in dependency order and collect their tables into the bundle at config.out.
    A failing stage is recorded in the bundle (exit code 1 for errors outside the LabError family);
    stages depending on it are skipped.

    :raises ResolutionError: when a stage input is neither produced by this run nor on disk
    """
    resolve_inputs(config)
    if config.threads is not None:
        torch.set_num_threads(config.threads)
    os.makedirs(config.out, exist_ok=True)
    bundle = _open_bundle(config)
    ctx = PipelineContext(config, bundle, verbose)

    failed = set()
    for stage in config.ordered_stages():
        blocked = [dependency for dependency in STAGE_DEPENDENCIES[stage] if dependency in failed]
        if blocked:
            bundle.record_stage(stage, 'skipped')
            failed.add(stage)
            continue
        try:
            _run_stage(ctx, stage)
        except (ConfigError, ResolutionError):
            raise
        except Exception as e:
            if verbose: print("Stage " + stage + " failed: " + type(e).__name__ + ": " + str(e))
            bundle.record_failure(stage, e)
            failed.add(stage)
        bundle.write()
    bundle.write()
    return bundle
