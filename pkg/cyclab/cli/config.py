"""Versioned experiment configuration: which stages to run, on which tasks, with which parameters"""
import copy
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple
from ..interventions import DASTrainConfig, DAS_N_PAIRS, DAS_N_TEST
from ..models import ModelConfig, TrainSchedule
from ..tasks import TaskSpec, TASK_NAMES, get_task_spec
from ..utils import ConfigError, LabError, canonical_json, config_hash, load_json


__all__ = [
    'CONFIG_VERSION', 'STAGES', 'STAGE_DEPENDENCIES', 'DEFAULT_PARAMS', 'ExperimentConfig', 'task_key',
    'parse_range', 'NEURON_REPORTS'
]


CONFIG_VERSION = 1
# canonical (dependency) order
STAGES = ('gen', 'train', 'das', 'patch', 'crosspatch', 'probe', 'steer', 'neurons', 'report')
STAGE_DEPENDENCIES = {
    'gen': (),
    'train': ('gen',),
    'das': ('gen', 'train'),
    'patch': ('gen', 'train'),
    'crosspatch': ('gen', 'train', 'das'),
    'probe': ('gen', 'train'),
    'steer': ('gen', 'train', 'probe'),
    'neurons': ('gen', 'train', 'das'),
    'report': ('gen', 'train'),
}

_DAS = DASTrainConfig()

DEFAULT_PARAMS: Dict[str, Dict[str, Any]] = {
    'gen': {'tasks': None},
    'train': {'model': {}, 'schedule': {}},
    'das': {
        'tasks': None, 'variable': 'output_concept', 'layers': None,
        'hook_points': ['resid_post_attn', 'resid_post_mlp'], 'k': 8, 'k_values': [1, 2, 4, 8, 16],
        'n_pairs': DAS_N_PAIRS, 'n_test': DAS_N_TEST, 'n_epoch': _DAS.n_epoch, 'lr': _DAS.lr,
        'batch_size': _DAS.batch_size, 'correct_only': True, 'input_variables': ['input_concept', 'offset'],
        'input_hook_point': 'resid_post_attn'
    },
    'patch': {'n_pairs': 200, 'variable': 'output_concept', 'hook_point': 'resid_post_mlp', 'layers': None},
    'crosspatch': {'pairs': [['addition', 'months'], ['addition', 'weekdays'], ['addition', 'hours']],
                   'n_pairs': 500},
    'probe': {
        'task': 'addition', 'layers': None, 'periods': [2, 150], 'n_epoch': 200, 'lr': 1e-3, 'batch_size': 64,
        'hook_point': 'resid_post_mlp', 'fourier': True, 'circular': True, 'circular_tasks': None,
        'circular_layers': None, 'd_pca': 5
    },
    'steer': {
        'tasks': ['addition', 'months', 'weekdays', 'hours'], 'layer': None, 'periods': None, 'targets': None,
        'period_threshold': 0.2, 'alpha': 10.0, 'alphas': [0.0, 1.0, 2.0, 5.0, 10.0, 20.0], 'n_prompts': 20,
        'addition_targets': [10, 19]
    },
    'neurons': {
        'tasks': None, 'layer': None, 'tau': 0.4, 'clip': 2.0, 'cut': 0.95, 'histogram_bins': 20,
        'export_prompts': 3, 'report': 'full'
    },
    'report': {},
}

_POSITIVE = {
    'das': ('k', 'n_pairs', 'n_epoch', 'batch_size', 'lr'),
    'patch': ('n_pairs',),
    'crosspatch': ('n_pairs',),
    'probe': ('n_epoch', 'batch_size', 'lr', 'd_pca'),
    'steer': ('alpha', 'n_prompts'),
    'neurons': ('histogram_bins', 'cut'),
}
_UNIT_INTERVAL = {'steer': ('period_threshold',), 'neurons': ('tau',)}
# 'summary' stops after the selection, ablation, ribbon and cluster tables
NEURON_REPORTS = ('full', 'summary')


def parse_range(text: str) -> Tuple[int, int]:
    """'1..8' -> (1, 8); a single integer n -> (n, n)"""
    try:
        if '..' in text:
            lo, hi = text.split('..')
            lo, hi = int(lo), int(hi)
        else:
            lo = hi = int(text)
    except ValueError:
        raise ConfigError("bad range " + repr(text) + "; expected lo..hi")
    if lo > hi:
        raise ConfigError("empty range " + repr(text))
    return lo, hi


def task_key(entry: Dict[str, Any]) -> str:
    """Name a task entry: its task name, suffixed by the template variant when it is not the default"""
    variant = entry.get('template_variant', 0)
    return entry['name'] if variant == 0 else entry['name'] + "_t" + str(variant)


def _default_tasks() -> List[Dict[str, Any]]:
    return [{'name': 'months'}, {'name': 'weekdays'}, {'name': 'hours'}, {'name': 'addition'}]


@dataclass
class ExperimentConfig:
    """
    :param model: existing checkpoint directory; required unless the train stage runs
    :param tasks: task entries {'name': ..., plus get_task_spec parameters}; default-template tasks are trained on,
        other variants are evaluation-only
    :param params: per-stage parameters, merged over DEFAULT_PARAMS
    """
    stages: List[str] = field(default_factory=lambda: list(STAGES))
    tasks: List[Dict[str, Any]] = field(default_factory=_default_tasks)
    params: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    seed: int = 0
    out: str = 'runs/cyclab'
    model: Optional[str] = None
    threads: Optional[int] = None
    version: int = CONFIG_VERSION

    def __post_init__(self):
        self.validate()
        merged = {}
        for stage, defaults in DEFAULT_PARAMS.items():
            merged[stage] = copy.deepcopy(defaults)
            merged[stage].update(copy.deepcopy(self.params.get(stage, {})))
        self.params = merged

    def validate(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError("unsupported config version " + repr(self.version) + " (expected "
                              + str(CONFIG_VERSION) + ")")
        unknown = [stage for stage in self.stages if stage not in STAGES]
        if unknown:
            raise ConfigError("unknown stages " + str(unknown) + "; expected a subset of " + str(list(STAGES)))
        if len(set(self.stages)) != len(self.stages):
            raise ConfigError("duplicate stages in " + str(self.stages))
        for stage, params in self.params.items():
            if stage not in DEFAULT_PARAMS:
                raise ConfigError("parameters given for unknown stage " + repr(stage))
            extra = set(params) - set(DEFAULT_PARAMS[stage])
            if extra:
                raise ConfigError("stage " + stage + " has no parameters " + str(sorted(extra)))
            for name in _POSITIVE.get(stage, ()):
                if name in params and not params[name] > 0:
                    raise ConfigError(stage + "." + name + " must be positive")
            for name in _UNIT_INTERVAL.get(stage, ()):
                if name in params and not 0.0 <= params[name] <= 1.0:
                    raise ConfigError(stage + "." + name + " must lie in [0, 1]")
        if self.params.get('neurons', {}).get('report', 'full') not in NEURON_REPORTS:
            raise ConfigError("neurons.report must be one of " + str(list(NEURON_REPORTS)))
        if 'train' in self.params:
            ModelConfig.from_dict(self.params['train'].get('model', {}))
            TrainSchedule.from_dict(self.params['train'].get('schedule', {}))
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be positive")
        keys = [task_key(entry) for entry in self.tasks]
        if len(set(keys)) != len(keys):
            raise ConfigError("duplicate task entries " + str(keys))
        for entry in self.tasks:
            if entry.get('name') not in TASK_NAMES:
                raise ConfigError("unknown task " + repr(entry.get('name')))
        self.task_specs()

    def ordered_stages(self) -> List[str]:
        return [stage for stage in STAGES if stage in self.stages]

    def task_specs(self) -> Dict[str, TaskSpec]:
        specs = {}
        for entry in self.tasks:
            kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in entry.items() if k != 'name'}
            try:
                specs[task_key(entry)] = get_task_spec(entry['name'], **kwargs)
            except LabError as e:
                raise ConfigError("bad task entry " + canonical_json(entry) + ": " + str(e))
        return specs

    def training_tasks(self) -> List[str]:
        return [task_key(entry) for entry in self.tasks if entry.get('template_variant', 0) == 0]

    def stage_params(self, stage: str) -> Dict[str, Any]: return self.params[stage]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': self.version, 'stages': list(self.stages), 'tasks': copy.deepcopy(self.tasks),
            'params': copy.deepcopy(self.params), 'seed': self.seed, 'out': self.out, 'model': self.model,
            'threads': self.threads
        }

    def hash(self) -> str:
        """Hash of everything that shapes the results (not which stages run or where they write)"""
        d = self.to_dict()
        for key in ('out', 'threads', 'stages'):
            d.pop(key)
        return config_hash(d)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'ExperimentConfig':
        allowed = {'version', 'stages', 'tasks', 'params', 'seed', 'out', 'model', 'threads'}
        extra = set(d) - allowed
        if extra:
            raise ConfigError("unknown config fields " + str(sorted(extra)))
        if 'version' not in d:
            raise ConfigError("config is missing its version field")
        return cls(**d)

    @classmethod
    def load(cls, path: str) -> 'ExperimentConfig':
        try:
            return cls.from_dict(load_json(path))
        except (OSError, ValueError) as e:
            raise ConfigError("cannot read config " + path + ": " + str(e))
