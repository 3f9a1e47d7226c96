"""
Steer the internal pre-modulo sum by rewriting Fourier-plane readouts at one site.

Periods are processed in ascending order. For each period T, with r_T the readout radius of the unsteered
state and θ* = 2πn'/T:

    h <- h + (α r_T sin θ* - ŝ(h)) / ||w_sin||² w_sin
    h <- h + (α r_T cos θ* - ĉ(h)) / ||w_cos||² w_cos

the cosine readout being taken after the sine update.
"""
import math
import warnings
import numpy as np
import torch
from torch import Tensor
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, NamedTuple, Sequence, Set, Tuple, Union
from ..hooks import HookAction, HookSpec, normalize_hook_point, RESID_POST_MLP
from ..models import final_logits
from ..probes import FourierProbePair
from ..tasks import PromptInstance, CausalModel, default_vocabulary, numeral
from ..utils import ConfigError, ContractError


__all__ = [
    'SteeringConfig', 'FourierSteering', 'steer_state', 'steer', 'SteeringResult', 'SteeringReport',
    'steering_matrix', 'alpha_sweep', 'answer_tokens', 'restrict_distribution', 'MIN_RADIUS', 'OTHER'
]


MIN_RADIUS = 1e-8
OTHER = 'other'


@dataclass
class SteeringConfig:
    """`bypass` leaves the state untouched (a true null intervention, unlike alpha = 0)"""
    target: int = 0
    periods: Sequence[int] = (2, 5, 10)
    alpha: float = 10.0
    layer: int = 0
    hook_point: str = RESID_POST_MLP
    position: int = -1
    bypass: bool = False

    def __post_init__(self):
        self.hook_point = normalize_hook_point(self.hook_point)
        self.periods = sorted(set(int(period) for period in self.periods))

    def validate(self):
        if len(self.periods) == 0:
            raise ConfigError("steering needs at least one period")
        if not self.bypass and self.alpha <= 0:
            raise ConfigError("alpha must be positive (use bypass for a null intervention)")

    def with_target(self, target: int) -> 'SteeringConfig':
        return SteeringConfig(target, self.periods, self.alpha, self.layer, self.hook_point, self.position, self.bypass)


def _probe_map(probes: Union[Mapping[int, FourierProbePair], Sequence[FourierProbePair]]) -> Dict[int, FourierProbePair]:
    if isinstance(probes, Mapping):
        return dict(probes)
    return {probe.period: probe for probe in probes}


def steer_state(
        h: Tensor, probes: Union[Mapping[int, FourierProbePair], Sequence[FourierProbePair]],
        periods: Sequence[int], target: int, alpha: float
) -> Tuple[Tensor, List[int]]:
    """
    Steer states h (..., d) towards target n'. Periods whose unsteered radius falls below MIN_RADIUS are left
    alone (for the affected states) and reported.

    :return: steered states (same dtype as h) and the skipped periods
    """
    probes = _probe_map(probes)
    missing = [period for period in periods if period not in probes]
    if missing:
        raise ContractError("no probe for periods " + str(missing))
    h64 = h.detach().to(torch.float64)
    steered = h64.clone()
    skipped = []
    for period in sorted(periods):
        probe = probes[period]
        w_sin, w_cos = probe.w_sin.to(torch.float64), probe.w_cos.to(torch.float64)
        s_hat, c_hat = h64 @ w_sin + probe.b_sin, h64 @ w_cos + probe.b_cos
        radius = torch.sqrt(s_hat ** 2 + c_hat ** 2)
        active = radius >= MIN_RADIUS
        if not bool(active.all()):
            skipped.append(period)
        theta = 2 * math.pi * target / period
        s_star, c_star = alpha * radius * math.sin(theta), alpha * radius * math.cos(theta)

        s_now = steered @ w_sin + probe.b_sin
        step = torch.where(active, (s_star - s_now) / (w_sin @ w_sin), torch.zeros_like(s_now))
        steered = steered + step.unsqueeze(-1) * w_sin
        c_now = steered @ w_cos + probe.b_cos
        step = torch.where(active, (c_star - c_now) / (w_cos @ w_cos), torch.zeros_like(c_now))
        steered = steered + step.unsqueeze(-1) * w_cos
    return steered.to(h.dtype), skipped


class FourierSteering(HookAction):
    """Steering as a hook action; skipped periods accumulate in `skipped`"""
    replaces_residual = True

    def __init__(self, probes, periods: Sequence[int], target: int, alpha: float, bypass: bool=False):
        self.probes, self.periods = _probe_map(probes), sorted(periods)
        self.target, self.alpha, self.bypass = target, alpha, bypass
        self.skipped: Set[int] = set()

    def apply(self, site: Tensor, positions: List[int]) -> Tensor:
        if self.bypass:
            return site
        out = site.clone()
        for position in positions:
            steered, skipped = steer_state(site[:, position, :], self.probes, self.periods, self.target, self.alpha)
            out[:, position, :] = steered
            self.skipped.update(skipped)
        return out


class SteeringResult(NamedTuple):
    distribution: Tensor
    skipped: List[int]


def _steering_hooks(cfg: SteeringConfig, probes) -> Tuple[FourierSteering, Callable]:
    action = FourierSteering(probes, cfg.periods, cfg.target, cfg.alpha, cfg.bypass)
    return action, lambda batch: [HookSpec(cfg.layer, cfg.hook_point, action, [cfg.position])]


def steer(model, prompt: PromptInstance, probes, cfg: SteeringConfig) -> SteeringResult:
    """Softmax of the final logits with the hook position steered to cfg.target"""
    cfg.validate()
    action, hooks_fn = _steering_hooks(cfg, probes)
    logits = final_logits(model, [prompt], hooks_fn=hooks_fn)[0]
    if action.skipped:
        warnings.warn("steering skipped periods with vanishing radius: " + str(sorted(action.skipped)))
    return SteeringResult(torch.softmax(logits.double(), dim=-1), sorted(action.skipped))


def answer_tokens(prompt: PromptInstance, targets: Sequence[int]) -> List[str]:
    """The task's answer tokens: its concepts, or the target numerals for acyclic tasks"""
    if prompt.spec.is_cyclic:
        return list(prompt.spec.concept_names)
    return [numeral(int(target)) for target in targets]


def restrict_distribution(probs: Tensor, answer_ids: Sequence[int]) -> Tensor:
    """Project (n, vocab) distributions onto the answer ids plus a trailing 'other' bucket"""
    restricted = probs[:, list(answer_ids)]
    other = (1.0 - restricted.sum(dim=-1, keepdim=True)).clamp(min=0.0)
    return torch.cat([restricted, other], dim=-1)


@dataclass
class SteeringReport:
    """
    matrix[i, j]: mean probability of answers[j] after steering every prompt to targets[i]; the last column
    is the mass outside the answer set. per_prompt maps a prompt label to its own (targets x answers) matrix.
    """
    task: str
    targets: List[int]
    answers: List[str]
    matrix: np.ndarray
    alpha: float
    periods: List[int]
    per_prompt: Dict[str, np.ndarray] = field(default_factory=OrderedDict)
    skipped: List[int] = field(default_factory=list)
    expected: List[str] = field(default_factory=list)

    @property
    def columns(self) -> List[str]: return self.answers + [OTHER]

    def diagonal_mass(self) -> List[float]:
        """Per target row, the mass on the answer the target decodes to"""
        return [
            float(self.matrix[i, self.answers.index(label)]) if label in self.answers else 0.0
            for i, label in enumerate(self.expected)
        ]

    def rows(self) -> List[Dict]:
        out = []
        for i, target in enumerate(self.targets):
            row = OrderedDict([('task', self.task), ('alpha', self.alpha), ('target', target)])
            row.update(zip(self.columns, self.matrix[i].tolist()))
            out.append(row)
        return out

    def per_prompt_rows(self) -> List[Dict]:
        out = []
        for label, matrix in self.per_prompt.items():
            for i, target in enumerate(self.targets):
                row = OrderedDict([('task', self.task), ('prompt', label), ('target', target)])
                row.update(zip(self.columns, matrix[i].tolist()))
                out.append(row)
        return out


def _prompt_label(prompt: PromptInstance) -> str:
    return " ".join(prompt.tokens[1:])


def steering_matrix(
        model, dataset: Sequence[PromptInstance], targets: Sequence[int], probes, cfg: SteeringConfig,
        per_prompt: bool=True
) -> SteeringReport:
    """Steer every prompt to every target and average the restricted output distributions per target"""
    cfg.validate()
    if len(dataset) == 0 or len(targets) == 0:
        raise ContractError("steering needs prompts and targets")
    vocab = default_vocabulary()
    answers = answer_tokens(dataset[0], targets)
    answer_ids = vocab.encode(answers)
    causal = CausalModel(dataset[0].spec, dataset[0].modulus)

    rows, skipped = [], set()
    prompt_matrices = OrderedDict((_prompt_label(p), []) for p in dataset) if per_prompt else OrderedDict()
    for target in targets:
        action, hooks_fn = _steering_hooks(cfg.with_target(int(target)), probes)
        probs = torch.softmax(final_logits(model, dataset, hooks_fn=hooks_fn).double(), dim=-1)
        restricted = restrict_distribution(probs, answer_ids)
        rows.append(restricted.mean(dim=0).numpy())
        skipped.update(action.skipped)
        if per_prompt:
            for prompt, row in zip(dataset, restricted):
                prompt_matrices[_prompt_label(prompt)].append(row.numpy())
    if skipped:
        warnings.warn("steering skipped periods with vanishing radius: " + str(sorted(skipped)))

    return SteeringReport(
        task=dataset[0].task, targets=[int(t) for t in targets], answers=answers, matrix=np.stack(rows),
        alpha=0.0 if cfg.bypass else cfg.alpha, periods=list(cfg.periods),
        per_prompt=OrderedDict((label, np.stack(m)) for label, m in prompt_matrices.items()),
        skipped=sorted(skipped), expected=[causal.num_to_con(int(t)) for t in targets]
    )


def alpha_sweep(
        model, dataset: Sequence[PromptInstance], targets: Sequence[int], probes, cfg: SteeringConfig,
        alphas: Sequence[float]=(0.0, 1.0, 2.0, 5.0, 10.0, 20.0)
) -> 'OrderedDict[float, SteeringReport]':
    """steering_matrix per alpha; alpha = 0 runs the bypass baseline"""
    reports = OrderedDict()
    for alpha in alphas:
        run_cfg = SteeringConfig(cfg.target, cfg.periods, alpha if alpha > 0 else 1.0, cfg.layer,
                                 cfg.hook_point, cfg.position, bypass=alpha <= 0)
        reports[float(alpha)] = steering_matrix(model, dataset, targets, probes, run_cfg, per_prompt=False)
    return reports
