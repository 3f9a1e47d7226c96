"""Interchange interventions on the residual stream"""
import numpy as np
import torch
from torch import Tensor
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Union
from ..hooks import HookSpec, ReplaceFull, ReplaceSubspace, run_with_hooks
from ..numerics import subspace_interchange, gram_deviation
from ..tasks import PromptInstance, prompt_batch, default_vocabulary, CausalModel
from ..utils import ContractError, DimensionError
from .subspace import Site, Subspace


__all__ = [
    'das_patch', 'collect_states', 'patched_final_logits', 'residual_patch', 'residual_patch_iia',
    'residual_patch_sweep', 'expected_cross_task_label',
    'cross_task_patch', 'cross_task_patch_batch', 'cross_task_report'
]


def das_patch(h_o: Tensor, h_c: Tensor, subspace: Union[Subspace, Tensor]) -> Tensor:
    """
    h_o + R (R^T h_c - R^T h_o)

    :param h_o: original state(s) (..., d)
    :param h_c: counterfactual state(s), broadcastable to h_o
    :param subspace: Subspace or basis R (d, k)
    """
    basis = subspace.basis if isinstance(subspace, Subspace) else subspace
    if h_o.shape[-1] != basis.shape[0] or h_c.shape[-1] != basis.shape[0]:
        raise DimensionError("states of width " + str(h_o.shape[-1]) + "/" + str(h_c.shape[-1])
                             + " do not match a basis of dimension " + str(basis.shape[0]))
    if gram_deviation(basis) > 1e-4:
        raise ContractError("subspace basis is not orthonormal")
    return subspace_interchange(h_o, h_c, basis)


@torch.no_grad()
def collect_states(model, prompts: Sequence[PromptInstance], site: Site, batch_size: int=256) -> Tensor:
    """
    Activation at `site` for every prompt, in input order

    :return: (n_prompts, dim)
    """
    out = [None] * len(prompts)
    groups = OrderedDict()
    for i, prompt in enumerate(prompts):
        groups.setdefault((len(prompt.token_ids), site.resolve(prompt)), []).append(i)
    for (_, position), indices in groups.items():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            _, cache = run_with_hooks(model, prompt_batch([prompts[i] for i in chunk]), [], [site.hook_point])
            states = cache.get(site.layer, site.hook_point, position)
            for i, row in zip(chunk, states):
                out[i] = row
    return torch.stack(out)


def patched_final_logits(
        model, originals: Sequence[PromptInstance], source_states: Tensor, site: Site,
        basis: Optional[Tensor]=None, batch_size: int=256
) -> Tensor:
    """
    Run `originals` with the state at `site` replaced by `source_states` (fully, or inside span(basis)).
    Gradients flow into `basis` when it requires them.

    :param source_states: (n, dim), one row per original
    :return: final-position logits (n, vocab)
    """
    out = [None] * len(originals)
    groups = OrderedDict()
    for i, prompt in enumerate(originals):
        groups.setdefault((len(prompt.token_ids), site.resolve(prompt)), []).append(i)
    for (_, position), indices in groups.items():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            values = source_states[chunk]
            action = ReplaceFull(values) if basis is None else ReplaceSubspace(values, basis)
            hook = HookSpec(site.layer, site.hook_point, action, [position])
            logits, _ = run_with_hooks(model, prompt_batch([originals[i] for i in chunk]), [hook], cache_points=())
            for i, row in zip(chunk, logits[:, -1, :]):
                out[i] = row
    return torch.stack(out)


@torch.no_grad()
def residual_patch(
        model, original: PromptInstance, counterfactual: PromptInstance,
        layer: int, hook_point: str, position: Union[int, str]='final'
) -> Tensor:
    """
    Replace the original's full residual vector at the site with the counterfactual's

    :return: patched final-position logits (vocab,)
    """
    site = Site(layer, hook_point, position)
    source = collect_states(model, [counterfactual], site)
    return patched_final_logits(model, [original], source, site)[0]


@torch.no_grad()
def residual_patch_iia(model, pairs: Sequence, site: Site) -> float:
    """Fraction of pairs whose full-residual patched argmax equals the pair's target"""
    if len(pairs) == 0:
        raise ContractError("no pairs to evaluate")
    sources = collect_states(model, [p.counterfactual for p in pairs], site)
    predictions = patched_final_logits(model, [p.original for p in pairs], sources, site).argmax(dim=-1)
    targets = torch.tensor([p.target_id for p in pairs])
    return float((predictions == targets).float().mean())


@torch.no_grad()
def residual_patch_sweep(
        model, pairs: Sequence, layers: Sequence[int], hook_point: str='resid_post_mlp',
        positions: Optional[Sequence[int]]=None
) -> List[Dict]:
    """
    Full-residual patching rate over (layer, position). Positions are indices shared by original and
    counterfactual (default: every position of the shortest prompt).

    :return: one row per (layer, position)
    """
    if positions is None:
        positions = range(min(min(len(p.original.token_ids), len(p.counterfactual.token_ids)) for p in pairs))
    rows = []
    for layer in layers:
        for position in positions:
            site = Site(layer, hook_point, int(position))
            rows.append(OrderedDict([
                ('layer', layer), ('hook_point', site.hook_point), ('position', int(position)),
                ('token', pairs[0].original.tokens[int(position)]),
                ('patch_rate', residual_patch_iia(model, pairs, site))
            ]))
    return rows


@torch.no_grad()
def cross_task_patch(
        model, source_prompt: PromptInstance, target_prompt: PromptInstance, union: Subspace,
        site: Optional[Site]=None
) -> Tensor:
    """
    Patch the source run's state inside span(union) into the target run; prompts may belong to different tasks

    :return: patched final-position logits of the target (vocab,)
    """
    return cross_task_patch_batch(model, [source_prompt], [target_prompt], union, site)[0]


@torch.no_grad()
def cross_task_patch_batch(
        model, sources: Sequence[PromptInstance], targets: Sequence[PromptInstance], union: Subspace,
        site: Optional[Site]=None
) -> Tensor:
    site = union.site if site is None else site
    states = collect_states(model, sources, site)
    return patched_final_logits(model, targets, states, site, union.basis)


def expected_cross_task_label(source: PromptInstance, target: PromptInstance) -> str:
    """Target task's concept for the source's pre-modulo sum (e.g. sum 14 read as a month is February)"""
    return CausalModel(target.spec, target.modulus).num_to_con(source.pre_modulo_sum)


@torch.no_grad()
def cross_task_report(
        model, sources: Sequence[PromptInstance], targets: Sequence[PromptInstance], union: Subspace,
        site: Optional[Site]=None, n_pairs: Optional[int]=None, seed: int=0
) -> Dict:
    """
    Patch random (source, target) pairs and aggregate by the source's pre-modulo sum.

    :return: 'rows' (per source sum: expected-label rate, source-token rate, count), 'heatmap'
        (source sum -> mean probability over the target task's answer tokens), and the overall rates
    """
    vocab = default_vocabulary()
    rng = np.random.default_rng(seed)
    n_pairs = len(targets) if n_pairs is None else n_pairs
    src = [sources[int(i)] for i in rng.integers(0, len(sources), size=n_pairs)]
    tgt = [targets[int(i)] for i in rng.integers(0, len(targets), size=n_pairs)]

    probs = torch.softmax(cross_task_patch_batch(model, src, tgt, union, site), dim=-1)
    predictions = probs.argmax(dim=-1).tolist()
    answers = list(targets[0].spec.concept_names)
    answer_ids = torch.tensor(vocab.encode(answers))

    by_sum = OrderedDict()
    hits_expected, hits_source = [], []
    for s, t, pred, prob in zip(src, tgt, predictions, probs):
        expected = expected_cross_task_label(s, t)
        hit_expected = pred == vocab.token_id(expected) if expected in vocab else False
        hit_source = pred == s.gold_id
        hits_expected.append(hit_expected)
        hits_source.append(hit_source)
        cell = by_sum.setdefault(s.pre_modulo_sum, {'expected': [], 'source': [], 'probs': []})
        cell['expected'].append(hit_expected)
        cell['source'].append(hit_source)
        cell['probs'].append(prob[answer_ids])

    rows, heatmap = [], OrderedDict()
    for s in sorted(by_sum):
        cell = by_sum[s]
        rows.append(OrderedDict([
            ('source_sum', s), ('expected_rate', float(np.mean(cell['expected']))),
            ('source_token_rate', float(np.mean(cell['source']))), ('count', len(cell['expected']))
        ]))
        heatmap[s] = torch.stack(cell['probs']).mean(dim=0).tolist()
    return {
        'expected_rate': float(np.mean(hits_expected)), 'source_token_rate': float(np.mean(hits_source)),
        'answers': answers, 'rows': rows, 'heatmap': heatmap
    }
