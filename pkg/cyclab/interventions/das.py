"""Distributed alignment search: learn an orthonormal subspace whose interchange reproduces a causal variable"""
import warnings
import torch
import torch.nn.functional as F
from torch import Tensor
from torch.optim import Adam
from collections import OrderedDict
from contextlib import contextmanager
from typing import Dict, List, NamedTuple, Optional, Sequence, Union
from ..numerics import GradientTape, pca, qr_orthonormalize
from ..utils import ContractError, NumericError, check_finite
from .patching import collect_states, patched_final_logits
from .subspace import Site, Subspace, DASTrainConfig, random_orthonormal


__all__ = [
    'train_das', 'eval_iia', 'eval_iia_detailed', 'pca_initialization', 'dim_sweep', 'layer_sweep',
    'DimSweepResult', 'frozen'
]


@contextmanager
def frozen(model):
    """Disable gradients of the model's parameters for the duration of the block"""
    flags = [(p, p.requires_grad) for p in model.parameters()]
    for p, _ in flags:
        p.requires_grad_(False)
    was_training = model.training
    model.eval()
    try:
        yield model
    finally:
        for p, flag in flags:
            p.requires_grad_(flag)
        model.train(was_training)


def _check_pairs(pairs: Sequence, variable: Optional[str]=None):
    if len(pairs) == 0:
        raise ContractError("no counterfactual pairs")
    if variable is not None and any(p.variable != variable for p in pairs):
        raise ContractError("pairs were sampled for a different variable than " + repr(variable))


def pca_initialization(states: Tensor, k: int, variance: float=0.90, seed: int=0) -> Dict:
    """
    Random k-dim basis inside the span of the leading principal components explaining `variance` of the
    states. Falls back to the top-k components when fewer than k components reach the variance.

    :param states: (n, d) training-site activations
    :return: 'basis' (d, k), 'n_components' used and the 'fallback' flag
    """
    d = states.shape[1]
    generator = torch.Generator().manual_seed(seed)
    n_components = min(states.shape[0], d)
    if n_components < 2:
        return {'basis': random_orthonormal(d, k, generator).float(), 'n_components': 0, 'fallback': True}

    components, explained = pca(states, n_components)
    total = float(explained.sum())
    if total <= 0.0:
        return {'basis': random_orthonormal(d, k, generator).float(), 'n_components': 0, 'fallback': True}
    cumulative = torch.cumsum(explained, dim=0) / total
    m = int((cumulative < variance - 1e-12).sum().item()) + 1
    m = min(m, n_components)

    if m >= k:
        mix = random_orthonormal(m, k, generator)
        return {'basis': (components[:, :m] @ mix).float(), 'n_components': m, 'fallback': False}

    if k <= n_components:
        basis = components[:, :k]
    else:
        # not enough components: complete the span with random directions
        padding = random_orthonormal(d, k, generator)
        basis = qr_orthonormalize(torch.cat([components, padding], dim=1))[:, :k]
    return {'basis': basis.float(), 'n_components': m, 'fallback': True}


def _targets(pairs: Sequence) -> Tensor:
    return torch.tensor([p.target_id for p in pairs], dtype=torch.long)


@torch.no_grad()
def eval_iia_detailed(model, subspace: Subspace, pairs: Sequence, site: Optional[Site]=None) -> Dict:
    """
    Interchange intervention accuracy, overall and over pairs whose variable values differ

    :return: iia, iia_differing (None without such pairs), n, n_differing
    """
    _check_pairs(pairs)
    site = subspace.site if site is None else site
    sources = collect_states(model, [p.counterfactual for p in pairs], site)
    logits = patched_final_logits(model, [p.original for p in pairs], sources, site, subspace.basis)
    hits = (logits.argmax(dim=-1) == _targets(pairs)).tolist()
    differing = [hit for hit, pair in zip(hits, pairs) if pair.values_differ]
    return {
        'iia': sum(hits) / len(hits), 'iia_differing': sum(differing) / len(differing) if differing else None,
        'n': len(hits), 'n_differing': len(differing)
    }


def eval_iia(model, subspace: Subspace, pairs: Sequence, site: Optional[Site]=None) -> float:
    """Fraction of pairs where the argmax of the patched logits is the causal target label"""
    return eval_iia_detailed(model, subspace, pairs, site)['iia']


def train_das(
        model, pairs: Sequence, variable: str, layer: int, hook_point: str='resid_post_mlp',
        cfg: Optional[DASTrainConfig]=None, test_pairs: Optional[Sequence]=None,
        position: Union[int, str]='final', verbose: bool=False
) -> Subspace:
    """
    Optimize R (d_model, k) with Adam on the cross-entropy between the patched answer logits and the causal
    target, re-orthonormalizing R by QR after every step. The model stays frozen.

    :param pairs: training pairs (targets from the causal model)
    :param test_pairs: held-out pairs for test_iia (default: the training pairs)
    :return: the trained subspace, test IIA and training record in its metadata
    """
    cfg = DASTrainConfig() if cfg is None else cfg
    _check_pairs(pairs, variable)
    site = Site(layer, hook_point, position)
    test_pairs = pairs if test_pairs is None else test_pairs

    with frozen(model):
        originals = [p.original for p in pairs]
        h_c = collect_states(model, [p.counterfactual for p in pairs], site)
        h_o = collect_states(model, originals, site)
        cfg.validate(h_o.shape[1])

        init = pca_initialization(h_o, cfg.k, cfg.pca_init_variance, cfg.seed)
        if init['fallback']:
            warnings.warn(
                "fewer than k=" + str(cfg.k) + " principal components explain "
                + str(cfg.pca_init_variance) + " of the variance; initializing with the top-k components"
            )

        R = init['basis'].clone().requires_grad_(True)
        optimizer = Adam([R], lr=cfg.lr)
        tape = GradientTape({'R': R})
        targets = _targets(pairs)
        generator = torch.Generator().manual_seed(cfg.seed)
        losses = []
        for e in range(cfg.n_epoch):
            order = torch.randperm(len(pairs), generator=generator)
            epoch_loss = 0.0
            for start in range(0, len(pairs), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                logits = patched_final_logits(
                    model, [originals[i] for i in batch.tolist()], h_c[batch], site, R
                )
                loss = check_finite(F.cross_entropy(logits, targets[batch]), "DAS loss")
                optimizer.zero_grad()
                R.grad = tape.backward(loss)['R']
                optimizer.step()
                with torch.no_grad():
                    retracted = qr_orthonormalize(R)
                    if retracted.shape[1] != cfg.k:
                        raise NumericError("DAS basis lost rank during training")
                    R.copy_(retracted)
                epoch_loss += loss.item() * len(batch)
            losses.append(epoch_loss / len(pairs))
            if verbose: print("DAS epoch " + str(e) + ": loss " + str(losses[-1]))

        subspace = Subspace(
            R.detach().clone(), task=pairs[0].original.task, variable=variable, layer=layer,
            hook_point=hook_point, position=position,
            metadata={
                'k': cfg.k, 'pca_components': init['n_components'], 'pca_fallback': init['fallback'],
                'train_losses': losses, 'n_train': len(pairs), 'n_test': len(test_pairs), 'seed': cfg.seed
            }
        )
        detailed = eval_iia_detailed(model, subspace, test_pairs)
    subspace.test_iia = detailed['iia']
    subspace.metadata['test_iia_differing'] = detailed['iia_differing']
    return subspace


class DimSweepResult(NamedTuple):
    best: Subspace
    curve: List[Dict]
    subspaces: Dict[int, Subspace]


def dim_sweep(
        model, pairs: Sequence, variable: str, site: Site, k_values: Sequence[int],
        cfg: Optional[DASTrainConfig]=None, test_pairs: Optional[Sequence]=None, verbose: bool=False
) -> DimSweepResult:
    """
    Train DAS for every k; the best subspace maximizes test IIA, ties going to the smaller k.

    :return: best subspace, one curve row per k (ascending), and every trained subspace
    """
    if len(k_values) == 0:
        raise ContractError("k_values is empty")
    base = DASTrainConfig() if cfg is None else cfg
    curve, subspaces, best = [], OrderedDict(), None
    for k in sorted(set(k_values)):
        run_cfg = DASTrainConfig(k, base.n_epoch, base.lr, base.batch_size, base.pca_init_variance, base.seed)
        subspace = train_das(model, pairs, variable, site.layer, site.hook_point, run_cfg, test_pairs,
                             site.position, verbose)
        subspaces[k] = subspace
        curve.append(OrderedDict([
            ('task', subspace.task), ('variable', variable), ('layer', site.layer), ('hook_point', site.hook_point),
            ('k', k), ('test_iia', subspace.test_iia),
            ('test_iia_differing', subspace.metadata['test_iia_differing']),
            ('final_train_loss', subspace.metadata['train_losses'][-1])
        ]))
        if best is None or subspace.test_iia > best.test_iia:
            best = subspace
    return DimSweepResult(best, curve, subspaces)


def layer_sweep(
        model, pairs: Sequence, variable: str, layers: Sequence[int],
        hook_points: Sequence[str]=('resid_post_attn', 'resid_post_mlp'), cfg: Optional[DASTrainConfig]=None,
        test_pairs: Optional[Sequence]=None, position: Union[int, str]='final'
) -> List[Dict]:
    """Test IIA of a fixed-k DAS run at every (layer, hook point), in forward order"""
    rows = []
    for layer in layers:
        for hook_point in hook_points:
            subspace = train_das(model, pairs, variable, layer, hook_point, cfg, test_pairs, position)
            rows.append(OrderedDict([
                ('task', subspace.task), ('variable', variable), ('layer', layer),
                ('hook_point', subspace.hook_point), ('k', subspace.k), ('test_iia', subspace.test_iia),
                ('test_iia_differing', subspace.metadata['test_iia_differing'])
            ]))
    return rows
