"""Affine sine/cosine probes of the pre-modulo sum, one pair per period"""
import math
import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn
from torch.optim import Adam
from collections import OrderedDict
from dataclasses import dataclass
from sklearn.metrics import r2_score
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union
from ..hooks import normalize_hook_point, RESID_POST_MLP
from ..interventions import Site, collect_states
from ..numerics import save_artifact, load_artifact
from ..utils import ConfigError, ProbeTrainingError, ArtifactError, check_finite


__all__ = [
    'ProbeTrainConfig', 'FourierProbePair', 'fourier_targets', 'split_indices', 'r2', 'stack_activations',
    'train_fourier_probes', 'r2_sweep', 'R2Sweep', 'project_to_plane', 'plane_projection_report',
    'probe_orthogonality', 'save_fourier_probes', 'load_fourier_probes', 'DEFAULT_PERIODS', 'DEGENERATE_SST'
]


DEFAULT_PERIODS = tuple(range(2, 151))
DEGENERATE_SST = 1e-12


@dataclass
class ProbeTrainConfig:
    n_epoch: int = 500
    lr: float = 1e-3
    batch_size: int = 64
    test_fraction: float = 0.2
    seed: int = 0

    def validate(self):
        if self.n_epoch < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("n_epoch, batch_size and lr must be positive")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in [0, 1)")


@dataclass
class FourierProbePair:
    """
    Readout h -> (<w_sin, h> + b_sin, <w_cos, h> + b_cos) for one period. R² scores are held-out; None marks
    a degenerate target (constant on the held-out split).
    """
    period: int
    layer: int
    w_sin: Tensor
    w_cos: Tensor
    b_sin: float = 0.0
    b_cos: float = 0.0
    hook_point: str = RESID_POST_MLP
    r2_sin: Optional[float] = None
    r2_cos: Optional[float] = None

    def __post_init__(self):
        self.hook_point = normalize_hook_point(self.hook_point)

    def readout(self, h: Tensor) -> Tuple[Tensor, Tensor]:
        """(ŝ, ĉ) for h of shape (..., d)"""
        h = h.to(self.w_sin.dtype)
        return h @ self.w_sin + self.b_sin, h @ self.w_cos + self.b_cos

    @property
    def mean_r2(self) -> Optional[float]:
        scores = [score for score in (self.r2_sin, self.r2_cos) if score is not None]
        return float(np.mean(scores)) if scores else None


def fourier_targets(sums: Union[Sequence[int], Tensor], period: int) -> Tuple[Tensor, Tensor]:
    """(sin(2πn/T), cos(2πn/T)) in float64"""
    angles = 2 * math.pi * torch.as_tensor(sums, dtype=torch.float64) / period
    return torch.sin(angles), torch.cos(angles)


def split_indices(n: int, test_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic permutation split into (train, test); the test split is empty when n is too small"""
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    if n - n_test < 2:
        n_test = 0
    return order[n_test:], order[:n_test]


def r2(predictions: Tensor, targets: Tensor) -> Optional[float]:
    """1 - SSE/SST; None when the targets are (numerically) constant"""
    y = targets.detach().to(torch.float64)
    if len(y) == 0 or float(((y - y.mean()) ** 2).sum()) < DEGENERATE_SST:
        return None
    return float(r2_score(y.numpy(), predictions.detach().to(torch.float64).numpy()))


def stack_activations(
        activations: Union[Mapping[int, Tensor], Tuple[Tensor, Sequence[int]]]
) -> Tuple[Tensor, Tensor]:
    """
    Accept {label: (d,) or (m, d)} or (states (n, d), labels (n,)) and return (states, labels)
    """
    if isinstance(activations, Mapping):
        states, labels = [], []
        for label, h in activations.items():
            h = h.unsqueeze(0) if h.dim() == 1 else h
            states.append(h)
            labels += [int(label)] * h.shape[0]
        return torch.cat(states).float(), torch.tensor(labels, dtype=torch.long)
    states, labels = activations
    return states.float(), torch.as_tensor(labels, dtype=torch.long)


def train_fourier_probes(
        activations, periods: Sequence[int]=DEFAULT_PERIODS, layer: int=0,
        cfg: Optional[ProbeTrainConfig]=None, hook_point: str=RESID_POST_MLP, verbose: bool=False
) -> List[FourierProbePair]:
    """
    Fit sine and cosine probes for every period by Adam on the MSE against sin/cos(2πn/T). All probes share
    one (d -> 2|T|) affine map; its rows never interact, so every probe trains independently.

    :param activations: {sum: states} or (states, sums)
    :return: probes in ascending period order
    """
    cfg = ProbeTrainConfig() if cfg is None else cfg
    cfg.validate()
    states, sums = stack_activations(activations)
    check_finite(states, "probe activations")
    if len(set(sums.tolist())) < 2:
        raise ProbeTrainingError("Fourier probes need at least 2 distinct sums")
    periods = sorted(set(int(period) for period in periods))
    if any(period < 1 for period in periods):
        raise ProbeTrainingError("periods must be positive")

    targets = torch.cat([torch.stack(fourier_targets(sums, period), dim=1) for period in periods], dim=1).float()
    train_idx, test_idx = split_indices(len(sums), cfg.test_fraction, cfg.seed)
    if len(test_idx) == 0:
        test_idx = train_idx
    x_train, y_train = states[train_idx], targets[train_idx]

    torch.manual_seed(cfg.seed)
    readout = nn.Linear(states.shape[1], targets.shape[1])
    nn.init.zeros_(readout.weight)
    nn.init.zeros_(readout.bias)
    optimizer = Adam(readout.parameters(), lr=cfg.lr)
    generator = torch.Generator().manual_seed(cfg.seed)
    for e in range(cfg.n_epoch):
        order = torch.randperm(len(x_train), generator=generator)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            # summed over outputs so each probe sees its own MSE gradient
            loss = F.mse_loss(readout(x_train[batch]), y_train[batch], reduction='none').mean(dim=0).sum()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        if not torch.isfinite(loss):
            raise ProbeTrainingError("probe loss diverged at epoch " + str(e))
        if verbose and (e + 1) % 100 == 0:
            print("Probe epoch " + str(e) + ": loss " + str(loss.item()))

    with torch.no_grad():
        predictions = readout(states[test_idx])
    weight, bias = readout.weight.detach(), readout.bias.detach()
    probes = []
    for i, period in enumerate(periods):
        s, c = 2 * i, 2 * i + 1
        probes.append(FourierProbePair(
            period, layer, weight[s].clone(), weight[c].clone(), float(bias[s]), float(bias[c]), hook_point,
            r2(predictions[:, s], targets[test_idx, s]), r2(predictions[:, c], targets[test_idx, c])
        ))
    return probes


class R2Sweep(NamedTuple):
    """grid[i, j]: mean held-out R² at layers[i], periods[j] (NaN when both targets are degenerate)"""
    layers: List[int]
    periods: List[int]
    grid: np.ndarray
    probes: Dict[int, List[FourierProbePair]]

    def rows(self) -> List[Dict]:
        return [
            OrderedDict([('layer', layer), ('period', period), ('mean_r2', float(self.grid[i, j]))])
            for i, layer in enumerate(self.layers) for j, period in enumerate(self.periods)
        ]


def r2_sweep(
        model, dataset: Sequence, layers: Sequence[int], periods: Sequence[int]=DEFAULT_PERIODS,
        cfg: Optional[ProbeTrainConfig]=None, hook_point: str=RESID_POST_MLP, position: Union[int, str]='final'
) -> R2Sweep:
    """Train probes on every layer's states (labelled by pre-modulo sum) and tabulate mean R² per (layer, T)"""
    periods = sorted(set(int(period) for period in periods))
    sums = [prompt.pre_modulo_sum for prompt in dataset]
    grid = np.full((len(layers), len(periods)), np.nan)
    trained = OrderedDict()
    for i, layer in enumerate(layers):
        states = collect_states(model, dataset, Site(layer, hook_point, position))
        trained[layer] = train_fourier_probes((states, sums), periods, layer, cfg, hook_point)
        for j, probe in enumerate(trained[layer]):
            if probe.mean_r2 is not None:
                grid[i, j] = probe.mean_r2
    return R2Sweep(list(layers), periods, grid, trained)


def project_to_plane(probe: FourierProbePair, h: Tensor) -> Tuple[Tensor, Tensor]:
    """
    Phase θ = atan2(ŝ, ĉ) in [0, 2π) and radius r = sqrt(ŝ² + ĉ²); ideal readouts give θ(n) = 2πn/T

    :param h: (d,) or (n, d)
    """
    s, c = probe.readout(h)
    theta = torch.remainder(torch.atan2(s, c), 2 * math.pi)
    return theta, torch.sqrt(s ** 2 + c ** 2)


def plane_projection_report(probes: Sequence[FourierProbePair], states: Tensor, sums: Sequence[int]) -> List[Dict]:
    """(θ, r) of every state on every probe plane, with the ideal phase 2πn/T mod 2π"""
    rows = []
    for probe in probes:
        theta, radius = project_to_plane(probe, states)
        for n, t, r in zip(sums, theta.tolist(), radius.tolist()):
            rows.append(OrderedDict([
                ('period', probe.period), ('sum', int(n)), ('theta', t), ('radius', r),
                ('ideal_theta', (2 * math.pi * n / probe.period) % (2 * math.pi))
            ]))
    return rows


def probe_orthogonality(probes: Sequence[FourierProbePair]) -> List[Dict]:
    """Cosine similarity between the sine and cosine directions of each period"""
    rows = []
    for probe in probes:
        cosine = F.cosine_similarity(probe.w_sin.double(), probe.w_cos.double(), dim=0, eps=1e-12)
        rows.append(OrderedDict([('period', probe.period), ('layer', probe.layer), ('cosine', float(cosine))]))
    return rows


def save_fourier_probes(probes: Sequence[FourierProbePair], directory: str):
    """Manifest with per-period biases and R², one tensor holding [w_sin; w_cos] rows per period"""
    if len(probes) == 0:
        raise ProbeTrainingError("no probes to save")
    entries = [
        {'period': p.period, 'b_sin': p.b_sin, 'b_cos': p.b_cos, 'r2_sin': p.r2_sin, 'r2_cos': p.r2_cos}
        for p in probes
    ]
    manifest = {
        'kind': 'fourier_probes', 'layer': probes[0].layer, 'hook_point': probes[0].hook_point, 'probes': entries
    }
    weights = torch.stack([w for p in probes for w in (p.w_sin, p.w_cos)]).float()
    save_artifact(directory, manifest, {'W': weights})


def load_fourier_probes(directory: str) -> List[FourierProbePair]:
    manifest, tensors = load_artifact(directory)
    if manifest.get('kind') != 'fourier_probes' or 'W' not in tensors:
        raise ArtifactError("not a Fourier probe artifact", directory)
    entries, weights = manifest['probes'], tensors['W']
    if weights.dim() != 2 or weights.shape[0] != 2 * len(entries):
        raise ArtifactError("probe weights do not match the manifest", directory)
    return [
        FourierProbePair(
            e['period'], manifest['layer'], weights[2 * i], weights[2 * i + 1], e['b_sin'], e['b_cos'],
            manifest['hook_point'], e['r2_sin'], e['r2_cos']
        )
        for i, e in enumerate(entries)
    ]
