import numpy as np
import torch
from torch import Tensor
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Union
from ..hooks import normalize_hook_point, ORTHONORMAL_TOLERANCE, RESID_POST_MLP
from ..numerics import qr_orthonormalize, svd, gram_deviation, save_artifact, load_artifact
from ..utils import ContractError, DimensionError, ConfigError, ArtifactError


__all__ = [
    'Site', 'Subspace', 'DASTrainConfig', 'union_subspace', 'principal_angle_overlap',
    'random_orthonormal', 'random_overlap_baseline', 'save_subspace', 'load_subspace', 'DAS_N_PAIRS',
    'DAS_N_TEST'
]


# counterfactual pairs sampled for DAS training, and how many of them are held out
DAS_N_PAIRS = 4096
DAS_N_TEST = 512


@dataclass(frozen=True)
class Site:
    """
    Where an intervention acts: layer, hook point, and a position (index, or tag 'final'/'concept'/'offset'
    resolved per prompt)
    """
    layer: int
    hook_point: str = RESID_POST_MLP
    position: Union[int, str] = 'final'

    def __post_init__(self):
        object.__setattr__(self, 'hook_point', normalize_hook_point(self.hook_point))

    def resolve(self, prompt) -> int:
        return prompt.position(self.position) if isinstance(self.position, str) else self.position


@dataclass
class Subspace:
    """Orthonormal basis R (d_model, k) tagged with where and for what it was found"""
    basis: Tensor
    task: str = ''
    variable: str = ''
    layer: int = 0
    hook_point: str = RESID_POST_MLP
    position: Union[int, str] = 'final'
    test_iia: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.basis.dim() != 2 or self.basis.shape[1] < 1:
            raise DimensionError("subspace basis must be a (d, k) matrix, got " + str(tuple(self.basis.shape)))
        if gram_deviation(self.basis) > ORTHONORMAL_TOLERANCE:
            raise ContractError("subspace basis is not orthonormal (Gram deviation "
                                + str(gram_deviation(self.basis)) + ")")
        self.basis = self.basis.detach()
        self.hook_point = normalize_hook_point(self.hook_point)

    @property
    def d_model(self) -> int: return self.basis.shape[0]

    @property
    def k(self) -> int: return self.basis.shape[1]

    @property
    def site(self) -> Site: return Site(self.layer, self.hook_point, self.position)

    def project(self, h: Tensor) -> Tensor:
        """Coordinates R^T h"""
        return h.to(self.basis.dtype) @ self.basis


@dataclass
class DASTrainConfig:
    k: int = 1
    n_epoch: int = 8
    lr: float = 1e-4
    batch_size: int = 16
    pca_init_variance: float = 0.90
    seed: int = 0

    def validate(self, d_model: Optional[int]=None):
        if self.k < 1 or (d_model is not None and self.k > d_model):
            raise ConfigError("DAS dimension k must lie in [1, d_model]")
        if self.n_epoch < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("n_epoch, batch_size and lr must be positive")
        if not 0.0 < self.pca_init_variance <= 1.0:
            raise ConfigError("pca_init_variance must lie in (0, 1]")


def union_subspace(a: Subspace, b: Subspace, task: Optional[str]=None) -> Subspace:
    """Orthonormalized concatenation [A B]; rank-deficient directions are dropped"""
    if a.d_model != b.d_model:
        raise DimensionError("cannot unite subspaces of dimension " + str(a.d_model) + " and " + str(b.d_model))
    basis = qr_orthonormalize(torch.cat([a.basis, b.basis], dim=1))
    return Subspace(
        basis, task=task if task is not None else a.task + "+" + b.task, variable=a.variable,
        layer=a.layer, hook_point=a.hook_point, position=a.position,
        metadata={'union_of': [a.task, b.task], 'k_a': a.k, 'k_b': b.k}
    )


def _basis(s: Union[Subspace, Tensor]) -> Tensor:
    return s.basis if isinstance(s, Subspace) else s


def principal_angle_overlap(a: Union[Subspace, Tensor], b: Union[Subspace, Tensor]) -> float:
    """Mean cosine of the principal angles: mean of the min(k_a, k_b) singular values of A^T B"""
    basis_a, basis_b = _basis(a), _basis(b)
    if basis_a.shape[0] != basis_b.shape[0]:
        raise DimensionError("subspaces live in different spaces")
    _, s, _ = svd(basis_a.to(torch.float64).t() @ basis_b.to(torch.float64))
    return float(s.clamp(max=1.0).mean())


def random_orthonormal(d: int, k: int, generator: torch.Generator) -> Tensor:
    """Uniformly random (Haar) orthonormal (d, k) basis, float64"""
    gaussian = torch.randn(d, k, generator=generator, dtype=torch.float64)
    q, r = torch.linalg.qr(gaussian)
    return q * torch.sign(torch.diagonal(r)).unsqueeze(0)


def random_overlap_baseline(d: int, k_a: int, k_b: int, n_pairs: int=1000, seed: int=0) -> Dict[str, float]:
    """
    Distribution of principal_angle_overlap between independent random subspaces

    :return: mean, std and the 2.5 / 50 / 97.5 percentiles
    """
    generator = torch.Generator().manual_seed(seed)
    samples = np.array([
        principal_angle_overlap(random_orthonormal(d, k_a, generator), random_orthonormal(d, k_b, generator))
        for _ in range(n_pairs)
    ])
    return {
        'd': d, 'k_a': k_a, 'k_b': k_b, 'n_pairs': n_pairs, 'mean': float(samples.mean()),
        'std': float(samples.std()), 'p2.5': float(np.percentile(samples, 2.5)),
        'median': float(np.median(samples)), 'p97.5': float(np.percentile(samples, 97.5))
    }


def save_subspace(subspace: Subspace, directory: str):
    manifest = {
        'kind': 'subspace', 'task': subspace.task, 'variable': subspace.variable, 'layer': subspace.layer,
        'hook_point': subspace.hook_point, 'position': subspace.position, 'k': subspace.k,
        'test_iia': subspace.test_iia, 'metadata': subspace.metadata
    }
    save_artifact(directory, manifest, {'R': subspace.basis})


def load_subspace(directory: str) -> Subspace:
    manifest, tensors = load_artifact(directory)
    if manifest.get('kind') != 'subspace' or 'R' not in tensors:
        raise ArtifactError("not a subspace artifact", directory)
    basis = tensors['R']
    if basis.dim() != 2 or basis.shape[1] != manifest.get('k'):
        raise ArtifactError("subspace R does not match manifest k", directory)
    if gram_deviation(basis) > ORTHONORMAL_TOLERANCE:
        raise ArtifactError("subspace R is not orthonormal", directory)
    return Subspace(
        basis, manifest['task'], manifest['variable'], manifest['layer'], manifest['hook_point'],
        manifest['position'], manifest.get('test_iia'), manifest.get('metadata', {})
    )
