"""
Dense linear algebra used across the lab. Storage stays float32; products accumulate in float64 and
decompositions (QR, SVD, least squares, PCA) run fully in float64.
"""
import numpy as np
import torch
from torch import Tensor
from sklearn.decomposition import PCA
from typing import Tuple
from ..utils import DimensionError, NumericError, EmptyBasisError, check_finite


__all__ = [
    'matmul', 'qr_orthonormalize', 'svd', 'least_squares', 'pca', 'gram_deviation',
    'subspace_interchange', 'project_onto', 'matrix_rank'
]


RANK_TOLERANCE = 1e-6


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product with float64 accumulation

    :param a: (m, k)
    :param b: (k, n)
    :return: (m, n), in the dtype of a
    """
    if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("cannot multiply " + str(tuple(a.shape)) + " by " + str(tuple(b.shape)))
    out = a.to(torch.float64) @ b.to(torch.float64)
    return check_finite(out.to(a.dtype if a.is_floating_point() else torch.float32), "matmul output")


def qr_orthonormalize(m: Tensor, tol: float=RANK_TOLERANCE) -> Tensor:
    """
    Orthonormalize the columns of m by twice-iterated Gram-Schmidt in float64. Columns whose norm after
    projecting out the previous basis falls below tol are dropped, so the output has rank(m) columns.

    :param m: (d, k) matrix
    :param tol: rank-drop tolerance
    :return: (d, k') with orthonormal columns spanning the column space of m
    """
    if m.dim() != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError("expected a non-empty (d, k) matrix, got shape " + str(tuple(m.shape)))
    check_finite(m, "matrix to orthonormalize")
    m64 = m.detach().to(torch.float64)
    basis = m64.new_zeros((m64.shape[0], 0))
    for j in range(m64.shape[1]):
        v = m64[:, j]
        for _ in range(2):
            v = v - basis @ (basis.t() @ v)
        norm = torch.linalg.vector_norm(v)
        if norm < tol:
            continue
        basis = torch.cat([basis, (v / norm).unsqueeze(1)], dim=1)

    if basis.shape[1] == 0:
        raise EmptyBasisError("all columns vanish after orthonormalization")
    return basis.to(m.dtype if m.is_floating_point() else torch.float32)


def svd(m: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Thin singular value decomposition m = U diag(S) V^T, computed in float64

    :param m: (a, b)
    :return: U (a, r), S (r,) descending, V (b, r) with r = min(a, b)
    """
    if m.dim() != 2:
        raise DimensionError("svd expects a matrix, got shape " + str(tuple(m.shape)))
    check_finite(m, "svd input")
    try:
        u, s, vh = torch.linalg.svd(m.detach().to(torch.float64), full_matrices=False)
    except RuntimeError as e:
        raise NumericError("svd did not converge: " + str(e))
    return u, s, vh.t()


def matrix_rank(m: Tensor, tol: float=RANK_TOLERANCE) -> int:
    _, s, _ = svd(m)
    return int((s > tol).sum().item())


def least_squares(x: Tensor, y: Tensor) -> Tensor:
    """
    Minimum-norm least squares solution of x w = y via the SVD pseudo-inverse (rank deficiency allowed)

    :param x: design matrix (n, d)
    :param y: targets (n,) or (n, t)
    :return: w (d,) or (d, t), float64
    """
    if x.dim() != 2 or y.shape[0] != x.shape[0]:
        raise DimensionError("design " + str(tuple(x.shape)) + " does not match targets " + str(tuple(y.shape)))
    check_finite(x, "design matrix")
    check_finite(y, "targets")
    try:
        pinv = torch.linalg.pinv(x.detach().to(torch.float64))
    except RuntimeError as e:
        raise NumericError("pseudo-inverse failed: " + str(e))
    return pinv @ y.detach().to(torch.float64)


def pca(x: Tensor, k: int) -> Tuple[Tensor, Tensor]:
    """
    Principal component analysis of the rows of x (mean-centered internally)

    :param x: data (n, d)
    :param k: number of components
    :return: components (d, k) with orthonormal columns, explained variance (k,) descending
    """
    if x.dim() != 2 or x.shape[0] < 2:
        raise DimensionError("pca needs at least 2 rows, got shape " + str(tuple(x.shape)))
    if k < 1 or k > min(x.shape[0], x.shape[1]):
        raise DimensionError("cannot extract " + str(k) + " components from data of shape " + str(tuple(x.shape)))
    check_finite(x, "pca input")
    transformer = PCA(n_components=k, svd_solver='full')
    transformer.fit(x.detach().to(torch.float64).cpu().numpy())
    components = torch.from_numpy(np.ascontiguousarray(transformer.components_.T))
    explained = torch.from_numpy(np.ascontiguousarray(transformer.explained_variance_))
    return components, explained


def gram_deviation(basis: Tensor) -> float:
    """Max absolute entry of R^T R - I"""
    b = basis.detach().to(torch.float64)
    eye = torch.eye(b.shape[1], dtype=torch.float64)
    return float((b.t() @ b - eye).abs().max().item())


def project_onto(h: Tensor, basis: Tensor) -> Tensor:
    """Orthogonal projection R R^T h of the last dimension of h"""
    return (h @ basis) @ basis.t()


def subspace_interchange(h_o: Tensor, h_c: Tensor, basis: Tensor) -> Tensor:
    """
    Interchange the component of h_o inside span(basis) with that of h_c:

    h_o + R (R^T h_c - R^T h_o)

    Evaluated as h_o - R R^T h_o + R R^T h_c; a square basis (k == d) returns h_c exactly.

    :param h_o: original states (..., d)
    :param h_c: counterfactual states, broadcastable to h_o
    :param basis: R (d, k) with orthonormal columns
    :return: patched states (..., d)
    """
    if basis.shape[0] == basis.shape[1]:
        return h_c.to(h_o.dtype).expand_as(h_o).clone()
    basis = basis.to(h_o.dtype)
    return h_o - project_onto(h_o, basis) + project_onto(h_c.to(h_o.dtype), basis)
