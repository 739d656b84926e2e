"""Semantics similarity matrix (word/subregion attention), text-vision matrix,
and the per-subregion layout mask derived from it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class SemMatrix:
    """Column-stochastic word-to-subregion similarity matrix.

    ``theta`` is (T, N): each column holds a distribution over the T words for
    one of the N = grid_w * grid_h subregions.
    """

    theta: Tensor
    grid: tuple[int, int]

    @property
    def words(self) -> int:
        return self.theta.shape[0]

    @property
    def subregions(self) -> int:
        return self.theta.shape[1]


@dataclass
class LayoutMask:
    """Per-subregion maximum word affinity, shaped (grid_w, grid_h)."""

    mask: Tensor
    grid: tuple[int, int]

    def flat(self) -> Tensor:
        return T.reshape(self.mask, (self.mask.data.size,))


def _infer_grid(n: int, grid=None) -> tuple[int, int]:
    if grid is not None:
        gw, gh = grid
        if gw * gh != n:
            raise T.ShapeError(f"grid {grid} does not tile {n} subregions")
        return (gw, gh)
    side = math.isqrt(n)
    if side * side != n:
        raise T.ShapeError(f"cannot infer a square grid for N={n}")
    return (side, side)


def compute_ssm(w: Tensor, h: Tensor, grid=None) -> SemMatrix:
    """Word/subregion similarity softmax: theta[:, k] = softmax_j(h_k . w_j).

    ``w`` is (D, T) word embeddings, ``h`` is (D, N) image features sharing the
    feature dimension D. Normalization runs over the word axis so every
    subregion carries a distribution over words.
    """
    if w.data.ndim != 2 or h.data.ndim != 2 or w.data.shape[0] != h.data.shape[0]:
        raise T.ShapeError(
            f"compute_ssm: feature dims of W {w.data.shape} and H {h.data.shape} differ"
        )
    scores = T.matmul(T.transpose(w), h)  # (T, N)
    theta = T.softmax_axis(scores, 0)
    return SemMatrix(theta, _infer_grid(h.data.shape[1], grid))


def compute_tvm(sem: SemMatrix, w: Tensor) -> Tensor:
    """Per-subregion attention-weighted word mix: column k is sum_j theta[j,k] w_j."""
    if w.data.shape[1] != sem.words:
        raise T.ShapeError(
            f"compute_tvm: W {w.data.shape} does not match T={sem.words} words"
        )
    return T.matmul(w, sem.theta)  # (D, N)


def layout_mask(sem: SemMatrix) -> LayoutMask:
    """Column-wise max of the similarity matrix, reshaped to the feature grid.

    Carries the max values (soft mask); gradient reaches the argmax entry of
    each column, lowest index on ties.
    """
    flat = T.max_axis0(sem.theta)  # (N,)
    return LayoutMask(T.reshape(flat, sem.grid), sem.grid)


def oracle_ssm(occupancy: np.ndarray, grid, eps: float = 1e-3) -> SemMatrix:
    """Ground-truth similarity matrix from per-token occupancy maps.

    ``occupancy`` is (T, N) with entry [j, k] the number of pixels of token
    j's object inside subregion k (or any non-negative mass). Uniform
    smoothing ``eps`` keeps empty columns well-defined; columns normalize to 1.
    """
    occ = np.asarray(occupancy, dtype=np.float64) + eps
    theta = occ / occ.sum(axis=0, keepdims=True)
    return SemMatrix(Tensor(theta), _infer_grid(theta.shape[1], grid))
