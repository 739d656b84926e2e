"""Layout visual refinement: mask-weighted perception loss and Gram-matrix
style loss, combined with the eta weights."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .ssm import LayoutMask
from .tensor import Tensor


@dataclass
class LvrWeights:
    eta1: float = 1.0
    eta2: float = 1.0


def _masked(mask: LayoutMask, h: Tensor) -> Tensor:
    """Broadcast the per-subregion mask across the D channels of (D, N) features."""
    m = mask.flat()
    if h.data.ndim != 2 or h.data.shape[1] != m.data.shape[0]:
        raise T.ShapeError(f"mask of {m.data.shape[0]} subregions vs features {h.data.shape}")
    return T.mul_rowvec(h, m)


def pr_loss(mask: LayoutMask, h: Tensor, mask_star: LayoutMask, h_star: Tensor) -> Tensor:
    """Perception refinement: ||mask (*) H - mask* (*) H*||_F / (N * D)."""
    if h.data.shape != h_star.data.shape:
        raise T.ShapeError(f"pr_loss: features {h.data.shape} vs {h_star.data.shape}")
    d, n = h.data.shape
    diff = T.sub(_masked(mask, h), _masked(mask_star, h_star))
    return T.scale(T.frobenius_norm(diff), 1.0 / (n * d))


def gram_matrix(f: Tensor) -> Tensor:
    """Channel co-activation matrix F F^T of a (D, N) feature map."""
    return T.matmul(f, T.transpose(f))


def sr_loss(mask: LayoutMask, h: Tensor, mask_star: LayoutMask, h_star: Tensor) -> Tensor:
    """Style refinement: Gram-matrix distance of the masked features.

    The Gram matrices themselves are not normalized; the single 1/(N*D)
    factor outside is the only scaling.
    """
    if h.data.shape != h_star.data.shape:
        raise T.ShapeError(f"sr_loss: features {h.data.shape} vs {h_star.data.shape}")
    d, n = h.data.shape
    diff = T.sub(gram_matrix(_masked(mask, h)), gram_matrix(_masked(mask_star, h_star)))
    return T.scale(T.frobenius_norm(diff), 1.0 / (n * d))


def lvr_loss(weights: LvrWeights, pr: Tensor, sr: Tensor) -> Tensor:
    return T.add(T.scale(pr, weights.eta1), T.scale(sr, weights.eta2))
