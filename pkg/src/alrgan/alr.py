"""Adaptive layout refinement loss: residual split, learned hard/easy weight
networks, and the assembled loss with its softplus ordering regularizer.

Construction, given synthesized and real similarity matrices theta/theta*:

1. absolute residual R = |theta* - theta|, stored (N, T);
2. gamma-threshold split into easy (r < gamma) and hard (r >= gamma) parts;
3. per-part weights from small shared-per-cell networks applied to the
   zero-padded part Hadamard the (transposed) real feature map;
4. loss = (||a (*) R_easy||_F + ||b (*) R_hard||_F
           + softplus(max(a) - min(b))) / (N * D).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .ssm import SemMatrix
from .tensor import Tensor


@dataclass
class ResidualSplit:
    """Exact partition of the (N, T) absolute residual by the gamma threshold."""

    r: Tensor
    easy: Tensor
    hard: Tensor
    gamma: float


def _as_theta(x) -> Tensor:
    return x.theta if isinstance(x, SemMatrix) else x


def split_residual(theta, theta_star, gamma: float) -> ResidualSplit:
    """R = |theta* - theta| transposed to (N, T); entries >= gamma are hard.

    The threshold masks are constants of the split point, so gradients flow
    through the residual values themselves.
    """
    th, ts = _as_theta(theta), _as_theta(theta_star)
    if th.data.shape != ts.data.shape:
        raise T.ShapeError(f"split_residual: shapes {th.data.shape} vs {ts.data.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must be in [0, 1], got {gamma}")
    r = T.transpose(T.abs_(T.sub(ts, th)))  # (N, T)
    easy_mask = (r.data < gamma).astype(np.float64)
    easy = T.mul(r, Tensor(easy_mask))
    hard = T.mul(r, Tensor(1.0 - easy_mask))
    return ResidualSplit(r, easy, hard, float(gamma))


def pad_to_feature_space(x: Tensor, d: int) -> Tensor:
    """Zero-pad the word axis of an (N, T) tensor out to (N, d)."""
    n, t = x.data.shape
    if d < t:
        raise T.ShapeError(f"cannot pad {t} columns down to {d}")
    if d == t:
        return x
    return T.concat([x, Tensor(np.zeros((n, d - t)))], axis=1)


class WeightNet:
    """Per-cell weight producer: affine(D -> ceil(D/2)) -> leaky -> affine(-> T)
    -> softplus, shared across the N grid cells.

    The final affine layer starts at zero so every weight begins at
    softplus(0) = ln 2; earlier layers are uniform +-1/sqrt(fan_in).
    """

    def __init__(self, d: int, t: int, rng: np.random.Generator):
        h = (d + 1) // 2
        self.d = d
        self.w1 = T.param(None, rng, (d, h))
        self.b1 = T.param(np.zeros(h))
        self.w2 = T.param(np.zeros((h, t)))
        self.b2 = T.param(np.zeros(t))

    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, part: Tensor, h_star: Tensor) -> Tensor:
        """Strictly positive (N, T) weights from the residual part and real features."""
        z = T.mul(pad_to_feature_space(part, self.d), T.transpose(h_star))
        z = T.leaky_relu(T.affine(z, self.w1, self.b1), 0.2)
        return T.softplus(T.affine(z, self.w2, self.b2))


def weight_forward(net: WeightNet, part: Tensor, h_star: Tensor) -> Tensor:
    return net.forward(part, h_star)


def alr_loss(split: ResidualSplit, alpha: Tensor, beta: Tensor, d: int) -> Tensor:
    """Weighted Frobenius penalties plus the weight-ordering regularizer.

    The regularizer softplus(max(alpha) - min(beta)) is a positive scalar, so
    its Frobenius norm is itself.
    """
    n = split.r.data.shape[0]
    t1 = T.frobenius_norm(T.mul(alpha, split.easy))
    t2 = T.frobenius_norm(T.mul(beta, split.hard))
    t3 = T.softplus(T.sub(T.max_(alpha), T.min_(beta)))
    return T.scale(T.add(T.add(t1, t2), t3), 1.0 / (n * d))


def ordering_term(alpha: Tensor, beta: Tensor) -> float:
    """Current value of the softplus ordering regularizer (unnormalized)."""
    with T.no_grad():
        return T.softplus(T.sub(T.max_(alpha), T.min_(beta))).item()


def fixed_alr_loss(theta, theta_star, n: int, d: int) -> Tensor:
    """Fixed-weight ablation variant: plain normalized Frobenius distance."""
    return T.scale(T.frobenius_norm(T.sub(_as_theta(theta_star), _as_theta(theta))), 1.0 / (n * d))
