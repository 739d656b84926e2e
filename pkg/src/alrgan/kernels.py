"""Hot numeric kernels: 3x3 same-padding convolution, 2x2 mean-pool, 2x nearest upsample.

Two interchangeable convolution backends:

* ``numba``  -- direct @njit loops (no im2col buffer, cache-friendly for the
  small desk-scale feature maps used here).
* ``numpy``  -- im2col + BLAS dgemm.

Selected with the ``ALR_KERNELS`` env var ("numba" or "numpy"); defaults to
numba when importable. ``benchmarks/bench_kernels.py`` compares both. Both
backends are single-threaded on purpose: training steps must be
bit-reproducible, and ablation/sweep runs parallelize at the process level
instead.

Layouts: images/features are (C, H, W) float64 C-contiguous; conv weights are
(F, C, 3, 3). All convolutions are stride 1 with zero same-padding.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _pick_backend() -> str:
    name = os.environ.get("ALR_KERNELS", "").strip().lower()
    if name in ("numba", "numpy"):
        if name == "numba" and not HAVE_NUMBA:
            raise RuntimeError("ALR_KERNELS=numba but numba is not importable")
        return name
    return "numba" if HAVE_NUMBA else "numpy"


BACKEND = _pick_backend()


def _pad1(x: np.ndarray) -> np.ndarray:
    """Zero-pad the two spatial axes of (C, H, W) by one pixel."""
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2), dtype=np.float64)
    xp[:, 1:-1, 1:-1] = x
    return xp


def _swap_flip(w: np.ndarray) -> np.ndarray:
    """(F, C, 3, 3) -> (C, F, 3, 3) with both kernel axes flipped.

    Convolving the output gradient with this kernel yields the input gradient.
    """
    return np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))


# ---------------------------------------------------------------- numba path


@njit(cache=True, fastmath=True)
def _conv3x3_nb(xp, w):
    cin = xp.shape[0]
    h = xp.shape[1] - 2
    wd = xp.shape[2] - 2
    f = w.shape[0]
    y = np.zeros((f, h, wd))
    for fo in range(f):
        for i in range(h):
            yr = y[fo, i]
            for c in range(cin):
                for a in range(3):
                    xr = xp[c, i + a]
                    w0 = w[fo, c, a, 0]
                    w1 = w[fo, c, a, 1]
                    w2 = w[fo, c, a, 2]
                    for j in range(wd):
                        yr[j] += w0 * xr[j] + w1 * xr[j + 1] + w2 * xr[j + 2]
    return y


@njit(cache=True, fastmath=True)
def _conv3x3_gw_nb(xp, gy):
    cin = xp.shape[0]
    f = gy.shape[0]
    h = gy.shape[1]
    wd = gy.shape[2]
    gw = np.zeros((f, cin, 3, 3))
    for fo in range(f):
        for c in range(cin):
            for i in range(h):
                gr = gy[fo, i]
                for a in range(3):
                    xr = xp[c, i + a]
                    s0 = 0.0
                    s1 = 0.0
                    s2 = 0.0
                    for j in range(wd):
                        gv = gr[j]
                        s0 += gv * xr[j]
                        s1 += gv * xr[j + 1]
                        s2 += gv * xr[j + 2]
                    gw[fo, c, a, 0] += s0
                    gw[fo, c, a, 1] += s1
                    gw[fo, c, a, 2] += s2
    return gw


# ---------------------------------------------------------------- numpy path


def _im2col(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    """Patch matrix (C*9, H*W) from a padded (C, H+2, W+2) image."""
    c = xp.shape[0]
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(c, 3, 3, h, w), strides=(s0, s1, s2, s1, s2)
    )
    return view.reshape(c * 9, h * w)


def _conv3x3_np(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    f = w.shape[0]
    h, wd = xp.shape[1] - 2, xp.shape[2] - 2
    cols = _im2col(xp, h, wd)
    return (w.reshape(f, -1) @ cols).reshape(f, h, wd)


def _conv3x3_gw_np(xp: np.ndarray, gy: np.ndarray) -> np.ndarray:
    f, h, wd = gy.shape
    cols = _im2col(xp, h, wd)
    return (gy.reshape(f, -1) @ cols.T).reshape(f, -1, 3, 3)


# ---------------------------------------------------------------- public API


def conv3x3_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """y[f] = sum_c w[f,c] * x[c] (cross-correlation, zero same-pad) + b[f]."""
    xp = _pad1(x)
    if BACKEND == "numba":
        y = _conv3x3_nb(xp, w)
    else:
        y = _conv3x3_np(xp, w)
    if b is not None:
        y += b[:, None, None]
    return y


def conv3x3_bwd(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    """Gradients (gx, gw, gb) of conv3x3_fwd."""
    xp = _pad1(x)
    gyp = _pad1(np.ascontiguousarray(gy))
    wsf = _swap_flip(w)
    if BACKEND == "numba":
        gx = _conv3x3_nb(gyp, wsf)
        gw = _conv3x3_gw_nb(xp, gy)
    else:
        gx = _conv3x3_np(gyp, wsf)
        gw = _conv3x3_gw_np(xp, gy)
    gb = gy.sum(axis=(1, 2))
    return gx, gw, gb


def meanpool2_fwd(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def meanpool2_bwd(gy: np.ndarray) -> np.ndarray:
    g = 0.25 * gy
    return np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)


def upsample2_fwd(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2_bwd(gy: np.ndarray) -> np.ndarray:
    c, h, w = gy.shape
    return gy.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


def warmup() -> None:
    """Trigger JIT compilation so timing-sensitive callers pay it up front."""
    if BACKEND != "numba":
        return
    x = np.zeros((2, 4, 4))
    w = np.zeros((3, 2, 3, 3))
    conv3x3_bwd(x, w, conv3x3_fwd(x, w, np.zeros(3)))
