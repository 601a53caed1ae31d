"""Dense float64 tensors, the linear-algebra kernels, and all randomness.

Tensors are plain ``numpy.ndarray`` objects (float64, C order). Randomness is
drawn only through :class:`RngStream`, a splittable stream built on numpy's
``SeedSequence``/``PCG64`` so that any derived substream is reproducible on
every platform and independent of scheduling.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import DimensionError, ParameterError

_U64 = (1 << 64) - 1


class RngStream:
    """Single-consumer random stream identified by ``(seed, stream_id, path)``.

    ``derive(*ids)`` returns an independent child stream without consuming
    anything from the parent, so the same derivation always yields the same
    samples no matter how many draws the parent has made.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: tuple = ()):
        if not (0 <= int(seed) <= _U64 and 0 <= int(stream_id) <= _U64):
            raise ParameterError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.path = tuple(int(i) for i in path)
        self._gen = None

    def derive(self, *ids: int) -> "RngStream":
        if any(int(i) < 0 for i in ids):
            raise ParameterError("substream ids must be non-negative")
        return RngStream(self.seed, self.stream_id, self.path + tuple(ids))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,) + self.path)
            self._gen = np.random.Generator(np.random.PCG64(seq))
        return self._gen

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def _conv_geometry(h, w, kernel, stride, pad):
    if kernel < 1 or stride < 1 or pad < 0:
        raise ParameterError("kernel and stride must be >= 1, pad >= 0")
    oh = kernels.out_extent(h, kernel, stride, pad)
    ow = kernels.out_extent(w, kernel, stride, pad)
    if oh <= 0 or ow <= 0:
        raise DimensionError(f"empty output for {h}x{w} input, kernel {kernel}, stride {stride}, pad {pad}")
    return oh, ow


def im2col_batch(x, kernel, stride=1, pad=0):
    """(N, C, H, W) -> (N, H_out*W_out, C*k*k); rows are output positions."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"expected (N, C, H, W), got {x.shape}")
    _conv_geometry(x.shape[2], x.shape[3], kernel, stride, pad)
    return kernels.im2col(x, kernel, stride, pad)


def col2im_batch(cols, x_shape, kernel, stride=1, pad=0):
    _conv_geometry(x_shape[2], x_shape[3], kernel, stride, pad)
    return kernels.col2im(cols, tuple(x_shape), kernel, stride, pad)


def im2col(x, kernel, stride=1, pad=0):
    """Single image (C, H, W) -> (C*k*k, H_out*W_out); column j is the receptive field of output j."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError(f"expected (C, H, W), got {x.shape}")
    return im2col_batch(x[None], kernel, stride, pad)[0].T.copy()


def sample_normal(rng: RngStream, mu: float, sigma: float, n) -> np.ndarray:
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    z = rng.generator.standard_normal(n)
    return mu + sigma * z


def sample_lognormal(rng: RngStream, mu_log: float, sigma_log: float, n) -> np.ndarray:
    if sigma_log < 0:
        raise ParameterError(f"sigma_log must be >= 0, got {sigma_log}")
    return np.exp(sample_normal(rng, mu_log, sigma_log, n))
