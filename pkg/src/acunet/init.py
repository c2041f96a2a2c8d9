"""Weight initialisation."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


def orthogonal_init(shape, rng: int | np.random.Generator, gain: float = 1.0) -> Tensor:
    """Draw a (semi-)orthogonal weight tensor.

    The tensor is viewed as a ``shape[0] x prod(shape[1:])`` matrix, so conv
    kernels (K,C,kh,kw) flatten to (K, C*kh*kw). Along the shorter of the two
    axes the result is orthonormal: ``W @ W.T == I`` when there are fewer rows
    than columns, ``W.T @ W == I`` otherwise.
    """
    shape = tuple(int(n) for n in shape)
    if len(shape) < 2 or any(n <= 0 for n in shape):
        raise DimensionError(f"orthogonal_init needs a non-empty shape of rank >= 2, got {shape}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    # sign fix makes the draw uniform over the orthogonal group
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return Tensor(gain * q.reshape(shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)
