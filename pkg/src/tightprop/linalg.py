"""Dense float64 kernels and seeded randomness.

Vectors and matrices are plain ``numpy.ndarray`` objects of dtype float64.
The thin wrappers below exist to enforce shape conformance with a
:class:`~tightprop.errors.DimensionError` instead of numpy's broadcasting
rules, which silently accept many shapes the math does not.

Random streams come from :func:`make_rng`, which always builds a
``numpy.random.Generator`` on the counter-based Philox bit generator keyed
by a ``SeedSequence`` of ``(seed, *stream)``. numpy guarantees that both the
bit stream and the ``normal``/``uniform``/``integers`` transforms are stable
across platforms, so fixed seeds give identical draws everywhere. Parallel
trials derive their stream as ``make_rng(seed, trial_index)``.
"""

import numpy as np

from .errors import DimensionError, ParameterError

FLOAT = np.float64


def make_rng(seed, *stream):
    """Return a Philox generator for ``seed`` and optional sub-stream ids."""
    if seed is None or int(seed) < 0:
        raise ParameterError(f"seed must be a non-negative integer, got {seed!r}")
    key = [int(seed)] + [int(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def as_vector(v, name="vector"):
    arr = np.asarray(v, dtype=FLOAT)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def as_matrix(m, name="matrix"):
    arr = np.asarray(m, dtype=FLOAT)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def sample_gaussian_matrix(rng, rows, cols, sigma):
    """I.i.d. N(0, sigma**2) entries; ``sigma`` is a standard deviation."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if rows < 0 or cols < 0:
        raise ParameterError(f"negative shape ({rows}, {cols})")
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols), dtype=FLOAT)
    return rng.normal(0.0, sigma, size=(rows, cols))


def sample_uniform_box(rng, center, radius, count=None):
    """Uniform draw(s) from the l-inf ball ``[center - radius, center + radius]``.

    With ``count`` given, returns a ``(count, n)`` array of independent draws.
    """
    if radius < 0:
        raise ParameterError(f"radius must be >= 0, got {radius}")
    center = as_vector(center, "center")
    shape = center.shape if count is None else (count, center.size)
    if radius == 0:
        return np.broadcast_to(center, shape).copy()
    return center + rng.uniform(-radius, radius, size=shape)


def matvec(A, v):
    A = as_matrix(A, "A")
    v = as_vector(v, "v")
    if A.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec: {A.shape} x {v.shape}")
    return A @ v


def matmul(A, B):
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[0]:
        raise DimensionError(f"matmul: {A.shape} x {B.shape}")
    return A @ B


def elementwise_abs(A):
    return np.abs(np.asarray(A, dtype=FLOAT))


def transpose(A):
    return as_matrix(A).T.copy()
