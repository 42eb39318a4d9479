"""Ground-truth estimates of a network's output range and comparison metrics.

The true output range over a box is not computable cheaply, so it is
bracketed from both sides:

* :func:`empirical_range` evaluates the network at uniform samples and
  (optionally) every box corner. Every evaluated value is attained, so the
  result is an inner estimate of the true range.
* :func:`certified_bracket_2layer` adds an outer estimate for two-layer
  networks by enumerating ReLU activation patterns. Inside one pattern's
  region the network equals that pattern's affine restriction, so the box
  extrema of all restrictions enclose the true range.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import corner_minmax, relu_dot_minmax
from .bounds import Interval, ibp_network, propagate_blockwise, width
from .errors import DimensionError, ParameterError, TightpropError
from .linalg import FLOAT, as_matrix, as_vector
from .network import AffineLayer, ReluNetwork, forward

CORNER_CAP = 22
PATTERN_CAP = 16
RATIO_FLOOR = 1e-12

# Uniform samples are drawn in blocks of this many rows so that the random
# stream does not depend on the evaluation path.
_DRAW_ROWS = 8192
_EVAL_ROWS = 256
_LOW_BITS = 10


@dataclass(frozen=True)
class OracleBracket:
    inner: Interval
    outer: Interval
    inner_method: str = "monte-carlo+corners"
    outer_method: str = "pattern-enumeration"

    def __post_init__(self):
        if np.any(self.inner.lower < self.outer.lower) or np.any(self.inner.upper > self.outer.upper):
            raise TightpropError("inner estimate escapes the certified outer bound")


@dataclass(frozen=True)
class TightnessReport:
    width_ibp: np.ndarray
    width_m: np.ndarray
    diff: np.ndarray
    ratio: np.ndarray
    ratio_valid: np.ndarray
    gamma: np.ndarray = None


def _corner_signs(start, stop, n):
    idx = np.arange(start, stop, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n, dtype=np.int64)) & 1
    return 2.0 * bits - 1.0


def _is_scalar_two_layer(net):
    return net.depth == 2 and net.out_dim == 1


def _uniform_blocks(rng, center, radius, count):
    n = center.size
    done = 0
    while done < count:
        rows = min(_DRAW_ROWS, count - done)
        yield center + radius * rng.uniform(-1.0, 1.0, size=(rows, n))
        done += rows


def _range_two_layer(net, center, radius, n_uniform, include_corners, rng):
    first, second = net.layers
    A = first.weights
    a2 = np.ascontiguousarray(second.weights[0])
    b2 = second.bias[0]
    AT = np.ascontiguousarray(A.T)
    lo, hi = math.inf, -math.inf
    lo, hi = relu_dot_minmax((center @ AT)[None, :], first.bias, a2, lo, hi)
    for block in _uniform_blocks(rng, center, radius, n_uniform):
        for s in range(0, block.shape[0], _EVAL_ROWS):
            lo, hi = relu_dot_minmax(block[s:s + _EVAL_ROWS] @ AT, first.bias, a2, lo, hi)
    if include_corners and radius > 0:
        n = center.size
        n_lo = min(n, _LOW_BITS)
        P_lo = radius * _corner_signs(0, 2 ** n_lo, n_lo) @ AT[:n_lo]
        P_hi = radius * _corner_signs(0, 2 ** (n - n_lo), n - n_lo) @ AT[n_lo:]
        base = center @ AT + first.bias
        lo, hi = corner_minmax(np.ascontiguousarray(P_hi), np.ascontiguousarray(P_lo),
                               base, a2, lo, hi)
    return np.array([lo + b2]), np.array([hi + b2])


def _range_generic(net, center, radius, n_uniform, include_corners, rng):
    out = forward(net, center)
    lo, hi = out.copy(), out.copy()

    def fold(points):
        nonlocal lo, hi
        vals = forward(net, points)
        lo = np.minimum(lo, vals.min(axis=0))
        hi = np.maximum(hi, vals.max(axis=0))

    for block in _uniform_blocks(rng, center, radius, n_uniform):
        fold(block)
    if include_corners and radius > 0:
        n = center.size
        total = 2 ** n
        for s in range(0, total, _DRAW_ROWS):
            fold(center + radius * _corner_signs(s, min(total, s + _DRAW_ROWS), n))
    return lo, hi


def empirical_range(net, box, n_uniform, include_corners=True, rng=None,
                    corner_cap=CORNER_CAP):
    """Inner estimate of the output range from sampled and corner evaluations.

    The box center is always evaluated, so the result is never empty.
    """
    center = as_vector(box.center, "box center")
    if center.size != net.in_dim:
        raise DimensionError(f"box dim {center.size} != network in_dim {net.in_dim}")
    if n_uniform < 0:
        raise ParameterError("n_uniform must be >= 0")
    if n_uniform > 0 and rng is None:
        raise ParameterError("sampling requires an rng")
    if include_corners and center.size > corner_cap:
        raise ParameterError(
            f"{2 ** center.size} corners exceed the cap of 2**{corner_cap}; "
            "use sampling-only mode (include_corners=False)")
    if box.radius == 0:
        n_uniform = 0
    impl = _range_two_layer if _is_scalar_two_layer(net) else _range_generic
    lo, hi = impl(net, center, box.radius, n_uniform, include_corners, rng)
    return Interval(lo, hi)


def two_layer_net(A1, b1, a2, b2):
    """Wrap block weights as a :class:`ReluNetwork` (vector ``a2`` -> 1 output)."""
    a2 = np.asarray(a2, dtype=FLOAT)
    a2 = a2[None, :] if a2.ndim == 1 else a2
    b2 = np.atleast_1d(np.asarray(b2, dtype=FLOAT))
    return ReluNetwork((AffineLayer(A1, b1), AffineLayer(a2, b2)))


def pattern_outer_bound(A1, b1, a2, b2, box, pattern_cap=PATTERN_CAP):
    """Certified superset of the range of ``a2 relu(A1 x~ + b1) + b2``.

    Units that interval arithmetic proves always active or always inactive
    over the box are fixed; only the remaining unstable units are enumerated.
    A pattern contradicting a stable unit has an empty region, so dropping
    it keeps the bound sound.
    """
    A1 = as_matrix(A1, "A1")
    b1 = as_vector(b1, "b1")
    a2 = np.asarray(a2, dtype=FLOAT)
    a2 = a2[None, :] if a2.ndim == 1 else as_matrix(a2, "a2")
    b2 = np.atleast_1d(np.asarray(b2, dtype=FLOAT))
    k = A1.shape[0]
    if k > pattern_cap:
        raise ParameterError(f"hidden width {k} exceeds the pattern cap {pattern_cap}")
    if a2.shape[1] != k or b1.size != k or b2.size != a2.shape[0]:
        raise DimensionError("block weights do not conform")
    x, eps = as_vector(box.center, "box center"), box.radius
    mid = A1 @ x + b1
    rad = eps * np.abs(A1).sum(axis=1)
    active = mid - rad >= 0
    unstable = np.flatnonzero((mid + rad > 0) & ~active)
    patterns = np.zeros((2 ** unstable.size, k))
    patterns[:, active] = 1.0
    if unstable.size:
        patterns[:, unstable] = (_corner_signs(0, 2 ** unstable.size, unstable.size) + 1) / 2
    lower = np.empty(a2.shape[0])
    upper = np.empty(a2.shape[0])
    for o in range(a2.shape[0]):
        S = patterns * a2[o]
        W = S @ A1
        c = W @ x + S @ b1 + b2[o]
        r = eps * np.abs(W).sum(axis=1)
        lower[o] = (c - r).min()
        upper[o] = (c + r).max()
    return Interval(lower, upper)


def certified_bracket_2layer(A1, b1, a2, b2, box, n_uniform=10_000, rng=None,
                             include_corners=True, pattern_cap=PATTERN_CAP,
                             corner_cap=CORNER_CAP):
    outer = pattern_outer_bound(A1, b1, a2, b2, box, pattern_cap)
    net = two_layer_net(A1, b1, a2, b2)
    corners = include_corners and box.dim <= corner_cap
    inner = empirical_range(net, box, n_uniform, corners, rng, corner_cap)
    # Evaluated values are attained by the network; rounding in the two
    # evaluation paths may differ by a few ulps, which is absorbed here.
    slack = 1e-9 * (1.0 + np.abs(outer.lower) + np.abs(outer.upper))
    if np.any(inner.lower < outer.lower - slack) or np.any(inner.upper > outer.upper + slack):
        raise TightpropError("sampled value outside the certified outer bound")
    outer = Interval(np.minimum(outer.lower, inner.lower), np.maximum(outer.upper, inner.upper))
    return OracleBracket(inner, outer,
                         "monte-carlo+corners" if corners else "monte-carlo",
                         "pattern-enumeration")


def gamma(candidate, truth, point_tol=1e-9):
    """Fraction of the truth interval covered by ``candidate``, per coordinate.

    A zero-width truth interval scores 1 when its point lies in the
    candidate (with a relative tolerance of ``point_tol`` for rounding) and
    0 otherwise.
    """
    cl, cu = np.atleast_1d(candidate.lower), np.atleast_1d(candidate.upper)
    tl, tu = np.atleast_1d(truth.lower), np.atleast_1d(truth.upper)
    if cl.shape != tl.shape:
        raise DimensionError("candidate and truth differ in dimension")
    length = tu - tl
    overlap = np.maximum(np.minimum(cu, tu) - np.maximum(cl, tl), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.clip(overlap / length, 0.0, 1.0)
    tol = point_tol * (1.0 + np.abs(tl))
    point_in = (tl >= cl - tol) & (tl <= cu + tol)
    return np.where(length > 0, frac, point_in.astype(FLOAT))


def tightness(candidate_ibp, candidate_m, truth=None):
    w_ibp = width(candidate_ibp)
    w_m = width(candidate_m)
    if w_ibp.shape != w_m.shape:
        raise DimensionError("candidates differ in dimension")
    valid = w_m >= RATIO_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(valid, w_ibp / np.where(valid, w_m, 1.0), np.nan)
    g = gamma(candidate_m, truth) if truth is not None else None
    return TightnessReport(w_ibp, w_m, w_ibp - w_m, ratio, valid, g)


@dataclass(frozen=True)
class PolytopeCloud:
    points: np.ndarray
    rectangles: dict


def emit_polytope_cloud(net, box, n_samples, rng):
    """Monte-Carlo output cloud of a 2-output network plus bound rectangles."""
    if net.out_dim != 2:
        raise DimensionError(f"polytope clouds need 2 outputs, network has {net.out_dim}")
    center = as_vector(box.center, "box center")
    blocks = [center[None, :]]
    if box.radius > 0:
        blocks += list(_uniform_blocks(rng, center, box.radius, n_samples))
    points = np.vstack([forward(net, b) for b in blocks])
    rects = {"ibp": ibp_network(net, box)}
    if net.depth >= 2:
        rects["expected"] = propagate_blockwise(net, box)[0]
    ibp = rects["ibp"]
    slack = 1e-9 * (1.0 + np.abs(ibp.lower) + np.abs(ibp.upper))
    if np.any(points < ibp.lower - slack) or np.any(points > ibp.upper + slack):
        raise TightpropError("Monte-Carlo point escapes the IBP rectangle")
    return PolytopeCloud(points, rects)
