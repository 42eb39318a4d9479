"""Interval bounds for ReLU networks over an l-inf input box.

Three propagators live here:

* :func:`affine_interval` - exact bounds of one affine map over the box.
* :func:`ibp_network` - layerwise interval bound propagation (sound, loose).
* :func:`expected_bounds_block` / :func:`propagate_blockwise` - the
  expected tight bounds, which replace each ReLU by a fixed 0/1 diagonal
  mask chosen from the upper bound of the current affine envelope and then
  bound the resulting purely affine map in closed form.

The blockwise recursion carries a bias offset ``h`` next to the linear map
``G`` so that biased networks are handled; with zero biases it is the
plain ``G_i = A_{i+1} M_i G_{i-1}`` product.

Most functions accept a batch of box centers (2-D ``center``) and then
return batched lower/upper arrays with one row per center.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .linalg import FLOAT, as_matrix, as_vector


@dataclass(frozen=True)
class InputBox:
    """The set ``{x~ : ||x~ - center||_inf <= radius}``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=FLOAT)
        if c.ndim not in (1, 2):
            raise DimensionError(f"center must be 1-D or a batch of rows, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ParameterError("box center must be finite")
        r = float(self.radius)
        if not r >= 0:
            raise ParameterError(f"radius must be >= 0, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @property
    def dim(self):
        return self.center.shape[-1]

    @property
    def lower(self):
        return self.center - self.radius

    @property
    def upper(self):
        return self.center + self.radius


@dataclass(frozen=True)
class Interval:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=FLOAT)
        hi = np.asarray(self.upper, dtype=FLOAT)
        if lo.shape != hi.shape:
            raise DimensionError(f"lower {lo.shape} and upper {hi.shape} differ")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ParameterError("interval endpoints must be finite")
        if np.any(lo > hi):
            raise ParameterError("interval has lower > upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_center_radius(cls, center, radius):
        return cls(center - radius, center + radius)

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self):
        return 0.5 * (self.upper - self.lower)

    def contains(self, values, slack=0.0):
        v = np.asarray(values, dtype=FLOAT)
        return bool(np.all(v >= self.lower - slack) and np.all(v <= self.upper + slack))

    def __len__(self):
        return self.lower.shape[-1]


@dataclass(frozen=True)
class AffineEnvelope:
    """Affine map ``x~ -> map @ x~ + offset`` standing in for the network."""

    map: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        if self.map.shape[:-1] != self.offset.shape:
            raise DimensionError("envelope map rows must match offset length")


def _check_layer_input(weights, box):
    if weights.shape[1] != box.dim:
        raise DimensionError(
            f"layer expects input dim {weights.shape[1]}, box has dim {box.dim}")


def affine_interval(layer, box):
    """``A x + b -/+ eps |A| 1`` for an :class:`~tightprop.network.AffineLayer`."""
    w = layer.weights
    _check_layer_input(w, box)
    center = box.center @ w.T + layer.bias
    radius = box.radius * np.abs(w).sum(axis=1)
    return Interval(center - radius, center + radius)


def relu_interval(iv):
    return Interval(np.maximum(iv.lower, 0.0), np.maximum(iv.upper, 0.0))


def _affine_of_interval(weights, bias, mid, rad):
    return mid @ weights.T + bias, rad @ np.abs(weights).T


def ibp_network(net, box):
    """Layerwise interval bound propagation in midpoint/half-width form."""
    first = net.layers[0]
    _check_layer_input(first.weights, box)
    mid = box.center @ first.weights.T + first.bias
    rad = box.radius * np.abs(first.weights).sum(axis=1)
    if box.center.ndim == 2:
        rad = np.broadcast_to(rad, mid.shape)
    for layer in net.layers[1:]:
        lo = np.maximum(mid - rad, 0.0)
        hi = np.maximum(mid + rad, 0.0)
        mid, rad = _affine_of_interval(layer.weights, layer.bias,
                                       0.5 * (hi + lo), 0.5 * (hi - lo))
    return Interval(mid - rad, mid + rad)


def mask_from_upper(u1):
    """0/1 float vector: 1 where ``u1 >= 0`` (zero counts as active)."""
    return (np.asarray(u1, dtype=FLOAT) >= 0.0).astype(FLOAT)


def expected_bounds_block(A1, b1, a2, b2, box):
    """Expected tight bounds of ``a2 relu(A1 x~ + b1) + b2`` over ``box``.

    ``a2`` may be a vector (single output) or a matrix applied row by row
    with one shared mask; ``b2`` is a scalar or a vector to match.
    """
    A1 = as_matrix(A1, "A1")
    b1 = as_vector(b1, "b1")
    a2 = np.asarray(a2, dtype=FLOAT)
    a2 = a2[None, :] if a2.ndim == 1 else as_matrix(a2, "a2")
    b2 = np.atleast_1d(np.asarray(b2, dtype=FLOAT))
    if A1.shape[0] != b1.size or a2.shape[1] != b1.size or b2.size != a2.shape[0]:
        raise DimensionError("block weights do not conform")
    _check_layer_input(A1, box)
    u1 = box.center @ A1.T + b1 + box.radius * np.abs(A1).sum(axis=1)
    mask = mask_from_upper(u1)
    if mask.ndim == 1:
        G = (a2 * mask) @ A1
        h = (a2 * mask) @ b1 + b2
        center = G @ box.center + h
        radius = box.radius * np.abs(G).sum(axis=1)
    else:
        G = np.einsum("oj,bj,jn->bon", a2, mask, A1)
        h = np.einsum("oj,bj,j->bo", a2, mask, b1) + b2
        center = np.einsum("bon,bn->bo", G, box.center) + h
        radius = box.radius * np.abs(G).sum(axis=2)
    return Interval(center - radius, center + radius)


def blockwise_envelope(net, center, eps):
    """Run the mask recursion; return ``(G, h, masks)``.

    ``center`` is one input or a batch of rows; ``G`` then has shape
    ``(out, n)`` or ``(batch, out, n)``. ``masks[i]`` is the 0/1 mask put in
    place of the ReLU after layer ``i``.
    """
    layers = net.layers
    first = layers[0]
    x = np.asarray(center, dtype=FLOAT)
    if x.shape[-1] != first.in_dim:
        raise DimensionError(f"center dim {x.shape[-1]} != network in_dim {first.in_dim}")
    batched = x.ndim == 2
    G = first.weights
    h = first.bias
    masks = []
    for layer in layers[1:]:
        if batched and G.ndim == 2:
            upper = x @ G.T + h + eps * np.abs(G).sum(axis=1)
        elif batched:
            upper = np.einsum("bkn,bn->bk", G, x) + h + eps * np.abs(G).sum(axis=2)
        else:
            upper = G @ x + h + eps * np.abs(G).sum(axis=1)
        m = mask_from_upper(upper)
        masks.append(m)
        W = layer.weights
        if batched:
            # (W diag(m) G) for every batch row; W diag(m) first keeps it cheap.
            WM = W[None, :, :] * m[:, None, :]
            G = WM @ G if G.ndim == 3 else WM @ G[None, :, :]
            h = np.einsum("bok,bk->bo", WM, np.broadcast_to(h, m.shape)) + layer.bias
        else:
            WM = W * m
            G = WM @ G
            h = WM @ h + layer.bias
    if batched and G.ndim == 2:
        G = np.broadcast_to(G, (x.shape[0],) + G.shape)
        h = np.broadcast_to(h, (x.shape[0],) + h.shape)
    return G, h, masks


def envelope_interval(G, h, center, eps):
    x = np.asarray(center, dtype=FLOAT)
    if G.ndim == 3:
        c = np.einsum("bon,bn->bo", G, x) + h
        r = eps * np.abs(G).sum(axis=2)
    else:
        c = G @ x + h
        r = eps * np.abs(G).sum(axis=1)
    return Interval(c - r, c + r)


def propagate_blockwise(net, box):
    """Expected tight bounds of a whole network, plus its affine envelope."""
    if net.depth < 2:
        raise ParameterError("blockwise propagation needs at least two layers")
    G, h, _ = blockwise_envelope(net, box.center, box.radius)
    return envelope_interval(G, h, box.center, box.radius), AffineEnvelope(G, h)


def width(iv):
    return iv.upper - iv.lower
