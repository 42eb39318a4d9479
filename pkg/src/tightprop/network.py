"""ReLU networks: construction, evaluation, exact gradients, serialization.

A network is a chain of affine layers with ReLU applied between layers but
never after the last one::

    f(x) = A_L relu(A_{L-1} relu(... relu(A_1 x + b_1) ...) + b_{L-1}) + b_L

All evaluation functions accept either a single input vector or a batch of
row vectors.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParameterError, ParseError
from .linalg import FLOAT, as_matrix, as_vector, sample_gaussian_matrix

SCHEMES = ("paper_random", "trained_default")
JSON_FORMAT = "tightprop-network"
JSON_VERSION = 1


@dataclass(frozen=True)
class AffineLayer:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = as_matrix(self.weights, "weights")
        b = as_vector(self.bias, "bias")
        if w.shape[0] != b.shape[0]:
            raise DimensionError(
                f"bias length {b.shape[0]} != weight rows {w.shape[0]}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class ReluNetwork:
    layers: tuple
    seed: int = None

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ParameterError("a network needs at least one layer")
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.out_dim != b.in_dim:
                raise DimensionError(
                    f"layer {i} out_dim {a.out_dim} != layer {i + 1} in_dim {b.in_dim}")
        object.__setattr__(self, "layers", layers)

    @property
    def dims(self):
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    @property
    def depth(self):
        return len(self.layers)

    def copy(self):
        return ReluNetwork(
            tuple(AffineLayer(l.weights.copy(), l.bias.copy()) for l in self.layers),
            self.seed)

    def __eq__(self, other):
        if not isinstance(other, ReluNetwork) or self.depth != other.depth:
            return False
        return all(np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
                   for a, b in zip(self.layers, other.layers))

    __hash__ = None


@dataclass
class GradientTape:
    """Gradients of ``upstream . f(x)`` with shapes mirroring the network.

    For batched inputs the parameter gradients are summed over the batch
    and ``input`` keeps one row per sample.
    """

    weights: list
    biases: list
    input: np.ndarray = field(default=None)


def network_from_arrays(weights, biases, seed=None):
    return ReluNetwork(tuple(AffineLayer(w, b) for w, b in zip(weights, biases)), seed)


def init_network(rng, dims, scheme="paper_random", seed=None):
    """Draw a network with layer widths ``dims``.

    Weights are N(0, 1/sqrt(fan_in)) in the standard-deviation sense and
    biases U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual framework default
    for dense layers. ``trained_default`` uses the same law; it exists so
    that training configs can name their starting point. Draws are taken
    layer by layer, weights before bias.
    """
    if scheme not in SCHEMES:
        raise ParameterError(f"unknown init scheme {scheme!r}; expected one of {SCHEMES}")
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ParameterError("dims needs at least an input and an output width")
    if any(d <= 0 for d in dims):
        raise ParameterError(f"all widths must be positive, got {dims}")
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        scale = 1.0 / math.sqrt(fan_in)
        w = sample_gaussian_matrix(rng, fan_out, fan_in, scale)
        b = rng.uniform(-scale, scale, size=fan_out)
        layers.append(AffineLayer(w, b))
    return ReluNetwork(tuple(layers), seed)


def _check_input(net, x):
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim not in (1, 2) or x.shape[-1] != net.in_dim:
        raise DimensionError(f"input shape {x.shape} does not match in_dim {net.in_dim}")
    return x


def forward(net, x):
    """Logits for one input vector or a batch of rows."""
    h = _check_input(net, x)
    last = net.depth - 1
    for i, layer in enumerate(net.layers):
        h = h @ layer.weights.T + layer.bias
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def forward_trace(net, x):
    """Forward pass keeping every pre-activation (needed by :func:`backward`)."""
    h = _check_input(net, x)
    pre = []
    last = net.depth - 1
    for i, layer in enumerate(net.layers):
        z = h @ layer.weights.T + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return pre, h


def backward(net, x, upstream_grad, trace=None):
    """Reverse-mode gradients of ``upstream_grad . f(x)``.

    ReLU'(0) is taken as 0. ``trace`` may carry a precomputed
    :func:`forward_trace` pre-activation list for the same ``x``.
    """
    x = _check_input(net, x)
    g = np.asarray(upstream_grad, dtype=FLOAT)
    if g.shape[-1] != net.out_dim or g.ndim != x.ndim or (x.ndim == 2 and g.shape[0] != x.shape[0]):
        raise DimensionError(f"upstream gradient shape {g.shape} does not match output")
    pre = trace if trace is not None else forward_trace(net, x)[0]
    batched = x.ndim == 2
    w_grads = [None] * net.depth
    b_grads = [None] * net.depth
    for i in range(net.depth - 1, -1, -1):
        below = x if i == 0 else np.maximum(pre[i - 1], 0.0)
        if batched:
            w_grads[i] = g.T @ below
            b_grads[i] = g.sum(axis=0)
        else:
            w_grads[i] = np.outer(g, below)
            b_grads[i] = g.copy()
        g = g @ net.layers[i].weights
        if i > 0:
            g = g * (pre[i - 1] > 0.0)
    return GradientTape(w_grads, b_grads, g)


def export_weight_histogram(net, bins=50):
    """Per-layer equal-width histograms over all weight entries."""
    if int(bins) < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    table = []
    for i, layer in enumerate(net.layers):
        counts, edges = np.histogram(layer.weights.ravel(), bins=int(bins))
        table.append({"layer": i, "edges": edges, "counts": counts})
    return table


def conv2d_as_affine(in_shape, weights, bias, stride=1, padding=0):
    """Materialize a 2-D convolution as a dense :class:`AffineLayer`.

    ``in_shape`` is ``(channels, height, width)``, ``weights`` has shape
    ``(filters, channels, kh, kw)``. Padding is symmetric zero padding of
    ``padding`` pixels on every side (0 means "valid"). Inputs and outputs
    are flattened channel-major (C, H, W), the usual tensor layout. Meant for
    tiny images only: the matrix has ``filters*oh*ow x C*H*W`` entries.
    """
    c, h, w = (int(s) for s in in_shape)
    weights = np.asarray(weights, dtype=FLOAT)
    bias = as_vector(bias, "bias")
    f, wc, kh, kw = weights.shape
    if wc != c or bias.size != f:
        raise DimensionError("conv weights/bias do not match input channels/filters")
    if stride < 1 or padding < 0:
        raise ParameterError("stride must be >= 1 and padding >= 0")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError("kernel larger than padded input")
    dense = np.zeros((f * oh * ow, c * h * w), dtype=FLOAT)
    for fo in range(f):
        for i in range(oh):
            for j in range(ow):
                row = (fo * oh + i) * ow + j
                for ci in range(c):
                    for di in range(kh):
                        y = i * stride + di - padding
                        if not 0 <= y < h:
                            continue
                        for dj in range(kw):
                            xx = j * stride + dj - padding
                            if 0 <= xx < w:
                                dense[row, (ci * h + y) * w + xx] += weights[fo, ci, di, dj]
    return AffineLayer(dense, np.repeat(bias, oh * ow)), (f, oh, ow)


# -- serialization -----------------------------------------------------------

def _hex(a):
    return [float(v).hex() for v in np.ravel(a)]


def to_json_dict(net):
    return {
        "format": JSON_FORMAT,
        "version": JSON_VERSION,
        "seed": net.seed,
        "dims": net.dims,
        "layers": [
            {"rows": l.out_dim, "cols": l.in_dim,
             "weights": _hex(l.weights), "bias": _hex(l.bias)}
            for l in net.layers
        ],
    }


def from_json_dict(doc):
    if doc.get("format") != JSON_FORMAT:
        raise ParseError(f"not a {JSON_FORMAT} document", field="format")
    if doc.get("version") != JSON_VERSION:
        raise ParseError(f"unsupported version {doc.get('version')!r}", field="version")
    layers = []
    for i, entry in enumerate(doc["layers"]):
        rows, cols = int(entry["rows"]), int(entry["cols"])
        w = np.array([float.fromhex(s) for s in entry["weights"]], dtype=FLOAT)
        b = np.array([float.fromhex(s) for s in entry["bias"]], dtype=FLOAT)
        if w.size != rows * cols or b.size != rows:
            raise ParseError(f"layer {i} has inconsistent sizes", field=f"layers[{i}]")
        layers.append(AffineLayer(w.reshape(rows, cols), b))
    net = ReluNetwork(tuple(layers), doc.get("seed"))
    if net.dims != list(doc["dims"]):
        raise ParseError("dims do not match layer shapes", field="dims")
    return net


def save_network(net, path):
    Path(path).write_text(json.dumps(to_json_dict(net), indent=1) + "\n")


def load_network(path):
    return from_json_dict(json.loads(Path(path).read_text()))
