"""Interval output bounds for ReLU networks.

Three ways to bound a network's outputs over an l-inf box: layerwise
interval bound propagation, the expected tight blockwise bounds, and
sampling/enumeration oracles for the true range. The tight bounds also
drive a small robust-training loop.
"""

from .bounds import (AffineEnvelope, InputBox, Interval, affine_interval, blockwise_envelope,
                     expected_bounds_block, ibp_network, propagate_blockwise, relu_interval, width)
from .errors import DimensionError, DivergenceError, ParameterError, ParseError, TightpropError
from .linalg import make_rng
from .network import (AffineLayer, ReluNetwork, backward, forward, init_network, load_network,
                      save_network)
from .oracle import (OracleBracket, TightnessReport, certified_bracket_2layer, empirical_range,
                     gamma, tightness)

__version__ = "0.1.0"
