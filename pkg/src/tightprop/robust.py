"""Robust training with expected tight bounds, PGD attacks and robustness metrics.

The training objective for a sample ``(x, y)`` is::

    CE(f(x) / T, y) + kappa * CE(z / T, y)

where ``z`` takes the lower bound of the true class and the upper bounds
of every other class, with bounds from the blockwise mask recursion over
the ``eps_train`` box. Gradients of the bound term treat the masks as
constants of the current weights.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import blockwise_envelope, envelope_interval
from .errors import DimensionError, DivergenceError, ParameterError
from .linalg import FLOAT, make_rng
from .network import GradientTape, backward, forward, forward_trace

log = logging.getLogger(__name__)

MNIST_EPS_TEST = (0.1, 0.2, 0.3, 0.4)
CIFAR_EPS_TEST = (2 / 255, 8 / 255, 16 / 255, 0.1)
ACCURACY_FLOOR = {"mnist": 0.975, "cifar10": 0.40}


@dataclass(frozen=True)
class TrainConfig:
    kappa: float
    eps_train: float
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 50
    temperature: float = 1.0
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if self.kappa < 0 or self.eps_train < 0:
            raise ParameterError("kappa and eps_train must be >= 0")
        if not self.temperature > 0:
            raise ParameterError("temperature must be positive")
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("learning_rate/epochs must be >= 0 and batch_size >= 1")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class PgdConfig:
    eps_test: float
    steps: int = 40
    step_size: float = None
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.eps_test < 0:
            raise ParameterError("eps_test must be >= 0")
        if self.steps < 1 or self.restarts < 1:
            raise ParameterError("steps and restarts must be >= 1")
        if self.step_size is None:
            object.__setattr__(self, "step_size", 2.5 * self.eps_test / self.steps)
        if self.eps_test > 0 and not self.step_size > 0:
            raise ParameterError("step_size must be positive")


@dataclass(frozen=True)
class AdversarialLogits:
    z: np.ndarray


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels, temperature=1.0):
    """Per-sample CE of ``logits / T`` and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=FLOAT)
    single = logits.ndim == 1
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    lsm = log_softmax(logits / temperature)
    rows = np.arange(labels.size)
    loss = -lsm[rows, labels]
    grad = np.exp(lsm)
    grad[rows, labels] -= 1.0
    grad /= temperature
    if single:
        return loss[0], grad[0]
    return loss, grad


def _onehot(labels, classes):
    out = np.zeros((labels.size, classes), dtype=bool)
    out[np.arange(labels.size), labels] = True
    return out


def robust_logits(bounds, true_label):
    """Lower bound at ``true_label``, upper bounds elsewhere."""
    lower, upper = np.asarray(bounds.lower), np.asarray(bounds.upper)
    classes = lower.shape[-1]
    labels = np.atleast_1d(np.asarray(true_label, dtype=np.int64))
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ParameterError(f"label out of range for {classes} classes")
    if lower.ndim == 1:
        z = upper.copy()
        z[labels[0]] = lower[labels[0]]
    else:
        z = np.where(_onehot(labels, classes), lower, upper)
    return AdversarialLogits(z)


def _record_envelope(net, X, eps):
    """Blockwise recursion over a batch, keeping what backprop needs."""
    layers = net.layers
    B = X.shape[0]
    G = layers[0].weights
    h = np.broadcast_to(layers[0].bias, (B, layers[0].out_dim))
    steps = []
    for layer in layers[1:]:
        if G.ndim == 2:
            upper = X @ G.T + h + eps * np.abs(G).sum(axis=1)
        else:
            upper = np.einsum("bkn,bn->bk", G, X) + h + eps * np.abs(G).sum(axis=2)
        m = (upper >= 0.0).astype(FLOAT)
        steps.append((G, h, m))
        WM = layer.weights[None, :, :] * m[:, None, :]
        G = WM @ G
        h = np.einsum("bok,bk->bo", WM, h) + layer.bias
    if G.ndim == 2:
        G = np.broadcast_to(G, (B,) + G.shape)
    return G, h, steps


def _envelope_backward(net, steps, dG, dh):
    """Parameter gradients of ``sum(dG * G_final) + sum(dh * h_final)``."""
    L = net.depth
    w_grads = [None] * L
    b_grads = [None] * L
    for i in range(L - 1, 0, -1):
        G_prev, h_prev, m = steps[i - 1]
        W = net.layers[i].weights
        hm = h_prev * m
        if G_prev.ndim == 2:
            # G_prev is the first-layer matrix shared by every batch row.
            w_grads[i] = ((dG @ G_prev.T) * m[:, None, :]).sum(axis=0) + dh.T @ hm
        else:
            MG = G_prev * m[:, :, None]
            w_grads[i] = np.tensordot(dG, MG, axes=([0, 2], [0, 2])) + dh.T @ hm
        b_grads[i] = dh.sum(axis=0)
        dG = np.matmul(W.T, dG) * m[:, :, None]
        dh = (dh @ W) * m
    w_grads[0] = dG.sum(axis=0)
    b_grads[0] = dh.sum(axis=0)
    return w_grads, b_grads


def _finite_bounds(G, h, X, eps):
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            return envelope_interval(G, h, X, eps)
        except ParameterError as exc:
            raise DivergenceError("bound envelope overflowed; the weights have diverged") from exc


def robust_loss(net, x, y, box_or_eps, cfg):
    """Mean robust loss over a batch and its exact gradient tape.

    ``x`` is one input or a batch of rows; ``box_or_eps`` is an
    :class:`~tightprop.bounds.InputBox` (its radius is used, its center must
    equal ``x``) or a bare radius. Returns ``(loss, tape)``.
    """
    eps = getattr(box_or_eps, "radius", box_or_eps)
    X = np.atleast_2d(np.asarray(x, dtype=FLOAT))
    Y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if X.shape[0] != Y.shape[0] or X.shape[1] != net.in_dim:
        raise DimensionError("inputs and labels do not conform to the network")
    B = X.shape[0]
    T = cfg.temperature

    pre, logits = forward_trace(net, X)
    nominal, g_logits = cross_entropy(logits, Y, T)
    tape = backward(net, X, g_logits / B, trace=pre)
    total = float(nominal.mean())

    if cfg.kappa > 0:
        G, h, steps = _record_envelope(net, X, float(eps))
        bounds = _finite_bounds(G, h, X, float(eps))
        z = robust_logits(bounds, Y).z
        adv, g_z = cross_entropy(z, Y, T)
        total += cfg.kappa * float(adv.mean())
        g_z *= cfg.kappa / B
        sign = np.where(_onehot(Y, net.out_dim), -1.0, 1.0)
        g_rad = g_z * sign
        dG = g_z[:, :, None] * X[:, None, :] + eps * g_rad[:, :, None] * np.sign(G)
        w_b, b_b = _envelope_backward(net, steps, dG, g_z)
        tape.weights = [a + b for a, b in zip(tape.weights, w_b)]
        tape.biases = [a + b for a, b in zip(tape.biases, b_b)]
    return total, tape


def nominal_loss(net, x, y, temperature=1.0):
    loss, _ = cross_entropy(forward(net, np.atleast_2d(x)), np.atleast_1d(y), temperature)
    return float(np.mean(loss))


def _input_grad(net, X, Y):
    pre, logits = forward_trace(net, X)
    loss, g = cross_entropy(logits, Y)
    return loss, backward(net, X, g, trace=pre).input


def pgd_attack(net, x, y, cfg, data_range=None):
    """Sign-gradient PGD on the cross-entropy, best iterate across restarts.

    Each step is projected onto the ``eps_test`` box around ``x`` and then
    clamped to ``data_range`` when given. The first restart starts at ``x``;
    later restarts start at a uniform point of the feasible box. The
    starting point counts as an iterate, so the returned loss is never
    below the loss at ``x``.
    """
    X = np.atleast_2d(np.asarray(x, dtype=FLOAT))
    Y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    single = np.asarray(x).ndim == 1
    eps = cfg.eps_test
    if eps == 0:
        return X[0].copy() if single else X.copy()
    lo, hi = X - eps, X + eps
    if data_range is not None:
        lo = np.maximum(lo, data_range[0])
        hi = np.minimum(hi, data_range[1])
    best = X.copy()
    best_loss = None
    rng = make_rng(cfg.seed, 0x9D)
    for r in range(cfg.restarts):
        cur = X.copy() if r == 0 else rng.uniform(lo, hi)
        for step in range(cfg.steps + 1):
            loss, grad = _input_grad(net, cur, Y)
            if best_loss is None:
                best_loss = loss
            else:
                better = loss > best_loss
                best[better] = cur[better]
                best_loss = np.where(better, loss, best_loss)
            if step == cfg.steps:
                break
            cur = np.clip(cur + cfg.step_size * np.sign(grad), X - eps, X + eps)
            if data_range is not None:
                cur = np.clip(cur, data_range[0], data_range[1])
    return best[0] if single else best


def predict(net, X):
    """Argmax class; ties go to the lowest index."""
    return np.argmax(forward(net, np.atleast_2d(X)), axis=1)


def accuracy(net, dataset):
    return float(np.mean(predict(net, dataset.samples) == dataset.labels))


def pgd_robustness(net, dataset, cfg, batch_size=500):
    """Fraction of samples whose predicted class survives the PGD attack.

    The prediction is compared to the clean prediction, not to the label.
    """
    if len(dataset) == 0:
        raise ParameterError("dataset is empty")
    kept = 0
    for s in range(0, len(dataset), batch_size):
        X = dataset.samples[s:s + batch_size]
        Y = dataset.labels[s:s + batch_size]
        adv = pgd_attack(net, X, Y, cfg, dataset.declared_range)
        kept += int(np.sum(predict(net, X) == predict(net, adv)))
    return kept / len(dataset)


def mean_bound_width(net, X, eps):
    if net.depth < 2:
        w = 2 * eps * np.abs(net.layers[0].weights).sum(axis=1)
        return float(w.mean())
    G, h, _ = blockwise_envelope(net, X, eps)
    iv = _finite_bounds(G, h, X, eps)
    return float(np.mean(iv.upper - iv.lower))


@dataclass
class TrainResult:
    net: object
    log: list = field(default_factory=list)


def train(net, dataset, cfg, test=None, width_probe=200):
    """Minibatch SGD on :func:`robust_loss` with constant kappa and eps_train.

    Each epoch reshuffles with ``make_rng(cfg.seed, epoch)``; the final
    partial batch is kept. The per-epoch log holds the mean train loss,
    accuracy on ``test`` (or on the training set when absent) and the mean
    expected-bound width over the first ``width_probe`` training samples.
    Raises :class:`DivergenceError` on a non-finite loss.
    """
    if len(dataset) == 0:
        raise ParameterError("dataset is empty")
    net = net.copy()
    weights = [l.weights for l in net.layers]
    biases = [l.bias for l in net.layers]
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    probe = dataset.samples[:width_probe]
    history = []
    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, epoch).permutation(len(dataset))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, tape = robust_loss(net, dataset.samples[idx], dataset.labels[idx],
                                     cfg.eps_train, cfg)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {s // cfg.batch_size}")
            losses.append(loss * idx.size)
            if cfg.learning_rate == 0:
                continue
            for i in range(net.depth):
                if cfg.momentum:
                    vel_w[i] = cfg.momentum * vel_w[i] + tape.weights[i]
                    vel_b[i] = cfg.momentum * vel_b[i] + tape.biases[i]
                    weights[i] -= cfg.learning_rate * vel_w[i]
                    biases[i] -= cfg.learning_rate * vel_b[i]
                else:
                    weights[i] -= cfg.learning_rate * tape.weights[i]
                    biases[i] -= cfg.learning_rate * tape.biases[i]
        row = {
            "epoch": epoch + 1,
            "loss": sum(losses) / len(dataset),
            "nominal_acc": accuracy(net, test if test is not None else dataset),
            "mean_bound_width": mean_bound_width(net, probe, cfg.eps_train),
        }
        log.info("epoch %d loss %.4f acc %.4f width %.4g", row["epoch"], row["loss"],
                 row["nominal_acc"], row["mean_bound_width"])
        history.append(row)
    return TrainResult(net, history)


def evaluate_grid(models, dataset, eps_test_set=MNIST_EPS_TEST, steps=40, restarts=1,
                  seed=0, accuracy_floor=None, step_size=None):
    """Accuracy and PGD robustness for each model over a set of test radii.

    ``models`` maps a model id to ``(net, meta)`` where ``meta`` may carry
    ``eps_train`` and ``kappa``. Each row holds the accuracy, one
    robustness value per radius, their mean, and whether the accuracy meets
    ``accuracy_floor`` (always true when no floor is given).
    """
    if not models or not eps_test_set:
        raise ParameterError("need at least one model and one eps_test")
    rows = []
    for model_id, (net, meta) in models.items():
        acc = accuracy(net, dataset)
        row = {"model_id": model_id, "eps_train": meta.get("eps_train"),
               "kappa": meta.get("kappa"), "accuracy": acc}
        robs = []
        for eps in eps_test_set:
            cfg = PgdConfig(eps, steps=steps, step_size=step_size, restarts=restarts, seed=seed)
            r = pgd_robustness(net, dataset, cfg)
            row[f"robustness_{eps:g}"] = r
            robs.append(r)
        row["mean_robustness"] = float(np.mean(robs))
        row["passes_floor"] = accuracy_floor is None or acc >= accuracy_floor
        rows.append(row)
    return rows
