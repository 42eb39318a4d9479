"""Distributional approximations behind the expected bounds, with MC checks.

Conventions: ``sigma`` arguments are standard deviations of i.i.d.
zero-mean Gaussian weights; ``x`` is the box center and ``eps`` its
l-inf radius, with the input drawn uniformly from the box.

The standard normal CDF is ``scipy.special.ndtr``, which is accurate to
about 1e-16 absolute over the whole real line (it switches to ``erfc`` in
the tails), comfortably inside the 1e-12 target at +/-8 sigma.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy import stats as sps

from .errors import DimensionError, ParameterError
from .linalg import FLOAT, as_matrix, as_vector

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_CHUNK = 8192


@dataclass(frozen=True)
class GaussianLayerLaw:
    """Per-coordinate law N(mean_i, variance) of the first affine output."""

    mean: np.ndarray
    variance: float

    def __post_init__(self):
        if self.variance < 0:
            raise ParameterError("variance must be >= 0")


@dataclass(frozen=True)
class ApproxBounds:
    l_approx: float
    u_approx: float
    m: float


def layer_output_law(sigma_A1, x, eps, b1=None):
    """Covariance scale of ``A x~`` for Gaussian ``A`` and uniform ``x~``.

    Returns ``eps^2 sigma^2 n / 3 + sigma^2 ||x||^2`` as the common
    diagonal variance; the mean is ``b1`` (zeros when omitted).
    """
    if not sigma_A1 > 0:
        raise ParameterError(f"sigma_A1 must be positive, got {sigma_A1}")
    if eps < 0:
        raise ParameterError(f"eps must be >= 0, got {eps}")
    x = as_vector(x, "x")
    n = x.size
    var = (eps ** 2) * (sigma_A1 ** 2) * n / 3.0 + (sigma_A1 ** 2) * float(x @ x)
    mean = np.zeros(1) if b1 is None else as_vector(b1, "b1")
    return GaussianLayerLaw(mean, var)


def mc_layer_output_moments(sigma_A1, x, eps, k, draws, rng):
    """Monte-Carlo mean/covariance of ``A x~`` over joint draws of ``A`` and ``x~``.

    Returns ``(cov, se)``: the ``k x k`` sample covariance and the standard
    error of each entry, estimated from the spread of the products.
    """
    x = as_vector(x, "x")
    n = x.size
    s1 = np.zeros(k)
    s2 = np.zeros((k, k))
    s4 = np.zeros((k, k))
    done = 0
    while done < draws:
        m = min(_CHUNK, draws - done)
        A = rng.normal(0.0, sigma_A1, size=(m, k, n))
        xt = x + rng.uniform(-eps, eps, size=(m, n))
        y = np.einsum("mkn,mn->mk", A, xt)
        s1 += y.sum(axis=0)
        prod = y[:, :, None] * y[:, None, :]
        s2 += prod.sum(axis=0)
        s4 += (prod ** 2).sum(axis=0)
        done += m
    mean = s1 / draws
    second = s2 / draws
    cov = second - np.outer(mean, mean)
    se = np.sqrt(np.maximum(s4 / draws - second ** 2, 0.0) / draws)
    return cov, se


def clt_normality_check(n, trials, rng, sigma_a=1.0, x=None, eps=1.0):
    """Moments of the standardized sum ``sum_i a_i x~_i`` against N(0, 1).

    ``a ~ N(0, sigma_a^2 I)`` is independent of ``x~ ~ U[x - eps, x + eps]``,
    so each centering term ``E[a_i x~_i] = E[a_i] E[x~_i]`` is exactly 0.
    Returns a dict with sample mean, variance, skewness, excess kurtosis,
    the Kolmogorov-Smirnov distance to N(0, 1) and its p-value.
    """
    if n < 2:
        raise ParameterError("n must be >= 2")
    x = np.zeros(n) if x is None else as_vector(x, "x")
    centering = 0.0 * x.sum()
    s_n = math.sqrt(sigma_a ** 2 * float(np.sum(x ** 2 + eps ** 2 / 3.0)))
    z = np.empty(trials)
    done = 0
    while done < trials:
        m = min(_CHUNK, trials - done)
        a = rng.normal(0.0, sigma_a, size=(m, n))
        xt = x + rng.uniform(-eps, eps, size=(m, n))
        z[done:done + m] = ((a * xt).sum(axis=1) - centering) / s_n
        done += m
    ks = sps.kstest(z, "norm")
    return {
        "n": n,
        "trials": trials,
        "centering": centering,
        "mean": float(z.mean()),
        "variance": float(z.var()),
        "skewness": float(sps.skew(z)),
        "excess_kurtosis": float(sps.kurtosis(z)),
        "ks_distance": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
    }


def rectified_second_moment(mu, sigma):
    """``E[max(y, 0)^2]`` for ``y ~ N(mu, sigma^2)``."""
    mu = np.asarray(mu, dtype=FLOAT)
    if sigma == 0:
        return np.maximum(mu, 0.0) ** 2
    t = mu / sigma
    return (mu ** 2 + sigma ** 2) * special.ndtr(t) + mu * sigma * np.exp(-0.5 * t * t) * INV_SQRT_2PI


def rectified_mean(mu, sigma):
    """``E[max(y, 0)]`` for ``y ~ N(mu, sigma^2)``."""
    mu = np.asarray(mu, dtype=FLOAT)
    if sigma == 0:
        return np.maximum(mu, 0.0)
    t = mu / sigma
    return mu * special.ndtr(t) + sigma * np.exp(-0.5 * t * t) * INV_SQRT_2PI


def approx_true_bounds(law, b1, sigma_a2, b2, m):
    """``b2 -/+ m * sqrt(Var[a2 . relu(y) + b2])`` with ``y ~ law``.

    ``a2`` is zero-mean and independent of ``y``, so the expectation is
    ``b2`` and the variance is ``sigma_a2^2 * sum_i E[max(y_i, 0)^2]``.
    """
    if m < 0:
        raise ParameterError("m must be >= 0")
    if not sigma_a2 > 0:
        raise ParameterError("sigma_a2 must be positive")
    b1 = as_vector(b1, "b1")
    var = sigma_a2 ** 2 * float(rectified_second_moment(b1, math.sqrt(law.variance)).sum())
    half = m * math.sqrt(var)
    return ApproxBounds(b2 - half, b2 + half, m)


def approx_output_variance(law, b1, sigma_a2):
    b1 = as_vector(b1, "b1")
    return sigma_a2 ** 2 * float(rectified_second_moment(b1, math.sqrt(law.variance)).sum())


def mc_rectified_output(law, b1, sigma_a2, b2, draws, rng):
    """Samples of ``a2 . relu(y) + b2`` with ``y ~ N(b1, var I)``, ``a2 ~ N(0, sigma_a2^2 I)``."""
    b1 = as_vector(b1, "b1")
    sd = math.sqrt(law.variance)
    out = np.empty(draws)
    done = 0
    while done < draws:
        m = min(_CHUNK * 8, draws - done)
        y = b1 + sd * rng.standard_normal(size=(m, b1.size))
        a2 = rng.normal(0.0, sigma_a2, size=(m, b1.size))
        out[done:done + m] = (a2 * np.maximum(y, 0.0)).sum(axis=1) + b2
        done += m
    return out


def assumption1_self_check(law, b1, sigma_a2, b2, draws, rng):
    """Fit the smallest slack ``m`` covering MC draws and return its bounds.

    ``m_hat`` is the largest standardized excursion of the sampled outputs
    from the closed-form mean, so the returned :class:`ApproxBounds`
    contain the sampled range by construction.
    """
    samples = mc_rectified_output(law, b1, sigma_a2, b2, draws, rng)
    sd = math.sqrt(approx_output_variance(law, b1, sigma_a2))
    m_hat = float(np.max(np.abs(samples - b2)) / sd) if sd > 0 else 0.0
    bounds = approx_true_bounds(law, b1, sigma_a2, b2, m_hat)
    return {
        "m_hat": m_hat,
        "bounds": bounds,
        "sample_min": float(samples.min()),
        "sample_max": float(samples.max()),
        "sample_mean": float(samples.mean()),
        "sample_var": float(samples.var()),
        "closed_form_var": sd ** 2,
    }


def _half_chi_ratio(k):
    # sqrt(2) Gamma((k+1)/2) / Gamma(k/2) == E||a||_2 for a ~ N(0, I_k)
    return math.sqrt(2.0) * math.exp(math.lgamma((k + 1) / 2.0) - math.lgamma(k / 2.0))


def prop3_expectation(k):
    """Both closed forms for ``E[||a||_2 - ||a||_1 / sqrt(2 pi)]``, ``a ~ N(0, I_k)``.

    ``formula_l1`` subtracts ``k sqrt(2/pi)`` (the expected l1 norm
    without the 1/sqrt(2 pi) factor); ``formula_scaled`` subtracts
    ``k / pi``, which is what the left-hand expectation evaluates to.
    """
    k = int(k)
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    chi = _half_chi_ratio(k)
    return chi - k * math.sqrt(2.0 / math.pi), chi - k / math.pi


def mc_prop3(k, draws, rng):
    """MC mean and standard error of ``||a||_2 - ||a||_1 / sqrt(2 pi)``."""
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < draws:
        m = min(_CHUNK * 16, draws - done)
        a = rng.standard_normal(size=(m, k))
        v = np.sqrt((a * a).sum(axis=1)) - np.abs(a).sum(axis=1) * INV_SQRT_2PI
        total += v.sum()
        total_sq += (v * v).sum()
        done += m
    mean = total / draws
    var = max(total_sq / draws - mean * mean, 0.0)
    return mean, math.sqrt(var / draws)


def prop3_arbitration(k_values, draws, rng, rel_tol=0.01):
    """Compare MC against both closed forms; one row per ``k``."""
    rows = []
    for k in k_values:
        l1_form, scaled_form = prop3_expectation(k)
        mc, se = mc_prop3(int(k), draws, rng)

        def rel(v):
            return abs(mc - v) / abs(v) if v != 0 else abs(mc - v)

        rows.append({
            "k": int(k), "mc_mean": mc, "mc_se": se,
            "formula_l1": l1_form, "formula_scaled": scaled_form,
            "rel_err_l1": rel(l1_form), "rel_err_scaled": rel(scaled_form),
            "matches_l1": rel(l1_form) <= rel_tol,
            "matches_scaled": rel(scaled_form) <= rel_tol,
        })
    return rows


def theorem2_assumption_check(A1, b1, x, eps):
    """Column-wise test of the tightness hypothesis.

    Column ``j`` passes when
    ``x_j sum_i A1[i, j] / sqrt(2 pi) + sum(b1) / (2 n)
    >= eps (||A1[:, j]||_2 - ||A1[:, j]||_1 / sqrt(2 pi))``.
    Returns ``(satisfied, lhs, rhs)`` arrays of length ``n``.
    """
    A1 = as_matrix(A1, "A1")
    b1 = as_vector(b1, "b1")
    x = as_vector(x, "x")
    k, n = A1.shape
    if b1.size != k or x.size != n:
        raise DimensionError("A1, b1 and x do not conform")
    lhs = INV_SQRT_2PI * x * A1.sum(axis=0) + b1.sum() / (2.0 * n)
    rhs = eps * (np.sqrt((A1 ** 2).sum(axis=0)) - INV_SQRT_2PI * np.abs(A1).sum(axis=0))
    return lhs >= rhs, lhs, rhs
