"""Dependence-adjusted covariance and confidence regions.

Under short-range dependence the rescaled M-estimate is asymptotically normal
with covariance ``sum_k gamma_psi(k) * D_k``, where ``gamma_psi`` is the
autocovariance of the transformed errors and ``D_k`` the lagged cross-product
matrices of the rescaled design. That population object has no canonical
estimator, so a lag-window recipe is used: sample psi-autocovariances up to a
bandwidth, Bartlett or truncated weights, and the finite-n lag matrices. The
result is symmetrized and eigenvalue-clipped at zero (the matrix-weighted sum
need not be PSD even with Bartlett weights).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .designs import lag_cross_sum
from .exceptions import UsageError
from .losses import estimate_psi_mean_derivative  # noqa: F401  (re-export convenience)

__all__ = [
    "LongRunCovariance",
    "ConfidenceRegion",
    "RemainderReport",
    "linear_term",
    "estimate_long_run_covariance",
    "combine_long_run",
    "confidence_region",
    "linearization_remainder",
]

KERNELS = ("bartlett", "truncated")


@dataclass
class LongRunCovariance:
    matrix: np.ndarray
    gamma: np.ndarray  # psi-autocovariances, lags 0..bandwidth
    lag_sums: list  # lagged cross-product matrices, lags 0..bandwidth
    bandwidth: int
    kernel: str
    clipped_eigenvalues: int


@dataclass
class ConfidenceRegion:
    lower: np.ndarray
    upper: np.ndarray
    halfwidth: np.ndarray
    level: float
    beta_cov: np.ndarray
    theta_cov: np.ndarray
    ellipsoid_radius: float
    degenerate: bool


@dataclass
class RemainderReport:
    remainder: np.ndarray
    norm: float
    linear_term: np.ndarray
    slope0: float


def linear_term(rescaled, psi_values):
    """The linear statistic ``sum_i psi(e_i) z_i``."""
    psi_values = np.asarray(psi_values, dtype=float).ravel()
    if psi_values.size != rescaled.n:
        raise UsageError(
            f"psi values length {psi_values.size} does not match design n={rescaled.n}"
        )
    return rescaled.z.T @ psi_values


def _kernel_weight(kernel, k, bandwidth):
    if k == 0:
        return 1.0
    u = k / bandwidth
    if kernel == "bartlett":
        return max(0.0, 1.0 - u)
    return 1.0  # truncated


def combine_long_run(rescaled, gamma, kernel="bartlett"):
    """Assemble the covariance from given psi-autocovariances (lags 0..B)."""
    kernel = str(kernel).lower()
    if kernel not in KERNELS:
        raise UsageError(f"kernel must be one of {KERNELS}, got {kernel!r}")
    gamma = np.asarray(gamma, dtype=float).ravel()
    bandwidth = len(gamma) - 1
    if bandwidth < 0 or bandwidth >= rescaled.n:
        raise UsageError(f"bandwidth must lie in [0, n), got {bandwidth} with n={rescaled.n}")
    p = rescaled.p
    lag_sums = [lag_cross_sum(rescaled, k) for k in range(bandwidth + 1)]
    total = np.zeros((p, p))
    for k in range(bandwidth + 1):
        w = _kernel_weight(kernel, k, max(bandwidth, 1))
        if w == 0.0:
            continue
        if k == 0:
            total += w * gamma[0] * lag_sums[0]
        else:
            total += w * gamma[k] * (lag_sums[k] + lag_sums[k].T)
    total = 0.5 * (total + total.T)
    vals, vecs = np.linalg.eigh(total)
    clipped = int(np.sum(vals < 0.0))
    vals = np.maximum(vals, 0.0)
    matrix = (vecs * vals) @ vecs.T
    return LongRunCovariance(
        matrix=matrix,
        gamma=gamma,
        lag_sums=lag_sums,
        bandwidth=bandwidth,
        kernel=kernel,
        clipped_eigenvalues=clipped,
    )


def estimate_long_run_covariance(rescaled, psi_values, bandwidth=None, kernel="bartlett"):
    """Lag-window covariance estimate from one realized psi sequence.

    psi values are centered at their sample mean before the autocovariances
    are formed (the population mean is zero, but finite-sample centering
    reduces bias). Default bandwidth is ``ceil(n ** (1/3))``.
    """
    psi_values = np.asarray(psi_values, dtype=float).ravel()
    n = rescaled.n
    if psi_values.size != n:
        raise UsageError(f"psi values length {psi_values.size} does not match design n={n}")
    if bandwidth is None:
        bandwidth = int(math.ceil(n ** (1.0 / 3.0)))
    bandwidth = int(bandwidth)
    if bandwidth < 0 or bandwidth >= n:
        raise UsageError(f"bandwidth must lie in [0, n), got {bandwidth}")
    centered = psi_values - psi_values.mean()
    gamma = np.empty(bandwidth + 1)
    for k in range(bandwidth + 1):
        gamma[k] = float(centered[: n - k] @ centered[k:]) / n
    return combine_long_run(rescaled, gamma, kernel=kernel)


def confidence_region(fit, rescaled, lrv, slope0, level):
    """Normal-theory marginal intervals and ellipsoid radius for the coefficients.

    ``cov(theta) = LRV / slope0^2`` and ``cov(beta)`` transports it back
    through the inverse design root. A zero eigenvalue surviving the clip
    marks a degenerate direction; the region is then honest only on the
    complement, and the flag says so.
    """
    slope0 = float(slope0)
    if not np.isfinite(slope0) or slope0 <= 0:
        raise UsageError(f"slope at zero must be positive, got {slope0}")
    level = float(level)
    if not 0.0 < level < 1.0:
        raise UsageError(f"confidence level must lie in (0, 1), got {level}")
    theta_cov = lrv.matrix / slope0**2
    root_inv = rescaled.sigma_root_inv
    beta_cov = root_inv @ theta_cov @ root_inv
    z = stats.norm.ppf(0.5 * (1.0 + level))
    halfwidth = z * np.sqrt(np.maximum(np.diag(beta_cov), 0.0))
    p = rescaled.p
    radius = float(np.sqrt(stats.chi2.ppf(level, df=p)))
    degenerate = bool(np.any(np.linalg.eigvalsh(theta_cov) <= 0.0))
    return ConfidenceRegion(
        lower=fit.beta - halfwidth,
        upper=fit.beta + halfwidth,
        halfwidth=halfwidth,
        level=level,
        beta_cov=beta_cov,
        theta_cov=theta_cov,
        ellipsoid_radius=radius,
        degenerate=degenerate,
    )


def linearization_remainder(fit, rescaled, true_errors, loss, slope0):
    """Gap between the scaled estimate and its linear approximation.

    Only meaningful inside simulation studies where the true errors (and the
    zero true coefficient) are known: the remainder is
    ``slope0 * theta_hat - sum_i psi(e_i) z_i``, the quantity whose decay in n
    the rate experiments track.
    """
    true_errors = np.asarray(true_errors, dtype=float).ravel()
    t_lin = linear_term(rescaled, loss.psi(true_errors))
    remainder = float(slope0) * fit.theta - t_lin
    return RemainderReport(
        remainder=remainder,
        norm=float(np.linalg.norm(remainder)),
        linear_term=t_lin,
        slope0=float(slope0),
    )
