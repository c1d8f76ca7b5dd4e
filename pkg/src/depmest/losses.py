"""Convex regression losses and Monte-Carlo estimates of their population functionals.

Each loss pairs the objective integrand ``rho`` with its (sub)derivative
``psi``; ``psi`` is nondecreasing, which is what the fitting and inference
code relies on. Three sample-based functionals of an error distribution are
estimated here:

* ``estimate_psi_mean`` -- the shifted mean curve ``t -> E psi(e + t)``,
* ``estimate_psi_mean_derivative`` -- its slope at 0 (for quantile losses this
  is a kernel-type estimate of the error density at 0),
* ``estimate_psi_modulus`` -- the root-mean-square increment
  ``t -> ||psi(e + t) - psi(e)||_2``.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import UsageError

__all__ = [
    "HuberLoss",
    "PowerLoss",
    "QuantileLoss",
    "SquareLoss",
    "PsiFunctionals",
    "parse_loss",
    "estimate_psi_mean",
    "estimate_psi_mean_derivative",
    "estimate_psi_modulus",
]


def _check_finite(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise UsageError("loss evaluation requires finite arguments")
    return x


class Loss:
    """Base class: a convex integrand with nondecreasing (sub)derivative.

    Subclasses provide ``rho`` (the integrand), ``psi`` (a measurable
    selection of its subgradient) and ``rho_antideriv`` (an antiderivative
    of ``rho`` vanishing at 0, used by the smoothed solver).  ``psi_jump``
    is the largest jump of ``psi`` (0 for continuous psi); it selects the
    convergence certificate used when fitting.
    """

    psi_jump = 0.0

    def rho(self, x):
        raise NotImplementedError

    def psi(self, x):
        raise NotImplementedError

    def rho_antideriv(self, x):
        raise NotImplementedError

    @property
    def name(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"

    def __eq__(self, other):
        return type(self) is type(other) and self.name == other.name

    def __hash__(self):
        return hash(self.name)


class HuberLoss(Loss):
    """Quadratic near 0, linear beyond the threshold ``c > 0``."""

    def __init__(self, c):
        c = float(c)
        if not np.isfinite(c) or c <= 0:
            raise UsageError(f"Huber threshold must be positive, got {c}")
        self.c = c

    def rho(self, x):
        x = _check_finite(x)
        c = self.c
        ax = np.abs(x)
        return np.where(ax <= c, 0.5 * x * x, c * ax - 0.5 * c * c)

    def psi(self, x):
        x = _check_finite(x)
        return np.clip(x, -self.c, self.c)

    def rho_antideriv(self, x):
        x = _check_finite(x)
        c = self.c
        ax = np.abs(x)
        inner = x**3 / 6.0
        outer = np.sign(x) * (0.5 * c * x * x - 0.5 * c * c * ax + c**3 / 6.0)
        return np.where(ax <= c, inner, outer)

    @property
    def name(self):
        return f"huber:{self.c:g}"


class PowerLoss(Loss):
    """``rho(x) = |x|^q`` with ``1 <= q <= 2``; ``psi`` carries the factor q.

    At q = 1 (least absolute deviations) the subgradient selection at 0 is
    the symmetric one, ``psi(0) = 0``.
    """

    def __init__(self, q):
        q = float(q)
        if not (1.0 <= q <= 2.0):
            raise UsageError(f"power exponent must lie in [1, 2], got {q}")
        self.q = q

    def rho(self, x):
        x = _check_finite(x)
        return np.abs(x) ** self.q

    def psi(self, x):
        x = _check_finite(x)
        q = self.q
        if q == 1.0:
            return np.sign(x)
        return q * np.abs(x) ** (q - 1.0) * np.sign(x)

    def rho_antideriv(self, x):
        x = _check_finite(x)
        q = self.q
        return np.sign(x) * np.abs(x) ** (q + 1.0) / (q + 1.0)

    @property
    def psi_jump(self):
        return 2.0 if self.q == 1.0 else 0.0

    @property
    def name(self):
        return f"power:{self.q:g}"


class QuantileLoss(Loss):
    """Check loss ``alpha x+ + (1 - alpha)(-x)+``; ``psi(x) = alpha - 1{x <= 0}``."""

    psi_jump = 1.0

    def __init__(self, alpha):
        alpha = float(alpha)
        if not (0.0 < alpha < 1.0):
            raise UsageError(f"quantile level must lie in (0, 1), got {alpha}")
        self.alpha = alpha

    def rho(self, x):
        x = _check_finite(x)
        return x * (self.alpha - (x < 0))

    def psi(self, x):
        x = _check_finite(x)
        return self.alpha - (x <= 0)

    def rho_antideriv(self, x):
        x = _check_finite(x)
        return 0.5 * x * x * (self.alpha - (x < 0))

    @property
    def name(self):
        return f"quantile:{self.alpha:g}"


class SquareLoss(Loss):
    """``rho(x) = x^2 / 2`` so that ``psi(x) = x`` and the fit is least squares."""

    def rho(self, x):
        x = _check_finite(x)
        return 0.5 * x * x

    def psi(self, x):
        return _check_finite(x)

    def rho_antideriv(self, x):
        x = _check_finite(x)
        return x**3 / 6.0

    @property
    def name(self):
        return "square"


def parse_loss(text):
    """Build a loss from its compact string form, e.g. ``huber:1.345``."""
    parts = str(text).strip().lower().split(":")
    kind = parts[0]
    args = parts[1].split(",") if len(parts) > 1 and parts[1] else []
    try:
        if kind == "square":
            if args:
                raise UsageError("square loss takes no parameter")
            return SquareLoss()
        if kind == "huber":
            return HuberLoss(float(args[0]) if args else 1.345)
        if kind == "power":
            if not args:
                raise UsageError("power loss requires an exponent, e.g. power:1.5")
            return PowerLoss(float(args[0]))
        if kind == "quantile":
            if not args:
                raise UsageError("quantile loss requires a level, e.g. quantile:0.5")
            return QuantileLoss(float(args[0]))
    except (ValueError, IndexError) as exc:
        raise UsageError(f"cannot parse loss spec {text!r}: {exc}") from exc
    raise UsageError(f"unknown loss kind {kind!r}")


@dataclass
class PsiFunctionals:
    """Sample estimates of psi-based functionals on a grid of shifts.

    ``mean[i]`` estimates ``E psi(e + t_grid[i])`` and ``modulus[i]`` the RMS
    increment at the same shift; either may be absent depending on which
    estimator produced the object. Values between grid points interpolate
    linearly.
    """

    t_grid: np.ndarray
    mean: np.ndarray | None = None
    mean_se: np.ndarray | None = None
    modulus: np.ndarray | None = None
    modulus_se: np.ndarray | None = None
    mean_derivative0: float | None = None
    n_samples: int = 0

    def _interp(self, values, t):
        t = np.asarray(t, dtype=float)
        lo, hi = self.t_grid[0], self.t_grid[-1]
        if np.any(t < lo - 1e-12) or np.any(t > hi + 1e-12):
            raise UsageError(
                f"query shift outside estimated grid [{lo:g}, {hi:g}]"
            )
        return np.interp(t, self.t_grid, values)

    def mean_at(self, t):
        if self.mean is None:
            raise UsageError("no shifted-mean estimate stored")
        return self._interp(self.mean, t)

    def modulus_at(self, t):
        if self.modulus is None:
            raise UsageError("no modulus estimate stored")
        return self._interp(self.modulus, t)

    def merged_with(self, other):
        """Combine mean/modulus estimates computed on the identical grid."""
        if not np.array_equal(self.t_grid, other.t_grid):
            raise UsageError("cannot merge functionals on different grids")
        return PsiFunctionals(
            t_grid=self.t_grid,
            mean=self.mean if self.mean is not None else other.mean,
            mean_se=self.mean_se if self.mean_se is not None else other.mean_se,
            modulus=self.modulus if self.modulus is not None else other.modulus,
            modulus_se=self.modulus_se
            if self.modulus_se is not None
            else other.modulus_se,
            mean_derivative0=self.mean_derivative0
            if self.mean_derivative0 is not None
            else other.mean_derivative0,
            n_samples=max(self.n_samples, other.n_samples),
        )


def _as_sample(samples):
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise UsageError("error sample must be nonempty")
    if not np.all(np.isfinite(samples)):
        raise UsageError("error sample contains non-finite values")
    return samples


def _as_grid(t_grid):
    t = np.asarray(t_grid, dtype=float).ravel()
    if t.size == 0:
        raise UsageError("shift grid must be nonempty")
    if not np.all(np.isfinite(t)):
        raise UsageError("shift grid contains non-finite values")
    order = np.argsort(t)
    return t[order]


def estimate_psi_mean(loss, samples, t_grid):
    """Estimate ``t -> E psi(e + t)`` by sample means over ``samples``."""
    samples = _as_sample(samples)
    t = _as_grid(t_grid)
    n = samples.size
    mean = np.empty_like(t)
    se = np.empty_like(t)
    for i, ti in enumerate(t):
        vals = loss.psi(samples + ti)
        mean[i] = vals.mean()
        se[i] = vals.std(ddof=1) / np.sqrt(n) if n > 1 else np.inf
    return PsiFunctionals(t_grid=t, mean=mean, mean_se=se, n_samples=n)


def estimate_psi_mean_derivative(loss, samples, h=None):
    """Central-difference slope of the shifted mean curve at 0.

    The default step is ``IQR(samples) * n**(-1/5)``, a robust-scale
    bandwidth; for quantile losses the result is a density estimate at 0.
    """
    samples = _as_sample(samples)
    if h is None:
        q75, q25 = np.percentile(samples, [75.0, 25.0])
        spread = q75 - q25
        if spread <= 0:
            spread = max(samples.std(), 1.0)
        h = spread * samples.size ** (-0.2)
    h = float(h)
    if not np.isfinite(h) or h <= 0:
        raise UsageError(f"difference step must be positive, got {h}")
    up = loss.psi(samples + h).mean()
    down = loss.psi(samples - h).mean()
    return (up - down) / (2.0 * h)


def estimate_psi_modulus(loss, samples, t_grid):
    """Estimate the RMS increment ``t -> ||psi(e + t) - psi(e)||_2``.

    Exactly zero at t = 0. Standard errors come from the delta method applied
    to the mean of squared increments.
    """
    samples = _as_sample(samples)
    t = _as_grid(t_grid)
    n = samples.size
    base = loss.psi(samples)
    mod = np.empty_like(t)
    se = np.empty_like(t)
    for i, ti in enumerate(t):
        if ti == 0.0:
            mod[i] = 0.0
            se[i] = 0.0
            continue
        diff2 = (loss.psi(samples + ti) - base) ** 2
        msq = diff2.mean()
        mod[i] = np.sqrt(msq)
        if n > 1 and mod[i] > 0:
            se[i] = diff2.std(ddof=1) / np.sqrt(n) / (2.0 * mod[i])
        else:
            se[i] = 0.0
    return PsiFunctionals(t_grid=t, modulus=mod, modulus_se=se, n_samples=n)
