"""Stationary causal error processes and their innovation-coupled versions.

Every model here is driven by an i.i.d. innovation stream and a fixed causal
rule, so a path is a deterministic function of (model, seed). The coupled
simulator rebuilds the same path with the time-0 innovation swapped for an
independent copy; the gap between the two paths is the raw material for the
dependence diagnostics.

Infinite moving averages are realized by truncating the coefficient sequence
(tolerances chosen so truncation sits below test thresholds); recursive models
(ARCH, threshold AR, generic one-step recursions) are iterated from state 0
through a burn-in whose initialization bias decays geometrically.
"""

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.signal import lfilter

from .exceptions import NumericError, UsageError
from .rng import as_generator

__all__ = [
    "Gaussian",
    "StudentT",
    "StableSAS",
    "UniformInnovations",
    "GeometricCoeffs",
    "PolynomialCoeffs",
    "ExplicitCoeffs",
    "LinearProcess",
    "ArchProcess",
    "ThresholdAR",
    "MarkovRecursion",
    "CoupledPaths",
    "StabilityMargin",
    "parse_innovation",
    "parse_model",
    "sample_innovations",
    "simulate_path",
    "simulate_coupled",
    "simulate_coupled_batch",
    "arch_stability_margin",
]

# Truncation tolerance for geometric coefficient tails.
GEOMETRIC_TAIL_TOL = 1e-12
# A recursion whose state exceeds this is declared non-contracting.
OVERFLOW_GUARD = 1e150
DEFAULT_BURN_IN = 1000


_as_rng = as_generator


# ---------------------------------------------------------------------------
# Innovation distributions
# ---------------------------------------------------------------------------


class Gaussian:
    def __init__(self, mean=0.0, sd=1.0):
        if not (np.isfinite(mean) and np.isfinite(sd)) or sd <= 0:
            raise UsageError(f"Gaussian requires finite mean and sd > 0, got ({mean}, {sd})")
        self.mean = float(mean)
        self.sd = float(sd)

    def sample(self, rng, size):
        return rng.normal(self.mean, self.sd, size=size)

    heavy_tail_index = None

    @property
    def name(self):
        return f"gaussian:{self.mean:g},{self.sd:g}"


class StudentT:
    def __init__(self, dof):
        if not np.isfinite(dof) or dof <= 0:
            raise UsageError(f"Student-t degrees of freedom must be positive, got {dof}")
        self.dof = float(dof)

    def sample(self, rng, size):
        return rng.standard_t(self.dof, size=size)

    @property
    def heavy_tail_index(self):
        return self.dof if self.dof < 2 else None

    @property
    def name(self):
        return f"studentt:{self.dof:g}"


class StableSAS:
    """Standard symmetric alpha-stable innovations, index in (0, 2].

    Sampled by the exact trigonometric transform of a uniform angle and an
    exponential variate (rejection-free, exact in law). Index 2 is N(0, 2).
    """

    def __init__(self, index):
        if not np.isfinite(index) or not (0.0 < index <= 2.0):
            raise UsageError(f"stable index must lie in (0, 2], got {index}")
        self.index = float(index)

    def sample(self, rng, size):
        iota = self.index
        phi = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=size)
        w = rng.exponential(1.0, size=size)
        if iota == 1.0:
            return np.tan(phi)
        factor = np.sin(iota * phi) / np.cos(phi) ** (1.0 / iota)
        return factor * (np.cos((1.0 - iota) * phi) / w) ** ((1.0 - iota) / iota)

    @property
    def heavy_tail_index(self):
        return self.index if self.index < 2 else None

    @property
    def name(self):
        return f"stable:{self.index:g}"


class UniformInnovations:
    def __init__(self, low=-1.0, high=1.0):
        if not (np.isfinite(low) and np.isfinite(high)) or not low < high:
            raise UsageError(f"uniform innovations need bounds low < high, got ({low}, {high})")
        self.low = float(low)
        self.high = float(high)

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size=size)

    heavy_tail_index = None

    @property
    def name(self):
        return f"uniform:{self.low:g},{self.high:g}"


def parse_innovation(text):
    """Build an innovation distribution from e.g. ``gaussian:0,1`` or ``stable:1.5``."""
    parts = str(text).strip().lower().split(":")
    kind = parts[0]
    args = [float(a) for a in parts[1].split(",")] if len(parts) > 1 and parts[1] else []
    if kind == "gaussian":
        return Gaussian(*args) if args else Gaussian()
    if kind == "studentt":
        if not args:
            raise UsageError("studentt requires degrees of freedom, e.g. studentt:5")
        return StudentT(args[0])
    if kind == "stable":
        if not args:
            raise UsageError("stable requires an index, e.g. stable:1.5")
        return StableSAS(args[0])
    if kind == "uniform":
        return UniformInnovations(*args) if args else UniformInnovations()
    raise UsageError(f"unknown innovation distribution {text!r}")


# ---------------------------------------------------------------------------
# Moving-average coefficient sequences (a_0 = 1 normalization)
# ---------------------------------------------------------------------------


class GeometricCoeffs:
    """``a_j = rho^j`` with |rho| < 1, truncated where the tail drops below 1e-12."""

    def __init__(self, rho):
        if not np.isfinite(rho) or not abs(rho) < 1:
            raise UsageError(f"geometric ratio must satisfy |rho| < 1, got {rho}")
        self.rho = float(rho)

    def values(self):
        if self.rho == 0.0:
            return np.array([1.0])
        j_max = int(math.ceil(math.log(GEOMETRIC_TAIL_TOL) / math.log(abs(self.rho))))
        return self.rho ** np.arange(j_max + 1, dtype=float)

    @property
    def tail_mass(self):
        a = abs(self.rho)
        if a == 0.0:
            return 0.0
        j_max = len(self.values()) - 1
        return a ** (j_max + 1) / (1.0 - a)

    @property
    def name(self):
        return f"geometric:{self.rho:g}"


class PolynomialCoeffs:
    """``a_0 = 1`` and ``a_j = (1 + j)^(-mu)`` for j >= 1, truncated at max_lag."""

    def __init__(self, mu, max_lag=10_000):
        if not np.isfinite(mu) or mu <= 0.5:
            raise UsageError(f"polynomial decay exponent must exceed 1/2, got {mu}")
        if max_lag < 1:
            raise UsageError(f"max_lag must be at least 1, got {max_lag}")
        self.mu = float(mu)
        self.max_lag = int(max_lag)

    def values(self):
        j = np.arange(self.max_lag + 1, dtype=float)
        out = (1.0 + j) ** (-self.mu)
        out[0] = 1.0
        return out

    @property
    def tail_mass(self):
        # integral bound on sum_{j > max_lag} (1 + j)^(-mu)
        if self.mu <= 1.0:
            return math.inf
        return (1.0 + self.max_lag) ** (1.0 - self.mu) / (self.mu - 1.0)

    @property
    def name(self):
        return f"polynomial:{self.mu:g},{self.max_lag}"


class ExplicitCoeffs:
    def __init__(self, values):
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0 or not np.all(np.isfinite(values)):
            raise UsageError("explicit coefficients must be a nonempty finite list")
        if values[0] != 1.0:
            raise UsageError(f"leading coefficient must equal 1, got {values[0]}")
        self._values = values

    def values(self):
        return self._values.copy()

    tail_mass = 0.0

    @property
    def name(self):
        return "explicit:" + ",".join(f"{v:g}" for v in self._values)


# ---------------------------------------------------------------------------
# Error models
# ---------------------------------------------------------------------------


class LinearProcess:
    """Causal moving average ``e_i = sum_j a_j eps_(i-j)``."""

    recursive = False

    def __init__(self, coeffs, innov):
        self.coeffs = coeffs
        self.innov = innov
        tail = getattr(innov, "heavy_tail_index", None)
        if tail is not None and isinstance(coeffs, PolynomialCoeffs):
            # existence of the MA sum with stable-like tails of index iota
            # requires summability of |a_j|^iota, i.e. iota * mu > 1
            if tail * coeffs.mu <= 1.0:
                raise UsageError(
                    f"moving average does not exist: tail index {tail:g} times decay "
                    f"exponent {coeffs.mu:g} must exceed 1"
                )

    @property
    def name(self):
        return f"linear({self.coeffs.name})+{self.innov.name}"


class _RecursiveModel:
    recursive = True
    # when True the update at time t consumes the innovation of time t-1
    lagged_innovation = False

    def step(self, state, eps):
        raise NotImplementedError


class ArchProcess(_RecursiveModel):
    """``e_i = eps_(i-1) * sqrt(a^2 + b^2 e_(i-1)^2)``.

    Requires the Monte-Carlo estimate of ``E log|b eps|`` to be negative,
    which is the stationarity condition; construction fails otherwise.
    """

    lagged_innovation = True

    def __init__(self, a, b, innov, stability_nrep=10_000):
        if not (np.isfinite(a) and np.isfinite(b)):
            raise UsageError("ARCH parameters must be finite")
        self.a = float(a)
        self.b = float(b)
        self.innov = innov
        margin = arch_stability_margin(a, b, innov, nrep=stability_nrep, seed=0)
        if not margin.value < 0:
            raise UsageError(
                f"ARCH is not stationary: estimated E log|b*eps| = {margin.value:.4f} "
                f"(stderr {margin.stderr:.4f}) is not negative"
            )
        self.stability_margin = margin

    def step(self, state, eps):
        return eps * np.sqrt(self.a**2 + self.b**2 * state**2)

    @property
    def name(self):
        return f"arch:{self.a:g},{self.b:g}+{self.innov.name}"


class ThresholdAR(_RecursiveModel):
    """``e_(i+1) = a_pos e_i^+ + a_neg (-e_i)^+ + eps_(i+1)`` with contraction."""

    def __init__(self, a_pos, a_neg, innov):
        if max(abs(a_pos), abs(a_neg)) >= 1:
            raise UsageError(
                f"threshold AR needs max(|a_pos|, |a_neg|) < 1, got ({a_pos}, {a_neg})"
            )
        self.a_pos = float(a_pos)
        self.a_neg = float(a_neg)
        self.innov = innov

    def step(self, state, eps):
        return self.a_pos * np.maximum(state, 0.0) + self.a_neg * np.maximum(-state, 0.0) + eps

    @property
    def name(self):
        return f"tar:{self.a_pos:g},{self.a_neg:g}+{self.innov.name}"


class MarkovRecursion(_RecursiveModel):
    """Generic one-step recursion ``e_i = R(e_(i-1), eps_i)``.

    ``step_fn`` must accept numpy arrays and broadcast. Divergence is caught
    by an overflow guard rather than assumed away.
    """

    def __init__(self, step_fn: Callable, innov, label="recursion"):
        if not callable(step_fn):
            raise UsageError("recursion step must be callable")
        self.step_fn = step_fn
        self.innov = innov
        self.label = label

    def step(self, state, eps):
        return self.step_fn(state, eps)

    @property
    def name(self):
        return f"{self.label}+{self.innov.name}"


def parse_model(text, innov):
    """Build an error model from e.g. ``geometric:0.5`` / ``arch:1,0.5`` / ``tar:0.5,-0.3``."""
    parts = str(text).strip().lower().split(":")
    kind = parts[0]
    args = parts[1].split(",") if len(parts) > 1 and parts[1] else []
    try:
        if kind == "iid":
            return LinearProcess(ExplicitCoeffs([1.0]), innov)
        if kind == "geometric":
            return LinearProcess(GeometricCoeffs(float(args[0])), innov)
        if kind == "polynomial":
            mu = float(args[0])
            max_lag = int(args[1]) if len(args) > 1 else 10_000
            return LinearProcess(PolynomialCoeffs(mu, max_lag), innov)
        if kind == "explicit":
            return LinearProcess(ExplicitCoeffs([float(a) for a in args]), innov)
        if kind == "arch":
            return ArchProcess(float(args[0]), float(args[1]), innov)
        if kind == "tar":
            return ThresholdAR(float(args[0]), float(args[1]), innov)
    except (ValueError, IndexError) as exc:
        raise UsageError(f"cannot parse model spec {text!r}: {exc}") from exc
    raise UsageError(f"unknown error model {text!r}")


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


class StabilityMargin(NamedTuple):
    value: float
    stderr: float


def arch_stability_margin(a, b, innov, nrep=10_000, seed=0):
    """Monte-Carlo estimate of ``E log|b eps|`` with its standard error.

    ``b = 0`` short-circuits to -inf (the recursion forgets its state in one
    step, hence certainly stable).
    """
    if b == 0.0:
        return StabilityMargin(-math.inf, 0.0)
    rng = _as_rng(seed)
    draws = innov.sample(rng, int(nrep))
    with np.errstate(divide="ignore"):
        logs = np.log(np.abs(b * draws))
    value = float(logs.mean())
    stderr = float(logs.std(ddof=1) / np.sqrt(len(logs))) if len(logs) > 1 else math.inf
    return StabilityMargin(value, stderr)


def sample_innovations(dist, n, seed):
    """Draw n i.i.d. innovations; deterministic given seed."""
    n = int(n)
    if n < 1:
        raise UsageError(f"sample size must be at least 1, got {n}")
    return dist.sample(_as_rng(seed), n)


def _check_overflow(state):
    if np.any(np.abs(state) > OVERFLOW_GUARD):
        raise NumericError(
            "recursion state exceeded the overflow guard; the map is not contracting"
        )


def _iterate_recursive(model, innovations, n_emit):
    """Run a recursion from state 0 and return the last ``n_emit`` states.

    ``innovations`` may be 1-D (single path) or 2-D (batch, one row per path,
    iterated along the last axis).
    """
    innovations = np.asarray(innovations, dtype=float)
    steps = innovations.shape[-1]
    batch_shape = innovations.shape[:-1]
    state = np.zeros(batch_shape)
    out = np.empty(batch_shape + (n_emit,))
    start = steps - n_emit
    for t in range(steps):
        state = model.step(state, innovations[..., t])
        _check_overflow(state)
        if t >= start:
            out[..., t - start] = state
    return out


def simulate_path(model, n, seed, burn_in=DEFAULT_BURN_IN):
    """Simulate ``e_1 .. e_n`` approximately from the stationary law."""
    n = int(n)
    if n < 1:
        raise UsageError(f"path length must be at least 1, got {n}")
    rng = _as_rng(seed)
    if not model.recursive:
        coeffs = model.coeffs.values()
        lag = len(coeffs) - 1
        eps = model.innov.sample(rng, n + lag)
        return lfilter(coeffs, [1.0], eps)[lag:]
    if burn_in < 0:
        raise UsageError(f"burn-in must be nonnegative, got {burn_in}")
    eps = model.innov.sample(rng, n + int(burn_in))
    return _iterate_recursive(model, eps, n)


@dataclass
class CoupledPaths:
    """A path and its copy rebuilt with the time-0 innovation replaced."""

    path: np.ndarray
    coupled: np.ndarray
    seed: object
    pre_history_length: int


def _coupled_innovations(model, horizon, rng, burn_in):
    """Draw the shared innovation stream and the index of the time-0 slot.

    Returns (eps, replace_index); replace_index is None when the horizon does
    not involve the time-0 innovation (finite moving-average memory).
    """
    if not model.recursive:
        coeffs = model.coeffs.values()
        lag = len(coeffs) - 1
        eps = model.innov.sample(rng, horizon + lag)
        replace = lag - 1 if lag >= 1 else None
        return coeffs, eps, replace
    total = int(burn_in) + horizon
    eps = model.innov.sample(rng, total)
    replace = burn_in - 1 + int(model.lagged_innovation)
    if not 0 <= replace < total:
        raise UsageError("burn-in too short to embed the time-0 innovation")
    return None, eps, replace


def simulate_coupled(model, horizon, seed, burn_in=DEFAULT_BURN_IN):
    """Simulate ``e_1..e_K`` and its coupled version ``e*_1..e*_K``.

    Both paths consume the identical innovation stream; only the time-0
    innovation differs. Regenerating with the same seed reproduces both paths
    exactly.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise UsageError(f"coupling horizon must be at least 1, got {horizon}")
    rng = _as_rng(seed)
    coeffs, eps, replace = _coupled_innovations(model, horizon, rng, burn_in)
    eps_star = eps.copy()
    if replace is not None:
        eps_star[replace] = model.innov.sample(rng, 1)[0]
    if not model.recursive:
        lag = len(coeffs) - 1
        path = lfilter(coeffs, [1.0], eps)[lag:]
        coupled = lfilter(coeffs, [1.0], eps_star)[lag:]
        pre = lag
    else:
        path = _iterate_recursive(model, eps, horizon)
        coupled = _iterate_recursive(model, eps_star, horizon)
        pre = int(burn_in)
    return CoupledPaths(path=path, coupled=coupled, seed=seed, pre_history_length=pre)


def simulate_coupled_batch(model, horizon, seeds, burn_in=DEFAULT_BURN_IN):
    """Vectorized coupled simulation: one row per seed in ``seeds``.

    Row r reproduces ``simulate_coupled(model, horizon, seeds[r])`` exactly;
    the recursion (not the stream draws) is what gets vectorized.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise UsageError(f"coupling horizon must be at least 1, got {horizon}")
    rngs = [_as_rng(s) for s in seeds]
    coeffs = None
    eps_rows = []
    star_rows = []
    for rng in rngs:
        coeffs, eps, replace = _coupled_innovations(model, horizon, rng, burn_in)
        eps_star = eps.copy()
        if replace is not None:
            eps_star[replace] = model.innov.sample(rng, 1)[0]
        eps_rows.append(eps)
        star_rows.append(eps_star)
    eps = np.asarray(eps_rows)
    eps_star = np.asarray(star_rows)
    if not model.recursive:
        lag = len(coeffs) - 1
        path = lfilter(coeffs, [1.0], eps, axis=1)[:, lag:]
        coupled = lfilter(coeffs, [1.0], eps_star, axis=1)[:, lag:]
    else:
        path = _iterate_recursive(model, eps, horizon)
        coupled = _iterate_recursive(model, eps_star, horizon)
    return path, coupled
