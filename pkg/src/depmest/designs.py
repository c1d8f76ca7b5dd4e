"""Design matrices and their scale-free summaries.

The rescaled rows ``z_i = Sigma^(-1/2) x_i`` (with ``Sigma = X'X``) satisfy
``sum_i z_i z_i' = Id`` exactly, so their norms are hat-matrix leverages and
the moment sums ``sum_i |z_i|^q`` summarize how balanced the design is. Those
quantities drive every rate and diagnostic in the rest of the package.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericError, UsageError

__all__ = [
    "Design",
    "RescaledDesign",
    "DesignSummary",
    "build_polynomial_design",
    "build_random_design",
    "design_from_csv",
    "rescale",
    "lag_cross_sum",
    "summarize",
]

# Condition numbers beyond this are treated as numerically singular.
CONDITION_LIMIT = 1e12


class Design:
    """An n-by-p design matrix with n >= p >= 1 and finite entries."""

    def __init__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise UsageError(f"design must be a 2-D array, got shape {x.shape}")
        n, p = x.shape
        if p < 1 or n < p:
            raise UsageError(f"design needs n >= p >= 1, got n={n}, p={p}")
        if not np.all(np.isfinite(x)):
            raise UsageError("design contains non-finite entries")
        self.x = x
        self.n = n
        self.p = p

    def gram(self):
        return self.x.T @ self.x

    def __repr__(self):
        return f"Design(n={self.n}, p={self.p})"


@dataclass
class DesignSummary:
    """Scalar summaries of a design.

    max_leverage is the largest rescaled-row norm (a number in (0, 1]);
    max_row_norm the largest raw-row norm; z_moments[q] and x_moments[q] are
    the norm-power sums of the rescaled and raw rows; min_eigenvalue is the
    smallest eigenvalue of X'X.
    """

    max_leverage: float
    max_row_norm: float
    z_moments: dict = field(default_factory=dict)
    x_moments: dict = field(default_factory=dict)
    min_eigenvalue: float = 0.0


@dataclass
class RescaledDesign:
    """Rescaled rows plus the symmetric square-root factors of X'X."""

    z: np.ndarray
    sigma_root: np.ndarray
    sigma_root_inv: np.ndarray
    summary: DesignSummary

    @property
    def n(self):
        return self.z.shape[0]

    @property
    def p(self):
        return self.z.shape[1]


def build_polynomial_design(n, p):
    """Rows ``(1, i, i^2, ..., i^(p-1))`` for i = 1..n."""
    n, p = int(n), int(p)
    if p < 1 or n < p:
        raise UsageError(f"polynomial design needs n >= p >= 1, got n={n}, p={p}")
    i = np.arange(1, n + 1, dtype=float)
    x = i[:, None] ** np.arange(p)[None, :]
    return Design(x)


def _parse_dist(dist):
    if isinstance(dist, str):
        parts = dist.strip().lower().split(":")
        kind = parts[0]
        args = [float(a) for a in parts[1].split(",")] if len(parts) > 1 and parts[1] else []
    else:
        kind, *args = dist
        kind = str(kind).lower()
    if kind == "uniform":
        if not args:
            args = [-1.0, 1.0]
        if len(args) != 2 or not args[0] < args[1]:
            raise UsageError(f"uniform design entries need bounds a < b, got {args}")
        a, b = args
        return lambda rng, size: rng.uniform(a, b, size=size)
    if kind == "rademacher":
        if args:
            raise UsageError("rademacher design entries take no parameters")
        return lambda rng, size: rng.integers(0, 2, size=size) * 2.0 - 1.0
    raise UsageError(f"unsupported design entry distribution {dist!r}")


def build_random_design(n, p, dist="uniform:-1,1", seed=0):
    """Intercept column plus i.i.d. bounded entries; deterministic given seed."""
    n, p = int(n), int(p)
    if p < 1 or n < p:
        raise UsageError(f"random design needs n >= p >= 1, got n={n}, p={p}")
    sampler = _parse_dist(dist)
    rng = np.random.default_rng(seed)
    x = np.ones((n, p))
    if p > 1:
        x[:, 1:] = sampler(rng, (n, p - 1))
    return Design(x)


def design_from_csv(path, header=False):
    """Load a design from CSV: one row per observation, comma separated."""
    try:
        x = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read design CSV {path!r}: {exc}") from exc
    return Design(x)


def _gram_eig(design):
    sigma = design.gram()
    w, v = np.linalg.eigh(sigma)
    if w[0] <= 0 or w[-1] / w[0] > CONDITION_LIMIT:
        raise NumericError(
            f"X'X is singular or near-singular (eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}])"
        )
    return w, v


def rescale(design):
    """Compute ``z_i = Sigma^(-1/2) x_i`` using the symmetric inverse root."""
    w, v = _gram_eig(design)
    root = (v * np.sqrt(w)) @ v.T
    root_inv = (v / np.sqrt(w)) @ v.T
    z = design.x @ root_inv
    summary = _summarize_arrays(design.x, z, w[0], ())
    return RescaledDesign(z=z, sigma_root=root, sigma_root_inv=root_inv, summary=summary)


def lag_cross_sum(rescaled, k):
    """The partial sum ``sum_{i=1}^{n-|k|} z_i z_{i+k}'`` (identity at k = 0)."""
    z = rescaled.z
    n, p = z.shape
    k = int(k)
    if abs(k) >= n:
        raise UsageError(f"lag |k| must be below n={n}, got k={k}")
    if k < 0:
        return lag_cross_sum(rescaled, -k).T
    return z[: n - k].T @ z[k:]


def _summarize_arrays(x, z, min_eig, extra_q):
    z_norms = np.linalg.norm(z, axis=1)
    x_norms = np.linalg.norm(x, axis=1)
    qs = sorted(set([2.0, 3.0, 4.0] + [float(q) for q in extra_q]))
    return DesignSummary(
        max_leverage=float(z_norms.max()),
        max_row_norm=float(x_norms.max()),
        z_moments={q: float(np.sum(z_norms**q)) for q in qs},
        x_moments={q: float(np.sum(x_norms**q)) for q in qs},
        min_eigenvalue=float(min_eig),
    )


def summarize(design, q_list=()):
    """Summary of a design; always includes moment orders q = 2, 3, 4."""
    w, v = _gram_eig(design)
    z = design.x @ ((v / np.sqrt(w)) @ v.T)
    return _summarize_arrays(design.x, z, w[0], q_list)
