"""Privacy budgets, Gaussian-noise calibration and sensitivity bounds."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

ROUTES = ("exact", "simplified")


class PrivacyWarning(UserWarning):
    """A computation is outside the regime its privacy guarantee was stated for,
    or reads data in a way that is not differentially private."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def log_inv_delta(self) -> float:
        return -math.log(self.delta)

    @property
    def rho(self) -> float:
        return zcdp_rho(self)


@dataclass(frozen=True)
class BoundSet:
    """Public bounds on the data.

    ``c_x`` bounds the row norms of X, ``M`` the entrywise 1-norm change of Q
    between neighbouring datasets, ``c0`` the coefficient norm and ``L`` the
    scaled eigenvalues of ``W'W/n``. ``R`` truncates the response and ``C`` is
    the projection radius of the iterates (defaults to ``c0``).
    """

    c_x: float
    M: float
    c0: float
    L: float
    R: float
    C: float | None = None

    def __post_init__(self):
        if self.C is None:
            object.__setattr__(self, "C", self.c0)
        for name in ("c_x", "c0", "R", "C"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not self.M >= 0:
            raise ValueError(f"M must be non-negative, got {self.M}")
        if not self.L > 1:
            raise ValueError(f"L must exceed 1, got {self.L}")

    def replace(self, **changes) -> "BoundSet":
        return replace(self, **changes)


def zcdp_rho(budget: PrivacyBudget) -> float:
    """zCDP parameter that implies ``(epsilon, delta)``-DP.

    ``eps + 2 log(1/delta) - 2 sqrt((eps + log(1/delta)) log(1/delta))``,
    evaluated as ``(sqrt(eps + l) - sqrt(l))^2`` to avoid cancellation.
    """
    lg = budget.log_inv_delta
    return budget.epsilon**2 / (math.sqrt(budget.epsilon + lg) + math.sqrt(lg)) ** 2


def simplified_regime(budget: PrivacyBudget) -> bool:
    return budget.epsilon <= 8 * budget.log_inv_delta / (2 + math.sqrt(2))


def composition_noise_scale(sensitivity: float, T: int, budget: PrivacyBudget, route: str = "exact") -> float:
    """Per-release Gaussian standard deviation for ``T`` composed releases.

    ``exact`` uses ``sqrt(T / (2 rho))`` and holds for every budget;
    ``simplified`` uses ``2 sqrt(T log(1/delta)) / eps`` and is only valid in
    :func:`simplified_regime` (falls back to ``exact`` with a warning otherwise).
    """
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    if route not in ROUTES:
        raise ValueError(f"unknown route {route!r}")
    if route == "simplified":
        if simplified_regime(budget):
            return 2.0 * sensitivity * math.sqrt(T * budget.log_inv_delta) / budget.epsilon
        warnings.warn(
            "epsilon exceeds 8 log(1/delta)/(2 + sqrt 2); using the exact zCDP calibration",
            PrivacyWarning,
            stacklevel=2,
        )
    return sensitivity * math.sqrt(T / (2.0 * zcdp_rho(budget)))


def ngd_sensitivity_factor(bounds: BoundSet) -> float:
    """``R c_x (M + 4) + 2 C c_x^2 (M + 2)``."""
    b = bounds
    return b.R * b.c_x * (b.M + 4) + 2 * b.C * b.c_x**2 * (b.M + 2)


def ssp_sensitivity_factor(bounds: BoundSet) -> float:
    """``R c_x (M + 4) + max(2 c_x^2 (M + 2), 2 R^2)``."""
    b = bounds
    return b.R * b.c_x * (b.M + 4) + max(2 * b.c_x**2 * (b.M + 2), 2 * b.R**2)


def ngd_noise_scale(eta: float, B: float, T: int, n: int, budget: PrivacyBudget, route: str = "simplified") -> float:
    """Per-iteration noise standard deviation of noisy gradient descent.

    The update moves by ``eta/n`` times a gradient sum whose sensitivity is
    ``B``; the default route gives ``2 eta B sqrt(T log(1/delta)) / (n eps)``.
    """
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    return composition_noise_scale(eta * B / n, T, budget, route)


def ssp_noise_scale(B: float, budget: PrivacyBudget) -> float:
    """Gaussian-mechanism scale ``B sqrt(2 log(1.25/delta)) / eps``."""
    if not B > 0:
        raise ValueError(f"B must be positive, got {B}")
    if budget.epsilon >= 1:
        warnings.warn(
            f"the Gaussian mechanism calibration is stated for epsilon < 1 (got {budget.epsilon})",
            PrivacyWarning,
            stacklevel=2,
        )
    return B * math.sqrt(2 * math.log(1.25 / budget.delta)) / budget.epsilon


def project_l2(v, radius: float):
    """Euclidean projection onto the ball of the given radius (clamp for scalars)."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if np.ndim(v) == 0:
        return float(min(max(float(v), -radius), radius))
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm <= radius:
        return v.copy()
    return v * (radius / norm)


def truncate(z: np.ndarray, R: float) -> np.ndarray:
    """Clamp every response to ``[-R, R]``."""
    return np.clip(np.asarray(z, dtype=float), -R, R)


def default_truncation(sigma: float, n: int) -> float:
    """``sigma sqrt(2 log n)``."""
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return sigma * math.sqrt(2 * math.log(n))


def data_bounds(X: np.ndarray, W: np.ndarray | None = None, slack: float = 1.01) -> dict[str, float]:
    """Candidate ``c_x`` and ``L`` read off the data.

    Not differentially private: the returned values depend on every record.
    Meant for simulations where bounds would otherwise be known constants.
    """
    warnings.warn("data_bounds reads the raw data; the result is not private", PrivacyWarning, stacklevel=2)
    X = np.asarray(X, dtype=float)
    D = X if W is None else np.asarray(W, dtype=float)
    n, d = D.shape
    eig = np.linalg.eigvalsh(D.T @ D / n)
    lo, hi = d * eig[0], d * eig[-1]
    if lo <= 0:
        raise ValueError("design is rank deficient; no finite L exists")
    L = slack * max(1.0 / lo, hi, 1.0)
    return {"c_x": float(np.linalg.norm(X, axis=1).max()), "L": float(L)}
