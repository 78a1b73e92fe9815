"""Differentially private regression on linked data.

Two estimators share the bias-corrected design ``W = QX``:

* noisy projected gradient descent on ``(1/2n)||z - W beta||^2`` with a
  Gaussian perturbation of every step;
* sufficient-statistics perturbation, which perturbs ``W'W`` with a symmetric
  Gaussian matrix and ``W'z`` with a Gaussian vector before solving.

Both truncate the response to ``[-R, R]`` to bound sensitivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .estimators import RCOND_THRESHOLD, Factorization, FitResult, SingularMatrixError, rl_covariance
from .linkage import LinkedDataset, MatchingMatrix, transform_design
from .privacy import (
    BoundSet,
    PrivacyBudget,
    default_truncation,
    ngd_noise_scale,
    ngd_sensitivity_factor,
    ssp_noise_scale,
    ssp_sensitivity_factor,
    truncate,
)

DEFAULT_MAX_RETRIES = 100


class SspRetryError(SingularMatrixError):
    """Every perturbed Gram matrix drawn was computationally singular."""

    def __init__(self, attempts: int, rcond: float):
        ArithmeticError.__init__(
            self,
            f"perturbed W'W + U stayed singular for {attempts} draws "
            f"(reciprocal condition number below {RCOND_THRESHOLD:g}; last {rcond:.3e})",
        )
        self.attempts = attempts
        self.rcond = rcond


def gaussian(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    """The only normal sampler used for privacy noise.

    ``Generator.standard_normal`` (ziggurat) scaled by ``scale``. Keeping a
    single call site pins the stream for a given seed.
    """
    return rng.standard_normal(shape) * scale


@dataclass(frozen=True)
class NgdConfig:
    eta: float
    T: int
    C: float
    R: float
    B: float
    beta0: np.ndarray | None = None
    seed: int = 0
    omega: float | None = None  # overrides the calibrated noise scale
    route: str = "exact"
    project: bool = True  # False keeps C in the noise calibration but skips the projection

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if int(self.T) != self.T or self.T < 1:
            raise ValueError(f"T must be a positive integer, got {self.T}")
        if not (self.C > 0 and self.R > 0):
            raise ValueError(f"C and R must be positive, got C={self.C}, R={self.R}")


@dataclass(frozen=True)
class SspConfig:
    R: float
    B: float
    max_retries: int = DEFAULT_MAX_RETRIES
    seed: int = 0
    omega: float | None = None

    def __post_init__(self):
        if self.max_retries < 1:
            raise ValueError(f"max_retries must be at least 1, got {self.max_retries}")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")


@dataclass
class VarianceReport:
    """Theoretical covariance of a private estimator.

    ``privacy_component`` is the part of ``total`` contributed by the injected
    noise; ``sigma_rl`` is the covariance of the non-private RL estimator.
    """

    sigma_rl: np.ndarray
    total: np.ndarray
    privacy_component: np.ndarray
    omega: float
    extras: dict = field(default_factory=dict)


def iteration_count(L: float, c0: float, n: int, fraction: float = 1.0) -> int:
    """``ceil(fraction * L^2 log(c0^2 n))``, at least 1."""
    return max(1, math.ceil(fraction * L**2 * math.log(c0**2 * n)))


def suggested_ngd_config(
    n: int,
    d: int,
    bounds: BoundSet,
    sigma_estimate: float | None = None,
    t_fraction: float = 1.0,
    seed: int = 0,
    route: str = "exact",
) -> NgdConfig:
    """Hyperparameters that carry the error guarantee for noisy descent.

    ``eta = d/L``, ``T = ceil(L^2 log(c0^2 n))`` (times ``t_fraction``),
    ``C = c0`` and ``R = sigma sqrt(2 log n)``; without ``sigma_estimate`` the
    truncation level comes from ``bounds.R``.
    """
    if not 0 < t_fraction <= 1:
        raise ValueError(f"t_fraction must lie in (0, 1], got {t_fraction}")
    R = default_truncation(sigma_estimate, n) if sigma_estimate is not None else bounds.R
    C = bounds.c0
    B = ngd_sensitivity_factor(bounds.replace(R=R, C=C))
    return NgdConfig(
        eta=d / bounds.L,
        T=iteration_count(bounds.L, bounds.c0, n, t_fraction),
        C=C,
        R=R,
        B=B,
        beta0=np.zeros(d),
        seed=seed,
        route=route,
    )


def suggested_ssp_config(bounds: BoundSet, seed: int = 0) -> SspConfig:
    return SspConfig(R=bounds.R, B=ssp_sensitivity_factor(bounds), seed=seed)


def _design_and_response(data: LinkedDataset, Q: MatchingMatrix, R: float):
    W = transform_design(Q, data.X)
    zt = truncate(data.z, R)
    return W, zt, int(np.count_nonzero(zt != data.z))


def ngd_fit(
    data: LinkedDataset,
    Q: MatchingMatrix,
    budget: PrivacyBudget,
    bounds: BoundSet,
    config: NgdConfig | None = None,
) -> FitResult:
    """Post-linkage noisy gradient descent.

    Runs ``T`` steps of ``beta <- P_C(beta - (eta/n) sum_i (w_i'beta - P_R(z_i)) w_i + u_t)``
    with ``u_t ~ N(0, omega^2 I)`` and returns the last iterate.
    """
    n, d = data.n, data.d
    if config is None:
        config = suggested_ngd_config(n, d, bounds)
    if config.omega is not None:
        omega = float(config.omega)
    else:
        omega = ngd_noise_scale(config.eta, config.B, config.T, n, budget, config.route)
    W, zt, clipped = _design_and_response(data, Q, config.R)
    gram = W.T @ W
    moment = W.T @ zt
    beta0 = np.zeros(d) if config.beta0 is None else np.asarray(config.beta0, dtype=float)
    rng = np.random.default_rng(config.seed)
    noise = gaussian(rng, (config.T, d), omega)
    radius = float(config.C) if config.project else math.inf
    beta = _kernels.ngd_descend(gram, moment, beta0, config.eta / n, radius, noise)
    return FitResult(
        beta,
        "NGD",
        noise_scale=omega,
        iterations=int(config.T),
        seed=config.seed,
        diagnostics={
            "eta": config.eta,
            "B": config.B,
            "C": config.C,
            "R": config.R,
            "route": config.route,
            "projected": config.project,
            "truncated": clipped,
        },
    )


def _symmetric_noise(rng, d, omega):
    U = np.zeros((d, d))
    iu = np.triu_indices(d)
    U[iu] = gaussian(rng, len(iu[0]), omega)
    return U + np.triu(U, 1).T


def ssp_fit(
    data: LinkedDataset,
    Q: MatchingMatrix,
    budget: PrivacyBudget,
    bounds: BoundSet,
    config: SspConfig | None = None,
) -> FitResult:
    """Post-linkage sufficient-statistics perturbation.

    Returns ``(W'W + U)^-1 (W'P_R(z) + u)``; singular draws of ``W'W + U`` are
    redrawn (a check on released values, so it costs no budget) up to
    ``max_retries`` times.
    """
    d = data.d
    if config is None:
        config = suggested_ssp_config(bounds)
    omega = float(config.omega) if config.omega is not None else ssp_noise_scale(config.B, budget)
    W, zt, clipped = _design_and_response(data, Q, config.R)
    gram = W.T @ W
    moment = W.T @ zt
    rng = np.random.default_rng(config.seed)
    last_rcond = 0.0
    for attempt in range(1, config.max_retries + 1):
        U = _symmetric_noise(rng, d, omega)
        u = gaussian(rng, d, omega)
        try:
            fac = Factorization(gram + U, "W'W + U")
        except SingularMatrixError as exc:
            last_rcond = exc.rcond
            continue
        beta = fac.solve(moment + u)
        return FitResult(
            beta,
            "SSP",
            noise_scale=omega,
            seed=config.seed,
            diagnostics={
                "B": config.B,
                "R": config.R,
                "attempts": attempt,
                "rcond": fac.rcond,
                "truncated": clipped,
            },
        )
    raise SspRetryError(config.max_retries, last_rcond)


def ssp_proxy(W: np.ndarray, z: np.ndarray, U: np.ndarray, u: np.ndarray) -> np.ndarray:
    """First-order proxy ``b + G^-1 u - G^-1 U (b + G^-1 u)`` with ``G = W'W``
    and ``b`` the RL estimate."""
    fac = Factorization(W.T @ W, "W'W")
    b = fac.solve(W.T @ np.asarray(z, dtype=float))
    y = b + fac.solve(u)
    return y - fac.solve(U @ y)


def ngd_variance(W: np.ndarray, Sigma_z, eta: float, T: int, omega: float) -> VarianceReport:
    """Covariance of the ``T``-th iterate of the unprojected, untruncated recursion
    ``beta <- beta - (eta/n) W'(W beta - z) + u_t``.

    With ``A = (eta/n) W'W`` and ``S = sum_{t<T} (I - A)^t`` this is
    ``S (eta/n)^2 W' Sigma_z W S + omega^2 sum_{t<T} (I - A)^{2t}``. It bounds the
    projected algorithm's covariance from above in practice.
    """
    W = np.asarray(W, dtype=float)
    n, d = W.shape
    I = np.eye(d)
    A = (eta / n) * (W.T @ W)
    step = I - A
    radius = np.abs(np.linalg.eigvalsh(0.5 * (step + step.T))).max()
    if radius >= 1:
        raise ValueError(f"gradient recursion diverges: spectral radius of I - A is {radius:.6g}")
    if hasattr(Sigma_z, "quadratic"):
        K = Sigma_z.quadratic(W)
    else:
        K = W.T @ np.asarray(Sigma_z, dtype=float) @ W
    K = (eta / n) ** 2 * K
    power = I.copy()
    S = np.zeros((d, d))
    V = np.zeros((d, d))
    for _ in range(int(T)):
        S += power
        V += power @ power
        power = power @ step
    first = S @ K @ S
    privacy = omega**2 * V
    total = first + privacy
    sym = lambda M: 0.5 * (M + M.T)  # noqa: E731
    return VarianceReport(
        sigma_rl=rl_covariance(W, Sigma_z),
        total=sym(total),
        privacy_component=sym(privacy),
        omega=float(omega),
        extras={"linkage_component": sym(first), "spectral_radius": float(radius)},
    )


def _spread(M: np.ndarray) -> np.ndarray:
    """Off-diagonal entries of ``M`` with its trace on every diagonal slot."""
    out = np.array(M, dtype=float, copy=True)
    np.fill_diagonal(out, np.trace(M))
    return out


def ssp_variance(W: np.ndarray, beta: np.ndarray, Sigma_rl: np.ndarray, omega: float) -> VarianceReport:
    """Covariance of the first-order proxy of the SSP estimator.

    ``Sigma_rl + omega^2 G^-1 (I + S0 + S1 + S2) G^-1`` with ``G = W'W``; ``S0``,
    ``S1`` and ``S2`` spread ``beta beta'``, ``Sigma_rl`` and
    ``omega^2 G^-2`` (each off-diagonal kept, each diagonal replaced by the
    trace). The proxy drops higher-order terms in ``U G^-1`` and can
    understate the variance when ``n`` is small or the noise is large.
    """
    W = np.asarray(W, dtype=float)
    d = W.shape[1]
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    Sigma_rl = np.asarray(Sigma_rl, dtype=float)
    fac = Factorization(W.T @ W, "W'W")
    G_inv = fac.solve(np.eye(d))
    G_inv = 0.5 * (G_inv + G_inv.T)
    sigma_prime = omega**2 * (G_inv @ G_inv)
    inner = np.eye(d) + _spread(np.outer(beta, beta)) + _spread(Sigma_rl) + _spread(sigma_prime)
    privacy = omega**2 * G_inv @ inner @ G_inv
    privacy = 0.5 * (privacy + privacy.T)
    return VarianceReport(
        sigma_rl=Sigma_rl,
        total=Sigma_rl + privacy,
        privacy_component=privacy,
        omega=float(omega),
    )
