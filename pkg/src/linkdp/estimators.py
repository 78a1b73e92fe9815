"""Non-private baselines: OLS, the record-linkage (RL) estimator and the
moments of the linked response."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .linkage import MatchingMatrix, transform_design

RCOND_THRESHOLD = 1e-12
DENSE_SIGMA_LIMIT = 5000
COVARIANCE_RULES = ("centered", "independent", "printed")


class SingularMatrixError(ArithmeticError):
    """A Gram matrix is singular to working precision."""

    def __init__(self, message: str, rcond: float):
        super().__init__(f"{message} (reciprocal condition number {rcond:.3e} < {RCOND_THRESHOLD:g})")
        self.rcond = rcond


@dataclass(frozen=True)
class ModelParams:
    beta: np.ndarray
    sigma2: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")


@dataclass
class FitResult:
    beta_hat: np.ndarray
    method: str
    covariance: np.ndarray | None = None
    noise_scale: float | None = None
    iterations: int | None = None
    seed: int | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["beta_hat"] = [float(v) for v in self.beta_hat]
        if self.covariance is not None:
            out["covariance"] = [[float(v) for v in row] for row in self.covariance]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class Factorization:
    """LU factorization with a LAPACK reciprocal-condition estimate."""

    def __init__(self, G: np.ndarray, what: str = "Gram matrix"):
        G = np.asarray(G, dtype=float)
        if not np.all(np.isfinite(G)):
            raise SingularMatrixError(f"{what} has non-finite entries", 0.0)
        anorm = np.abs(G).sum(axis=0).max()
        if anorm == 0.0:
            raise SingularMatrixError(f"{what} is zero", 0.0)
        with warnings.catch_warnings():
            # singularity is reported through the condition estimate below
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            self.lu, self.piv = scipy.linalg.lu_factor(G, check_finite=False)
        rcond, info = lapack.dgecon(self.lu, anorm, norm="1")
        self.rcond = float(rcond)
        if info != 0 or not self.rcond >= RCOND_THRESHOLD:
            raise SingularMatrixError(f"{what} is computationally singular", self.rcond)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve((self.lu, self.piv), b, check_finite=False)


def _least_squares(D: np.ndarray, r: np.ndarray, what: str):
    D = np.asarray(D, dtype=float)
    r = np.asarray(r, dtype=float)
    if D.ndim != 2 or r.shape != (D.shape[0],):
        raise ValueError(f"shape mismatch: design {D.shape}, response {r.shape}")
    gram = D.T @ D
    fac = Factorization(gram, what)
    return fac, fac.solve(D.T @ r)


def _residual_variance(D, r, beta):
    n, d = D.shape
    if n <= d:
        return None
    resid = r - D @ beta
    return float(resid @ resid) / (n - d)


def ols_fit(X: np.ndarray, y: np.ndarray) -> FitResult:
    """Ordinary least squares with covariance ``s^2 (X'X)^-1`` (``s^2`` uses n - d)."""
    X = np.asarray(X, dtype=float)
    fac, beta = _least_squares(X, y, "X'X")
    s2 = _residual_variance(X, np.asarray(y, dtype=float), beta)
    cov = None
    if s2 is not None:
        cov = s2 * fac.solve(np.eye(X.shape[1]))
        cov = 0.5 * (cov + cov.T)
    return FitResult(beta, "OLS", covariance=cov, diagnostics={"rcond": fac.rcond, "sigma2_hat": s2})


def rl_fit(X: np.ndarray, z: np.ndarray, Q: MatchingMatrix) -> FitResult:
    """Bias-corrected estimator ``(W'W)^-1 W'z`` with ``W = QX``."""
    W = transform_design(Q, X)
    fac, beta = _least_squares(W, z, "W'W")
    return FitResult(beta, "RL", diagnostics={"rcond": fac.rcond})


def residual_sigma(X: np.ndarray, z: np.ndarray, Q: MatchingMatrix | None = None) -> float:
    """Square root of the residual MSE of the (RL) fit.

    Not differentially private: it reads the data directly. Use only where the
    analysis accepts that leak, e.g. simulations or the demonstration pipeline.
    """
    D = transform_design(Q, X) if Q is not None else np.asarray(X, dtype=float)
    _, beta = _least_squares(D, z, "W'W")
    s2 = _residual_variance(D, np.asarray(z, dtype=float), beta)
    if s2 is None:
        raise ValueError("need n > d to estimate the residual variance")
    return float(np.sqrt(s2))


# --------------------------------------------------------------------------
# moments of z
# --------------------------------------------------------------------------


class SigmaZ:
    """Covariance of the linked response ``z`` as a linear operator.

    The diagonal is ``sigma^2 + beta' A_i beta``. Off-diagonal entries follow
    one of three rules:

    ``centered``
        ``A_ij = sum_u sum_{v != u} q_iu q_jv (x_u - w_i)(x_v - w_j)'``, the
        centring used by ``A_i``. Zero between different blocks.
    ``independent``
        ``sigma^2 sum_u q_iu q_ju``: exact when every ``z_i`` picks its source
        independently from row ``i`` of ``Q``.
    ``printed``
        ``A_ij = sum_u sum_{v != u} q_iu q_jv (x_i - w_u)(x_j - w_v)'``. Kept
        for comparison: between two different blocks it reduces to a nonzero
        rank-one term although blocks are linked independently.
    """

    def __init__(self, X: np.ndarray, Q: MatchingMatrix, params: ModelParams, rule: str = "centered"):
        if rule not in COVARIANCE_RULES:
            raise ValueError(f"unknown covariance rule {rule!r}; expected one of {COVARIANCE_RULES}")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] != Q.n or X.shape[1] != params.beta.shape[0]:
            raise ValueError(f"dimension mismatch: X {X.shape}, Q {Q.n}, beta {params.beta.shape}")
        self.Q = Q
        self.rule = rule
        self.sigma2 = float(params.sigma2)
        self.n = Q.n
        self.mu = X @ params.beta
        self.omega = Q.apply(self.mu)
        self.variance = self.sigma2 + Q.apply(self.mu**2) - self.omega**2
        self._offdiag_diag = self._full_diagonal()

    # helpers: (Q diag(f) Q') V and its diagonal
    def _qfq(self, f, V):
        return self.Q.apply(f[:, None] * self.Q.apply(V, transpose=True))

    def _qfq_diag(self, f):
        return self.Q.apply_squared(f)

    def _full(self, V):
        """The off-diagonal rule evaluated on every (i, j), times V."""
        one = np.ones(self.n)
        mu, om = self.mu, self.omega
        if self.rule == "independent":
            return self.sigma2 * self._qfq(one, V)
        if self.rule == "centered":
            return -(
                self._qfq(mu**2, V)
                - om[:, None] * self._qfq(mu, V)
                - self._qfq(mu, om[:, None] * V)
                + om[:, None] * self._qfq(one, om[:, None] * V)
            )
        r = mu - self.Q.apply(om)
        return r[:, None] * (r @ V)[None, :] - (
            mu[:, None] * self._qfq(one, mu[:, None] * V)
            - mu[:, None] * self._qfq(om, V)
            - self._qfq(om, mu[:, None] * V)
            + self._qfq(om**2, V)
        )

    def _full_diagonal(self):
        one = np.ones(self.n)
        mu, om = self.mu, self.omega
        if self.rule == "independent":
            return self.sigma2 * self._qfq_diag(one)
        if self.rule == "centered":
            return -(self._qfq_diag(mu**2) - 2 * om * self._qfq_diag(mu) + om**2 * self._qfq_diag(one))
        r = mu - self.Q.apply(om)
        return r**2 - (mu**2 * self._qfq_diag(one) - 2 * mu * self._qfq_diag(om) + self._qfq_diag(om**2))

    def diagonal(self) -> np.ndarray:
        return self.variance.copy()

    def matmat(self, V: np.ndarray) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        vec = V.ndim == 1
        V2 = V[:, None] if vec else V
        out = self._full(V2) + (self.variance - self._offdiag_diag)[:, None] * V2
        return out[:, 0] if vec else out

    def quadratic(self, W: np.ndarray) -> np.ndarray:
        """``W' Sigma_z W``."""
        K = np.asarray(W, dtype=float).T @ self.matmat(W)
        return 0.5 * (K + K.T)

    def dense(self, limit: int = DENSE_SIGMA_LIMIT) -> np.ndarray:
        if self.n > limit:
            raise MemoryError(f"refusing to materialize a {self.n}x{self.n} covariance; use matmat()")
        S = self.matmat(np.eye(self.n))
        return 0.5 * (S + S.T)


@dataclass
class MomentSet:
    mean_z: np.ndarray
    sigma_z: SigmaZ
    X: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)

    @property
    def var_z(self) -> np.ndarray:
        return self.sigma_z.diagonal()

    @property
    def Sigma_z(self) -> np.ndarray:
        return self.sigma_z.dense()

    def _row(self, i):
        e = np.zeros(self.sigma_z.n)
        e[i] = 1.0
        return self.sigma_z.Q.apply(e, transpose=True)

    def A_i(self, i: int) -> np.ndarray:
        q = self._row(i)
        D = self.X - self.W[i]
        return (q[:, None] * D).T @ D

    def A_ij(self, i: int, j: int) -> np.ndarray:
        """Cross term for ``i != j`` under the operator's rule (dense, O(n^2 d^2))."""
        qi, qj = self._row(i), self._row(j)
        rule = self.sigma_z.rule
        X, W = self.X, self.W
        if rule == "independent":
            raise ValueError("the independent rule has no A_ij form; its covariance is sigma^2 sum_u q_iu q_ju")
        if rule == "centered":
            Du = X - W[i]
            Dv = X - W[j]
        else:
            Du = X[i] - W
            Dv = X[j] - W
        a = (qi[:, None] * Du).sum(axis=0)
        b = (qj[:, None] * Dv).sum(axis=0)
        return np.outer(a, b) - (qi[:, None] * qj[:, None] * Du).T @ Dv


def z_moments(X: np.ndarray, Q: MatchingMatrix, params: ModelParams, rule: str = "centered") -> MomentSet:
    """Mean ``W beta`` and covariance of the linked response."""
    X = np.asarray(X, dtype=float)
    op = SigmaZ(X, Q, params, rule)
    return MomentSet(mean_z=op.omega.copy(), sigma_z=op, X=X, W=transform_design(Q, X))


def _quadratic(W, Sigma_z):
    if hasattr(Sigma_z, "quadratic"):
        return Sigma_z.quadratic(W)
    S = np.asarray(Sigma_z, dtype=float)
    return W.T @ S @ W


def rl_covariance(W: np.ndarray, Sigma_z) -> np.ndarray:
    """``(W'W)^-1 W' Sigma_z W (W'W)^-1``; ``Sigma_z`` may be an array or a :class:`SigmaZ`."""
    W = np.asarray(W, dtype=float)
    fac = Factorization(W.T @ W, "W'W")
    K = _quadratic(W, Sigma_z)
    left = fac.solve(K)
    out = fac.solve(left.T)
    return 0.5 * (out + out.T)
