"""Monte Carlo harness for the simulation settings and the linkage application.

Seeding: sweep point ``p`` draws its fixed design ``X`` and matching matrix
``Q`` from ``SeedSequence(master_seed, spawn_key=(p, 0))``. Repetition ``r``
of that point uses ``SeedSequence(master_seed, spawn_key=(p, 1, r))``, split
into a stream for the regression errors, one for the linkage and one seed per
method. Results therefore do not depend on how repetitions are scheduled.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dp_regression import (
    SspConfig,
    SspRetryError,
    ngd_fit,
    ngd_variance,
    ssp_fit,
    ssp_variance,
    suggested_ngd_config,
)
from .estimators import ModelParams, SigmaZ, SingularMatrixError, ols_fit, residual_sigma, rl_covariance, rl_fit
from .linkage import LinkedDataset, MatchingMatrix, block_ele, identity, sample_linkage, transform_design
from .linker import DEFAULT_CORRUPTION_RATE, generate_corpus, link_records, linked_dataset
from .privacy import (
    BoundSet,
    PrivacyBudget,
    PrivacyWarning,
    data_bounds,
    default_truncation,
    ngd_noise_scale,
    ngd_sensitivity_factor,
    ssp_noise_scale,
    ssp_sensitivity_factor,
)

METHODS = ("ols", "rl", "ngd", "ssp", "ngd_nonrl", "ssp_nonrl", "ngd_naive", "ssp_naive")
DEFAULT_METHODS = ("ols", "rl", "ngd", "ssp", "ngd_nonrl", "ssp_nonrl")
CSV_COLUMNS = ("method", "sweep_value", "mean_rel_error", "emp_var_trace", "thr_var_trace", "reps")
DEFAULT_SEED = 20240517
DELTA_EXPONENT = 1.1
# Setting 3 lets M fall linearly from 1 at gamma = 0.6 to 0 at gamma = 1
SETTING3_M_SPAN = 0.4


def max_workers() -> int:
    """Worker processes for repetitions: ``LINKDP_THREADS`` capped by the CPU count."""
    cpus = os.cpu_count() or 1
    raw = os.environ.get("LINKDP_THREADS", "").strip()
    if not raw:
        return 1
    try:
        want = int(raw)
    except ValueError:
        raise ValueError(f"LINKDP_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(want, cpus))


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation study.

    At most one of ``n``, ``sigma`` and ``gamma`` may list several values;
    that field is the sweep. ``gamma_law`` is ``("uniform", a, b)`` for block
    accuracies drawn per block, or ``("fixed",)`` to use the ``gamma`` values.
    ``M = None`` means ``(1 - gamma) / 0.4``. ``delta = None`` means
    ``n^-1.1``. ``L = None`` reads ``L`` off the fixed design (not private).
    ``C = None`` projects onto the ball of radius ``c0``.
    """

    name: str = "custom"
    n: tuple[int, ...] = (10000,)
    d: int = 1
    beta: tuple[float, ...] = (1.0,)
    sigma: tuple[float, ...] = (1.0,)
    block_size: int = 25
    gamma_law: tuple = ("uniform", 0.6, 0.9)
    gamma: tuple[float, ...] = (1.0,)
    M: float | None = 1.0
    epsilon: float = 1.0
    delta: float | None = None
    reps: int = 300
    methods: tuple[str, ...] = DEFAULT_METHODS
    master_seed: int = DEFAULT_SEED
    c_x: float | None = None
    c0: float = 1.0
    C: float | None = None
    L: float | None = None
    t_fraction: float = 1.0
    noise_route: str = "simplified"
    project: bool = True
    linkage_mode: str = "permutation"
    covariance_rule: str = "centered"

    def __post_init__(self):
        for name in ("n", "sigma", "gamma", "beta", "methods"):
            value = getattr(self, name)
            if np.ndim(value) == 0:
                value = (value,)
            object.__setattr__(self, name, tuple(value))
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        object.__setattr__(self, "gamma_law", tuple(self.gamma_law))
        if self.reps < 1:
            raise ValueError(f"reps must be at least 1, got {self.reps}")
        if len(self.beta) != self.d:
            raise ValueError(f"beta has {len(self.beta)} entries for d={self.d}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.gamma_law[0] not in ("uniform", "fixed"):
            raise ValueError(f"gamma_law must be uniform or fixed, got {self.gamma_law[0]!r}")
        swept = [k for k in ("n", "sigma", "gamma") if len(getattr(self, k)) > 1]
        if len(swept) > 1:
            raise ValueError(f"only one field may be swept, got {swept}")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")

    @property
    def sweep_field(self) -> str:
        for k in ("n", "sigma", "gamma"):
            if len(getattr(self, k)) > 1:
                return k
        return "n"

    def points(self) -> list[dict]:
        key = self.sweep_field
        out = []
        for v in getattr(self, key):
            p = {"n": self.n[0], "sigma": self.sigma[0], "gamma": self.gamma[0]}
            p[key] = v
            p["sweep_value"] = v
            out.append(p)
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**doc)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def setting(k: int, reps: int = 300, master_seed: int = DEFAULT_SEED, **overrides) -> ScenarioConfig:
    """Preset for simulation setting 1 (vary n), 2 (vary sigma) or 3 (vary gamma)."""
    if k == 1:
        cfg = ScenarioConfig(name="setting1", n=(3000, 5000, 7000, 10000), sigma=(1.0,))
    elif k == 2:
        cfg = ScenarioConfig(name="setting2", n=(10000,), sigma=(0.5, 0.75, 1.0, 1.25, 1.5, 1.8))
    elif k == 3:
        cfg = ScenarioConfig(
            name="setting3",
            n=(10000,),
            sigma=(1.0,),
            gamma_law=("fixed",),
            gamma=(0.6, 0.7, 0.8, 0.9, 1.0),
            M=None,
        )
    else:
        raise ValueError(f"no preset for setting {k}")
    return replace(cfg, reps=reps, master_seed=master_seed, **overrides)


# --------------------------------------------------------------------------
# instances
# --------------------------------------------------------------------------


@dataclass
class Design:
    """Everything fixed at a sweep point."""

    index: int
    n: int
    sigma: float
    gamma: float | None
    X: np.ndarray
    Q: MatchingMatrix
    params: ModelParams
    budget: PrivacyBudget
    M: float
    last_block: int


def _block_sizes(n: int, block_size: int) -> list[int]:
    full, rest = divmod(n, block_size)
    return [block_size] * full + ([rest] if rest else [])


def generate_design(config: ScenarioConfig, point_index: int) -> Design:
    """Fixed ``X`` and ``Q`` for one sweep point.

    A block size that does not divide ``n`` leaves a shorter last block; its
    size is reported in ``last_block``.
    """
    point = config.points()[point_index]
    n, sigma = int(point["n"]), float(point["sigma"])
    rng = np.random.default_rng(np.random.SeedSequence(config.master_seed, spawn_key=(point_index, 0)))
    X = rng.uniform(-1.0, 1.0, size=(n, config.d))
    sizes = _block_sizes(n, config.block_size)
    if config.gamma_law[0] == "uniform":
        _, lo, hi = config.gamma_law
        gammas = rng.uniform(lo, hi, size=len(sizes))
        gamma = None
    else:
        gamma = float(point["gamma"])
        gammas = np.full(len(sizes), gamma)
    gammas = np.where(np.asarray(sizes) == 1, 1.0, gammas)
    Q = block_ele(zip(sizes, gammas))
    if config.M is None:
        if gamma is None:
            raise ValueError("M = None needs a fixed gamma law")
        M = (1.0 - gamma) / SETTING3_M_SPAN
    else:
        M = float(config.M)
    delta = config.delta if config.delta is not None else n ** (-DELTA_EXPONENT)
    return Design(
        index=point_index,
        n=n,
        sigma=sigma,
        gamma=gamma,
        X=X,
        Q=Q,
        params=ModelParams(np.asarray(config.beta, dtype=float), sigma**2),
        budget=PrivacyBudget(config.epsilon, delta),
        M=M,
        last_block=sizes[-1],
    )


def _rep_streams(config: ScenarioConfig, point_index: int, rep: int):
    ss = np.random.SeedSequence(config.master_seed, spawn_key=(point_index, 1, rep))
    noise_ss, link_ss, method_ss = ss.spawn(3)
    seeds = method_ss.generate_state(len(METHODS), dtype=np.uint64)
    return np.random.default_rng(noise_ss), np.random.default_rng(link_ss), {m: int(s) for m, s in zip(METHODS, seeds)}


def _draw(config: ScenarioConfig, point_index: int, rep: int, design: Design):
    noise_rng, link_rng, _ = _rep_streams(config, point_index, rep)
    y = design.X @ design.params.beta + design.sigma * noise_rng.standard_normal(design.n)
    return y, y[sample_linkage(design.Q, config.linkage_mode, link_rng)]


def generate_instance(
    config: ScenarioConfig, point_index: int, rep: int, design: Design | None = None
) -> tuple[LinkedDataset, MatchingMatrix, ModelParams]:
    """Linked data for one repetition: fresh errors and a fresh linkage on the fixed design.

    Under independent-mode linkage ``z`` is not a permutation of ``y``, so the
    returned dataset carries no ``y``.
    """
    if design is None:
        design = generate_design(config, point_index)
    y, z = _draw(config, point_index, rep, design)
    truth = y if config.linkage_mode == "permutation" else None
    return LinkedDataset(design.X, z, truth), design.Q, design.params


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


@dataclass
class _Arm:
    """Method-independent pieces for one way of fitting (post-RL or not)."""

    Q: MatchingMatrix
    W: np.ndarray
    bounds: BoundSet
    ngd: object
    ssp: SspConfig


def _quiet_bounds(X, W):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PrivacyWarning)
        return data_bounds(X, W)


def _arm(config: ScenarioConfig, design: Design, linked: bool, M: float) -> _Arm:
    Q = design.Q if linked else identity(design.n)
    W = transform_design(Q, design.X)
    c_x = config.c_x if config.c_x is not None else math.sqrt(config.d)
    L = config.L if config.L is not None else _quiet_bounds(design.X, W)["L"]
    R = default_truncation(design.sigma, design.n)
    bounds = BoundSet(c_x=c_x, M=M, c0=config.c0, L=L, R=R, C=config.C)
    ngd = suggested_ngd_config(
        design.n, config.d, bounds, sigma_estimate=design.sigma, t_fraction=config.t_fraction, route=config.noise_route
    )
    # suggested_ngd_config sets C = c0; honour an explicit projection radius
    ngd = replace(ngd, C=bounds.C, B=ngd_sensitivity_factor(bounds), project=config.project)
    ssp = SspConfig(R=R, B=ssp_sensitivity_factor(bounds))
    return _Arm(Q, W, bounds, ngd, ssp)


def _arms(config: ScenarioConfig, design: Design) -> dict[str, _Arm]:
    arms = {}
    want = set(config.methods)
    if want & {"ngd", "ssp"}:
        arms["rl"] = _arm(config, design, True, design.M)
    if want & {"ngd_nonrl", "ssp_nonrl", "ngd_naive", "ssp_naive"}:
        arms["plain"] = _arm(config, design, False, 0.0)
    return arms


def _fit_one(method, X, y, z, design, arms, seeds):
    budget = design.budget
    if method == "ols":
        return ols_fit(X, y).beta_hat
    if method == "rl":
        return rl_fit(X, z, design.Q).beta_hat
    kind, _, variant = method.partition("_")
    arm = arms["plain" if variant else "rl"]
    data = LinkedDataset(X, y if variant == "nonrl" else z)
    if kind == "ngd":
        cfg = replace(arm.ngd, seed=seeds[method])
        return ngd_fit(data, arm.Q, budget, arm.bounds, cfg).beta_hat
    cfg = replace(arm.ssp, seed=seeds[method])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PrivacyWarning)
        return ssp_fit(data, arm.Q, budget, arm.bounds, cfg).beta_hat


def _run_reps(config: ScenarioConfig, point_index: int, reps: Sequence[int]):
    design = generate_design(config, point_index)
    arms = _arms(config, design)
    out = {m: np.full((len(reps), config.d), np.nan) for m in config.methods}
    failures = {m: [] for m in config.methods}
    for k, rep in enumerate(reps):
        y, z = _draw(config, point_index, rep, design)
        _, _, seeds = _rep_streams(config, point_index, rep)
        for m in config.methods:
            try:
                out[m][k] = _fit_one(m, design.X, y, z, design, arms, seeds)
            except (SspRetryError, SingularMatrixError) as exc:
                failures[m].append((rep, str(exc)))
    return out, failures


def _theory(config: ScenarioConfig, design: Design, arms: dict[str, _Arm]) -> dict[str, np.ndarray]:
    """Theoretical covariance of every method at this design."""
    d = config.d
    nan = np.full((d, d), np.nan)
    params = design.params
    out = {}
    X = design.X
    beta = params.beta
    sig_lnk = SigmaZ(X, design.Q, params, config.covariance_rule)
    W = transform_design(design.Q, X)
    sigma_rl = rl_covariance(W, sig_lnk)
    white = _ScaledIdentity(params.sigma2)
    ols_cov = rl_covariance(X, white)
    for m in config.methods:
        if m == "ols":
            out[m] = ols_cov
        elif m == "rl":
            out[m] = sigma_rl
        elif m.endswith("_naive"):
            out[m] = nan
        else:
            kind, _, variant = m.partition("_")
            arm = arms["plain" if variant else "rl"]
            Wm, Sz, base = (X, white, ols_cov) if variant else (W, sig_lnk, sigma_rl)
            if kind == "ngd":
                cfg = arm.ngd
                omega = ngd_noise_scale(cfg.eta, cfg.B, cfg.T, design.n, design.budget, cfg.route)
                try:
                    out[m] = ngd_variance(Wm, Sz, cfg.eta, cfg.T, omega).total
                except ValueError:
                    out[m] = nan
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", PrivacyWarning)
                    omega = ssp_noise_scale(arm.ssp.B, design.budget)
                out[m] = ssp_variance(Wm, beta, base, omega).total
    return out


class _ScaledIdentity:
    """``s I`` with the quadratic-form interface of :class:`SigmaZ`."""

    def __init__(self, scale: float):
        self.scale = scale

    def quadratic(self, W):
        W = np.asarray(W, dtype=float)
        return self.scale * (W.T @ W)


@dataclass
class SweepResult:
    method: str
    sweep_value: float
    estimates: np.ndarray = field(repr=False)
    beta: np.ndarray
    thr_cov: np.ndarray
    failures: list = field(default_factory=list)

    @property
    def reps(self) -> int:
        return int(np.count_nonzero(np.all(np.isfinite(self.estimates), axis=1)))

    @property
    def valid(self) -> np.ndarray:
        return self.estimates[np.all(np.isfinite(self.estimates), axis=1)]

    @property
    def mean_estimate(self) -> np.ndarray:
        return self.valid.mean(axis=0)

    @property
    def std_error(self) -> np.ndarray:
        """Monte Carlo standard error of :attr:`mean_estimate`."""
        v = self.valid
        return v.std(axis=0, ddof=1) / math.sqrt(len(v))

    @property
    def mean_rel_error(self) -> float:
        err = np.linalg.norm(self.valid - self.beta, axis=1) / np.linalg.norm(self.beta)
        return float(err.mean())

    @property
    def emp_cov(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.valid, rowvar=False, ddof=1))

    @property
    def emp_var_trace(self) -> float:
        return float(np.trace(self.emp_cov))

    @property
    def thr_var_trace(self) -> float:
        return float(np.trace(self.thr_cov))


@dataclass
class SimReport:
    config: ScenarioConfig
    rows: list[SweepResult]
    wall_clock: float = 0.0
    notes: list[str] = field(default_factory=list)

    def get(self, method: str, sweep_value=None) -> SweepResult | list[SweepResult]:
        rows = [r for r in self.rows if r.method == method]
        if sweep_value is None:
            return rows
        for r in rows:
            if r.sweep_value == sweep_value:
                return r
        raise KeyError((method, sweep_value))

    def series(self, method: str, attr: str = "mean_rel_error") -> tuple[np.ndarray, np.ndarray]:
        rows = self.get(method)
        return np.array([r.sweep_value for r in rows]), np.array([getattr(r, attr) for r in rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(
                (
                    r.method,
                    repr(float(r.sweep_value)) if self.config.sweep_field != "n" else int(r.sweep_value),
                    repr(r.mean_rel_error),
                    repr(r.emp_var_trace),
                    repr(r.thr_var_trace),
                    r.reps,
                )
            )
        return buf.getvalue()

    def manifest(self) -> dict:
        """Seeds, config and config hash; no timing so reruns compare equal."""
        return {
            "config": self.config.to_dict(),
            "config_sha256": self.config.digest(),
            "master_seed": self.config.master_seed,
            "seed_rule": "design: SeedSequence(master_seed, spawn_key=(point, 0)); "
            "repetition: SeedSequence(master_seed, spawn_key=(point, 1, rep))",
            "sweep_field": self.config.sweep_field,
            "failures": {f"{r.method}@{r.sweep_value}": [f[0] for f in r.failures] for r in self.rows if r.failures},
            "notes": self.notes,
        }


def run_scenario(config: ScenarioConfig, workers: int | None = None) -> SimReport:
    """Run every method on every sweep point for ``config.reps`` repetitions.

    Failed repetitions (SSP retries exhausted) are recorded and excluded.
    """
    start = time.perf_counter()
    workers = max_workers() if workers is None else max(1, workers)
    rows, notes = [], []
    for p, point in enumerate(config.points()):
        design = generate_design(config, p)
        if design.last_block != config.block_size:
            notes.append(f"point {p}: last block has {design.last_block} records")
        arms = _arms(config, design)
        reps = list(range(config.reps))
        if workers == 1:
            parts = [_run_reps(config, p, reps)]
        else:
            chunks = [c.tolist() for c in np.array_split(reps, workers) if len(c)]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_run_reps, [config] * len(chunks), [p] * len(chunks), chunks))
        thr = _theory(config, design, arms)
        for m in config.methods:
            est = np.concatenate([part[0][m] for part in parts])
            fails = [f for part in parts for f in part[1][m]]
            rows.append(SweepResult(m, point["sweep_value"], est, design.params.beta, thr[m], fails))
    return SimReport(config, rows, time.perf_counter() - start, notes)


def compare_rl_vs_nonrl(config: ScenarioConfig, workers: int | None = None) -> SimReport:
    """Each DP method post-RL and naive (``Q = I``, ``M = 0``) on the same linked data."""
    gammas = config.gamma if config.gamma_law[0] == "fixed" else (config.gamma_law[1], config.gamma_law[2])
    if min(gammas) >= 1.0:
        warnings.warn("every block is perfectly linked; both arms coincide in distribution", stacklevel=2)
    return run_scenario(replace(config, methods=("rl", "ngd", "ssp", "ngd_naive", "ssp_naive")), workers)


def write_report(report: SimReport, out_dir: str | Path, stem: str | None = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or report.config.name
    csv_path = out_dir / f"{stem}.csv"
    man_path = out_dir / f"{stem}.manifest.json"
    csv_path.write_text(report.to_csv())
    man_path.write_text(json.dumps(report.manifest(), indent=2, sort_keys=True) + "\n")
    return csv_path, man_path


def growth_slope(x: Sequence[float], error: Sequence[float], floor: Sequence[float] | float = 0.0) -> float:
    """Least-squares slope of ``log(error - floor)`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    excess = np.asarray(error, dtype=float) - np.asarray(floor, dtype=float)
    if np.any(excess <= 0):
        raise ValueError("error must exceed the floor at every point")
    slope, _ = np.polyfit(np.log(x), np.log(excess), 1)
    return float(slope)


# --------------------------------------------------------------------------
# linkage application
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ApplicationConfig:
    n: int = 5000
    n_blocks: int = 9
    corruption_rate: float | None = None
    threshold: float = 4.0
    epsilon: float = 1.0
    delta: float = 8.5e-5
    M: float = 1.0
    c0: float = 1.0
    C: float = 1.2
    reps: int = 1000
    t_fraction: float = 1.0 / 3.0
    corpus_seed: int = 7
    master_seed: int = DEFAULT_SEED


@dataclass
class ApplicationReport:
    config: ApplicationConfig
    accuracy: float
    gammas: np.ndarray
    reference: float
    rl_estimate: float
    estimates: dict[str, np.ndarray] = field(repr=False)
    settings: dict = field(default_factory=dict)

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for m, est in self.estimates.items():
            sd = float(est.std(ddof=1))
            se = sd / math.sqrt(len(est))
            out[m] = {
                "mean": float(est.mean()),
                "sd": sd,
                "se": se,
                "bias_in_se": float((est.mean() - self.reference) / se),
            }
        return out


def standardize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return (v - v.mean(axis=0)) / v.std(axis=0)


def run_application(config: ApplicationConfig = ApplicationConfig()) -> ApplicationReport:
    """Link a synthetic corpus, then fit post-RL and naive DP regressions.

    X and y are standardized (``z`` with y's mean and scale) and fit without
    an intercept. Bounds follow the data: ``c_x = max|X|``, ``L`` from ``W``,
    ``sigma`` from the RL residuals; none of these reads is private. The
    reference is the OLS fit on the correctly linked pairs. Repetitions redraw
    only the privacy noise.
    """
    rate = DEFAULT_CORRUPTION_RATE if config.corruption_rate is None else config.corruption_rate
    A, B = generate_corpus(config.n, config.n_blocks, rate, seed=config.corpus_seed)
    result = link_records(A, B, config.threshold, seed=config.corpus_seed)
    raw, Q = linked_dataset(A, B, result)
    X = standardize(raw.X)
    mu, sd = raw.y.mean(), raw.y.std()
    y = (raw.y - mu) / sd
    z = (raw.z - mu) / sd
    data = LinkedDataset(X, z, y)
    n = data.n
    budget = PrivacyBudget(config.epsilon, config.delta)
    reference = float(ols_fit(X, y).beta_hat[0])
    rl_estimate = float(rl_fit(X, z, Q).beta_hat[0])
    c_x = float(np.abs(X).max())
    arms = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PrivacyWarning)
        for label, Qa, M in (("rl", Q, config.M), ("naive", identity(n), 0.0)):
            sigma_hat = residual_sigma(X, z, Qa)
            L = data_bounds(X, transform_design(Qa, X))["L"]
            R = default_truncation(sigma_hat, n)
            bounds = BoundSet(c_x=c_x, M=M, c0=config.c0, L=L, R=R, C=config.C)
            full = suggested_ngd_config(n, 1, bounds, sigma_estimate=sigma_hat, route="simplified")
            full = replace(full, C=config.C, B=ngd_sensitivity_factor(bounds))
            short = replace(
                full, T=suggested_ngd_config(n, 1, bounds, sigma_hat, t_fraction=config.t_fraction).T
            )
            arms[label] = (Qa, bounds, full, short, SspConfig(R=R, B=ssp_sensitivity_factor(bounds)))
    methods = ("ngd", "ngd_short", "ssp", "ngd_naive", "ngd_short_naive", "ssp_naive")
    est = {m: np.empty(config.reps) for m in methods}
    settings = {
        label: {"L": b.L, "R": b.R, "c_x": b.c_x, "M": b.M, "T": f.T, "T_short": s.T, "C": f.C}
        for label, (_, b, f, s, _) in arms.items()
    }
    for r in range(config.reps):
        ss = np.random.SeedSequence(config.master_seed, spawn_key=(r,))
        seeds = [int(v) for v in ss.generate_state(len(methods), dtype=np.uint64)]
        for m, seed in zip(methods, seeds):
            label = "naive" if m.endswith("naive") else "rl"
            Qa, bounds, full, short, ssp_cfg = arms[label]
            if m.startswith("ssp"):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", PrivacyWarning)
                    fit = ssp_fit(data, Qa, budget, bounds, replace(ssp_cfg, seed=seed))
            else:
                cfg = short if "short" in m else full
                fit = ngd_fit(data, Qa, budget, bounds, replace(cfg, seed=seed))
            est[m][r] = fit.beta_hat[0]
    return ApplicationReport(config, result.overall_accuracy, result.gammas, reference, rl_estimate, est, settings)
