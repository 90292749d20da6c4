"""Loss engine: expected loss, factor-conditional loss, Monte Carlo
simulation, stressed quantiles, capital charges, the single-period analytic
quantile, and reverse stress expectations.

The granular-limit loss of the book over periods t = 1..T is driven entirely
by the systematic factor trajectory: per period and group, path probabilities
are propagated through (conditional) migration matrices, and the default
column weighted by (conditional) loss given default and exposure gives the
period loss. Simulation paths are independent work units drawn from
counter-based substreams, so results are deterministic for a given seed
regardless of the worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from ._backend import active_backend, get_kernel
from ._rng import chunk_bounds, chunk_generator
from .errors import LoadingSaturationError, SimulationError, ValidationError
from .factors import FactorModel, LoadingSchedule
from .migration import MigrationMatrix, thresholds
from .portfolio import AggregatedExposure, Portfolio, SubportfolioPartition, aggregate_ead, build_partition, warn_if_concentrated
from .recovery import RecoveryParams, expected_lgd
from .scenario import ScenarioSpec, resolve_adjustments, resolve_recovery_arrays


@dataclass(frozen=True)
class RecoveryTable:
    """Recovery parameters per (group, rating at t-1, default period)."""

    mu: np.ndarray  # (G, K-1, T)
    sigma: np.ndarray  # (G, K-1, T)
    loadings: np.ndarray  # (G, K-1, T, d)

    def __post_init__(self):
        for name in ("mu", "sigma", "loadings"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.sigma < 0):
            raise ValidationError("recovery sigma must be >= 0")

    @classmethod
    def deterministic(cls, rates: np.ndarray, horizon: int, dim: int) -> "RecoveryTable":
        """Constant recovery rates per (group, rating); sigma = 0 everywhere."""
        rates = np.asarray(rates, dtype=float)
        if np.any(rates <= 0) or np.any(rates >= 1):
            raise ValidationError("deterministic recovery rates must be in (0,1)")
        G, Km1 = rates.shape
        mu = np.broadcast_to(ndtri(rates)[:, :, None], (G, Km1, horizon)).copy()
        return cls(
            mu=mu,
            sigma=np.zeros((G, Km1, horizon)),
            loadings=np.zeros((G, Km1, horizon, dim)),
        )


@dataclass(frozen=True)
class PreparedModel:
    """Scenario-calibrated model with kernel-ready arrays."""

    exposure: AggregatedExposure
    schedule: LoadingSchedule
    recovery: RecoveryTable
    factor_model: FactorModel
    partition: SubportfolioPartition
    renewal: dict = field(default_factory=dict)
    # derived, filled by from_components
    cutoffs: np.ndarray = None
    idio_scale: np.ndarray = None
    rec_sys: np.ndarray = None
    rec_scale: np.ndarray = None
    renew_frac: np.ndarray = None
    renew_profile: np.ndarray = None
    lgd_expected: np.ndarray = None

    @property
    def horizon(self) -> int:
        return self.schedule.horizon

    @property
    def num_ratings(self) -> int:
        return self.schedule.num_ratings

    @property
    def num_groups(self) -> int:
        return self.schedule.loadings.shape[0]

    @classmethod
    def from_components(
        cls,
        exposure: AggregatedExposure,
        schedule: LoadingSchedule,
        recovery: RecoveryTable,
        factor_model: FactorModel,
        partition: Optional[SubportfolioPartition] = None,
        renewal: Optional[dict] = None,
    ) -> "PreparedModel":
        G, Km1, T, d = schedule.loadings.shape
        K = Km1 + 1
        if exposure.values.shape != (G, Km1, T + 1):
            raise ValidationError(
                f"exposure shape {exposure.values.shape} does not match schedule "
                f"({G}, {Km1}, {T + 1})"
            )
        if factor_model.dim != d:
            raise ValidationError("factor model dimension does not match the schedule")
        if recovery.mu.shape != (G, Km1, T) or recovery.loadings.shape != (G, Km1, T, d):
            raise ValidationError("recovery table shape does not match the schedule")

        if np.any(schedule.correlations >= 1.0 - 1e-10):
            raise LoadingSaturationError("asset correlation reached 1 in the schedule")
        idio_scale = np.ascontiguousarray(np.sqrt(1.0 - schedule.correlations))

        C = factor_model.correlation
        rec_share = np.einsum("gitd,de,gite->git", recovery.loadings, C, recovery.loadings)
        if np.any(rec_share > 1.0 + 1e-9):
            raise ValidationError("recovery loadings exceed unit variance (b.C.b > 1)")
        rec_share = np.clip(rec_share, 0.0, 1.0)
        rec_scale = np.ascontiguousarray(np.sqrt(1.0 + recovery.sigma**2 * (1.0 - rec_share)))
        rec_sys = np.ascontiguousarray(recovery.sigma[..., None] * recovery.loadings)

        tails = np.cumsum(schedule.matrices[..., ::-1], axis=-1)[..., ::-1]
        z = ndtri(np.clip(tails, 0.0, 1.0))
        z[..., 0] = np.inf
        cutoffs = np.concatenate([z, np.full(z.shape[:-1] + (1,), -np.inf)], axis=-1)
        cutoffs = np.ascontiguousarray(cutoffs)

        renewal = dict(renewal or {})
        renew_frac = np.zeros(G)
        renew_profile = np.zeros((G, K))
        groups = exposure.groups
        for name, policy in renewal.items():
            if name not in groups:
                raise ValidationError(f"renewal policy for unknown group {name!r}")
            if policy.profile.size != K:
                raise ValidationError(f"renewal profile for {name!r} must have {K} entries")
            g = groups.index(name)
            renew_frac[g] = policy.turnover
            renew_profile[g] = policy.profile

        if partition is None:
            partition = partition_from_exposure(exposure)
        else:
            recon = np.zeros((G, Km1, T))
            for g in range(G):
                for i in range(Km1):
                    for s in range(partition.counts[g, i]):
                        recon[g, i] += partition.ead[g, i, s]
            if not np.allclose(recon, exposure.values[:, :, 1:], rtol=1e-9, atol=1e-9):
                raise ValidationError("sub-portfolio partition does not cover the exposure")

        lgd_expected = _expected_lgd_table(schedule, recovery, factor_model, cutoffs)

        return cls(
            exposure=exposure,
            schedule=schedule,
            recovery=recovery,
            factor_model=factor_model,
            partition=partition,
            renewal=renewal,
            cutoffs=cutoffs,
            idio_scale=idio_scale,
            rec_sys=rec_sys,
            rec_scale=rec_scale,
            renew_frac=renew_frac,
            renew_profile=renew_profile,
            lgd_expected=lgd_expected,
        )


def partition_from_exposure(exposure: AggregatedExposure) -> SubportfolioPartition:
    """Default (group x initial rating) partition derived from the exposure tensor."""
    G, Km1, Tp1 = exposure.values.shape
    cells = [
        (g, i)
        for g in range(G)
        for i in range(Km1)
        if np.any(exposure.values[g, i] > 0)
    ]
    labels = tuple(f"{exposure.groups[g]}:{i + 1}" for g, i in cells)
    counts = np.zeros((G, Km1), dtype=np.int32)
    index = np.zeros((G, Km1, 1), dtype=np.int32)
    ead = np.zeros((G, Km1, 1, Tp1 - 1))
    principals = np.zeros(len(cells))
    for p, (g, i) in enumerate(cells):
        counts[g, i] = 1
        index[g, i, 0] = p
        ead[g, i, 0] = exposure.values[g, i, 1:]
        principals[p] = exposure.values[g, i, 0]
    return SubportfolioPartition(
        labels=labels, principals=principals, counts=counts, index=index, ead=ead
    )


def _expected_lgd_table(
    schedule: LoadingSchedule, recovery: RecoveryTable, factor_model: FactorModel, cutoffs: np.ndarray
) -> np.ndarray:
    """Average LGD per (group, rating, period); zero where the default
    probability vanishes (the corresponding expected-loss weight is zero)."""
    G, Km1, T = recovery.mu.shape
    K = Km1 + 1
    C = factor_model.correlation
    out = np.zeros((G, Km1, T))
    for g in range(G):
        for i in range(Km1):
            for t in range(T):
                pd = float(schedule.matrices[g, t, i, K - 1])
                if pd <= 0.0:
                    continue
                params = RecoveryParams(
                    mu=float(recovery.mu[g, i, t]),
                    sigma=float(recovery.sigma[g, i, t]),
                    loadings=recovery.loadings[g, i, t],
                )
                out[g, i, t] = expected_lgd(
                    params, schedule.loadings[g, i, t], C, float(cutoffs[g, t, i, K - 1]), pd
                )
    return out


def prepare(
    portfolio: Portfolio,
    scenario: ScenarioSpec,
    approach: Optional[str] = None,
    basel3: Optional[bool] = None,
    subportfolio_key: str = "group_rating",
    herfindahl_threshold: float = 0.05,
) -> PreparedModel:
    """Calibrate a scenario against a portfolio into a simulation-ready model."""
    from .factors import build_schedule

    K = scenario.num_ratings
    T = scenario.horizon
    if portfolio.num_ratings != K:
        raise ValidationError(
            f"portfolio has {portfolio.num_ratings} rating levels, scenario matrices have {K}"
        )
    if portfolio.horizon != T:
        raise ValidationError(
            f"portfolio horizon {portfolio.horizon} does not match scenario horizon {T}"
        )
    missing = [g for g in portfolio.groups if g not in scenario.matrices]
    if missing:
        raise ValidationError(f"scenario has no migration matrix for groups {missing}")

    warn_if_concentrated(portfolio, herfindahl_threshold)
    exposure = aggregate_ead(portfolio)
    partition = build_partition(portfolio, key=subportfolio_key)

    model = scenario.factor_model
    micro = resolve_adjustments(
        scenario.adjustment_rules, portfolio.groups, K, T, model.labels
    )
    matrices_reg = [scenario.matrices[g] for g in portfolio.groups]
    schedule = build_schedule(
        approach or scenario.approach,
        scenario.macro,
        micro,
        matrices_reg,
        model,
        basel3=scenario.basel3 if basel3 is None else basel3,
        groups=portfolio.groups,
    )

    mu, sigma, coupling, explicit = resolve_recovery_arrays(
        scenario.recovery_rules, portfolio.groups, K, T, model.dim
    )
    collinear = ~np.isnan(coupling)
    loadings = np.where(
        collinear[..., None],
        np.nan_to_num(coupling)[..., None] * schedule.loadings,
        explicit,
    )
    recovery = RecoveryTable(mu=mu, sigma=sigma, loadings=loadings)

    renewal = {g: pol for g, pol in scenario.renewal.items() if g in portfolio.groups}
    return PreparedModel.from_components(
        exposure, schedule, recovery, model, partition=partition, renewal=renewal
    )


@dataclass(frozen=True)
class LossBreakdown:
    """Losses of one (conditional or expected) evaluation, split by period and
    sub-portfolio."""

    per_period: np.ndarray  # (T,)
    per_subportfolio: np.ndarray  # (P, T)
    labels: tuple

    @property
    def total(self) -> float:
        return float(self.per_period.sum())


def expected_loss(
    exposure: AggregatedExposure,
    schedule: LoadingSchedule,
    lgd_expected: np.ndarray,
    renewal: Optional[dict] = None,
) -> tuple:
    """Expected portfolio loss (total, per period).

    Path probabilities through the unconditional matrices weight the default
    probability, average LGD and exposure of every (group, initial rating,
    default period) combination.
    """
    G, Km1, _ = lgd_expected.shape
    T = schedule.horizon
    K = Km1 + 1
    ead = exposure.values[:, :, 1:]
    per_period = np.zeros(T)
    renewal = renewal or {}
    for g in range(G):
        policy = renewal.get(exposure.groups[g]) if exposure.groups else None
        prob = np.eye(Km1, K)
        for t in range(T):
            m = schedule.matrices[g, t]
            if policy is not None and policy.turnover > 0:
                m = (1.0 - policy.turnover) * m + policy.turnover * policy.profile[None, :]
            weighted = m[:Km1, K - 1] * lgd_expected[g, :, t]
            unit = prob[:, :Km1] @ weighted
            per_period[t] += float(unit @ ead[g, :, t])
            if t + 1 < T:
                prob = prob @ m
    return float(per_period.sum()), per_period


def conditional_loss(model: PreparedModel, trajectory: np.ndarray) -> LossBreakdown:
    """Portfolio loss along one systematic factor trajectory (T, d)."""
    Z = np.ascontiguousarray(np.atleast_2d(trajectory), dtype=float)
    T, d = model.horizon, model.factor_model.dim
    if Z.shape != (T, d):
        raise ValidationError(f"trajectory must have shape ({T}, {d}), got {Z.shape}")
    P = model.partition.size
    out_period = np.zeros((1, T))
    out_sub = np.zeros((1, P))
    out_sub_period = np.zeros((1, P, T))
    get_kernel().run_chunk(
        Z[None, :, :], model.cutoffs, model.schedule.loadings, model.idio_scale,
        model.recovery.mu, model.rec_sys, model.rec_scale,
        model.renew_frac, model.renew_profile,
        model.partition.counts, model.partition.index, model.partition.ead,
        out_period, out_sub, out_sub_period,
    )
    return LossBreakdown(
        per_period=out_period[0],
        per_subportfolio=out_sub_period[0],
        labels=model.partition.labels,
    )


@dataclass(frozen=True)
class SimulationResult:
    """Monte Carlo losses: per path by period and by sub-portfolio."""

    losses_by_period: np.ndarray  # (n, T)
    losses_by_subportfolio: np.ndarray  # (n, P)
    totals: np.ndarray  # (n,)
    labels: tuple
    principals: np.ndarray  # (P,)
    seed: int
    n_paths: int
    backend: str
    trajectories: Optional[np.ndarray] = None  # (n, T, d) when retained

    @property
    def horizon(self) -> int:
        return self.losses_by_period.shape[1]


def simulate(
    model: PreparedModel,
    n_paths: int,
    seed: int,
    keep_trajectories: bool = False,
    workers: int = 1,
    backend: Optional[str] = None,
) -> SimulationResult:
    """Monte Carlo loss distribution over independent factor trajectories.

    Deterministic for a fixed seed: trajectories come from per-chunk
    counter-based substreams and every chunk writes disjoint output rows, so
    the worker count cannot change any number.
    """
    if n_paths < 1:
        raise ValidationError(f"n_paths must be >= 1, got {n_paths}")
    kern = get_kernel(backend)
    T, d = model.horizon, model.factor_model.dim
    P = model.partition.size
    out_period = np.zeros((n_paths, T))
    out_sub = np.zeros((n_paths, P))
    traj = np.empty((n_paths, T, d)) if keep_trajectories else None
    chol_t = np.ascontiguousarray(model.factor_model.cholesky.T)

    def work(task):
        c, start, stop = task
        gen = chunk_generator(seed, c)
        eta = gen.standard_normal((stop - start, T, d))
        Z = np.ascontiguousarray(eta @ chol_t)
        if traj is not None:
            traj[start:stop] = Z
        kern.run_chunk(
            Z, model.cutoffs, model.schedule.loadings, model.idio_scale,
            model.recovery.mu, model.rec_sys, model.rec_scale,
            model.renew_frac, model.renew_profile,
            model.partition.counts, model.partition.index, model.partition.ead,
            out_period[start:stop], out_sub[start:stop],
        )

    tasks = list(chunk_bounds(n_paths))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, tasks))
    else:
        for task in tasks:
            work(task)

    return SimulationResult(
        losses_by_period=out_period,
        losses_by_subportfolio=out_sub,
        totals=out_period.sum(axis=1),
        labels=model.partition.labels,
        principals=model.partition.principals.copy(),
        seed=seed,
        n_paths=n_paths,
        backend=backend or active_backend(),
        trajectories=traj,
    )


def empirical_quantile(sample: np.ndarray, alpha: float) -> float:
    """(1 - alpha)-quantile as the order statistic at index ceil((1-alpha) n).

    The index is 0-based and clamped to the sample maximum, which makes the
    estimator conservative at the minimal recommended sample size 100/alpha.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0,1), got {alpha}")
    x = np.sort(np.asarray(sample, dtype=float))
    if x.size == 0:
        raise ValidationError("empty sample")
    idx = min(math.ceil((1.0 - alpha) * x.size), x.size - 1)
    return float(x[idx])


def stressed_quantile(result: SimulationResult, alpha: float, period: Optional[int] = None) -> float:
    """Stressed loss at tail probability alpha (total, or one period t = 1..T)."""
    if result.n_paths < 100.0 / alpha:
        warnings.warn(
            f"n_paths = {result.n_paths} is below the recommended 100/alpha = {100.0 / alpha:.0f}",
            stacklevel=2,
        )
    if period is None:
        return empirical_quantile(result.totals, alpha)
    if not 1 <= period <= result.horizon:
        raise ValidationError(f"period must be in 1..{result.horizon}, got {period}")
    return empirical_quantile(result.losses_by_period[:, period - 1], alpha)


def capital_charge(stressed: np.ndarray, expected: np.ndarray) -> np.ndarray:
    """Per-period capital: stressed quantile minus expected loss."""
    stressed = np.asarray(stressed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if stressed.shape != expected.shape:
        raise ValidationError("stressed and expected loss vectors must align")
    out = stressed - expected
    if np.any(out < 0):
        warnings.warn(
            "negative capital charge: quantile below the mean, likely a Monte Carlo "
            "artifact at small n_paths",
            stacklevel=2,
        )
    return out


def closed_form_stressed_loss(
    matrix: MigrationMatrix,
    loadings: np.ndarray,
    recovery_rates: np.ndarray,
    ead: np.ndarray,
    alpha: float,
) -> float:
    """Analytic stressed loss for the single-period, single-group book with
    independent factors, deterministic recovery, and rating-independent
    loadings: the loss is a monotone function of one Gaussian variable, so its
    quantile is the loss at the matching factor quantile.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0,1), got {alpha}")
    a = np.asarray(loadings, dtype=float)
    norm2 = float(a @ a)
    if norm2 >= 1.0:
        raise ValidationError(f"loading norm^2 = {norm2} must be < 1")
    K = matrix.num_ratings
    rr = np.asarray(recovery_rates, dtype=float)
    exposure = np.asarray(ead, dtype=float)
    if rr.shape != (K - 1,) or exposure.shape != (K - 1,):
        raise ValidationError(
            f"recovery rates and EAD must have one entry per non-default rating ({K - 1})"
        )
    z_default = thresholds(matrix).z[: K - 1, K - 1]
    shift = float(ndtri(1.0 - alpha)) * math.sqrt(norm2)
    probs = ndtr((z_default + shift) / math.sqrt(1.0 - norm2))
    return float(probs @ ((1.0 - rr) * exposure))


@dataclass(frozen=True)
class ReverseStressResult:
    """Mean factor trajectory conditional on the loss exceeding a threshold."""

    means: np.ndarray  # (T, d)
    standard_errors: np.ndarray  # (T, d)
    n_exceeding: int
    threshold: float


def reverse_stress(result: SimulationResult, threshold: float) -> ReverseStressResult:
    """E[Z_t | total loss >= threshold] per period and factor, with standard errors."""
    if result.trajectories is None:
        raise SimulationError("trajectories were not retained; rerun with keep_trajectories")
    mask = result.totals >= threshold
    count = int(mask.sum())
    if count == 0:
        raise SimulationError(f"no path exceeds threshold {threshold}; conditioning is empty")
    if count < 100:
        warnings.warn(
            f"only {count} paths exceed the threshold; conditional means are noisy",
            stacklevel=2,
        )
    sel = result.trajectories[mask]
    means = sel.mean(axis=0)
    if count > 1:
        ses = sel.std(axis=0, ddof=1) / math.sqrt(count)
    else:
        ses = np.full_like(means, np.nan)
    return ReverseStressResult(
        means=means, standard_errors=ses, n_exceeding=count, threshold=float(threshold)
    )


@dataclass(frozen=True)
class RiskReport:
    """Headline risk numbers: expected loss, stressed quantiles, capital, premium."""

    expected_total: float
    expected_per_period: np.ndarray  # (T,)
    quantile_totals: dict  # alpha -> float
    quantile_per_period: dict  # alpha -> (T,) array
    capital_per_period: dict  # alpha -> (T,) array
    premium: dict  # alpha -> float, expected + capital_cost * stressed quantile
    capital_cost_rate: float


def build_report(
    model: PreparedModel,
    result: SimulationResult,
    alphas,
    capital_cost_rate: float = 0.10,
) -> RiskReport:
    """Assemble the risk report from a simulation and the expected-loss path."""
    total_e, per_period_e = expected_loss(
        model.exposure, model.schedule, model.lgd_expected, model.renewal
    )
    quantile_totals = {}
    quantile_per_period = {}
    capital = {}
    premium = {}
    for alpha in alphas:
        quantile_totals[alpha] = stressed_quantile(result, alpha)
        per_t = np.array(
            [stressed_quantile(result, alpha, period=t) for t in range(1, result.horizon + 1)]
        )
        quantile_per_period[alpha] = per_t
        capital[alpha] = capital_charge(per_t, per_period_e)
        premium[alpha] = total_e + capital_cost_rate * quantile_totals[alpha]
    return RiskReport(
        expected_total=total_e,
        expected_per_period=per_period_e,
        quantile_totals=quantile_totals,
        quantile_per_period=quantile_per_period,
        capital_per_period=capital,
        premium=premium,
        capital_cost_rate=capital_cost_rate,
    )
