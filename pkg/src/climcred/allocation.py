"""Euler decomposition of expected and unexpected loss into sub-portfolio
risk contributions and sensitivities.

Expected contributions are plain sample means. Unexpected contributions need
the conditional expectation of each sub-portfolio's unit loss at the loss
quantile, estimated by Nadaraya-Watson kernel regression on the simulated
sample (Gaussian kernel by default, Epanechnikov as an alternative).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import SimulationResult, empirical_quantile
from .errors import EstimatorError, ValidationError

KERNELS = ("gaussian", "epanechnikov")


@dataclass(frozen=True)
class AllocationReport:
    """Risk contributions (money) and sensitivities (shares summing to one)."""

    labels: tuple
    principals: np.ndarray
    rc_expected: np.ndarray
    s_expected: np.ndarray
    rc_unexpected: np.ndarray
    s_unexpected: np.ndarray
    bandwidth: float
    quantile_used: float


def expected_contributions(sub_losses: np.ndarray, principals: np.ndarray) -> tuple:
    """Expected-loss contributions RC_p = K_p mean(l_p) and their shares."""
    sub_losses = np.asarray(sub_losses, dtype=float)
    principals = np.asarray(principals, dtype=float)
    if sub_losses.ndim != 2 or sub_losses.shape[1] != principals.size:
        raise ValidationError("sub_losses must be (n_paths, P) matching principals")
    rc = principals * sub_losses.mean(axis=0)
    total = rc.sum()
    if total == 0.0:
        raise EstimatorError("all-zero losses: expected-loss sensitivities are undefined")
    return rc, rc / total


def default_bandwidth(total_losses: np.ndarray) -> float:
    """Silverman's rule 1.06 sigma n^(-1/5) on the total-loss sample."""
    x = np.asarray(total_losses, dtype=float)
    if x.size < 2:
        raise EstimatorError("need at least 2 paths to choose a bandwidth")
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        raise EstimatorError("constant loss sample: bandwidth is undefined")
    return 1.06 * sd * x.size ** (-0.2)


def _kernel_weights(scaled: np.ndarray, kind: str) -> np.ndarray:
    if kind == "gaussian":
        return np.exp(-0.5 * scaled**2) / math.sqrt(2.0 * math.pi)
    if kind == "epanechnikov":
        return 0.75 * np.clip(1.0 - scaled**2, 0.0, None)
    raise ValidationError(f"unknown kernel {kind!r}; choose from {KERNELS}")


def unexpected_contributions(
    sub_losses: np.ndarray,
    principals: np.ndarray,
    total_losses: np.ndarray,
    quantile: float,
    bandwidth: float | None = None,
    kernel: str = "gaussian",
) -> tuple:
    """Quantile-loss contributions RC_p = K_p E[l_p | L = quantile] and shares.

    The conditional expectation is the Nadaraya-Watson estimate
    sum_k l_p^(k) K_h(L^(k) - q) / sum_k K_h(L^(k) - q).
    """
    sub_losses = np.asarray(sub_losses, dtype=float)
    principals = np.asarray(principals, dtype=float)
    total_losses = np.asarray(total_losses, dtype=float)
    if sub_losses.shape != (total_losses.size, principals.size):
        raise ValidationError("sub_losses must be (n_paths, P) matching principals and totals")
    if bandwidth is None:
        bandwidth = default_bandwidth(total_losses)
    if bandwidth <= 0:
        raise ValidationError(f"bandwidth must be > 0, got {bandwidth}")
    weights = _kernel_weights((total_losses - quantile) / bandwidth, kernel)
    mass = weights.sum()
    if mass == 0.0:
        raise EstimatorError(
            "zero kernel mass: the conditioning point is too far outside the sample"
        )
    s_hat = (weights @ sub_losses) / mass
    rc = principals * s_hat
    total = rc.sum()
    if total == 0.0:
        raise EstimatorError("all-zero conditional losses: sensitivities are undefined")
    return rc, rc / total


def allocate(
    result: SimulationResult,
    alpha: float,
    bandwidth: float | None = None,
    kernel: str = "gaussian",
) -> AllocationReport:
    """Full allocation from a simulation: conditions on the empirical quantile
    of the same sample so the expected side sums to the sample mean exactly."""
    principals = result.principals
    if np.any(principals <= 0):
        bad = [result.labels[p] for p in np.flatnonzero(principals <= 0)]
        raise ValidationError(f"sub-portfolios without initial exposure: {bad}")
    unit = result.losses_by_subportfolio / principals[None, :]
    quantile = empirical_quantile(result.totals, alpha)
    h = default_bandwidth(result.totals) if bandwidth is None else bandwidth
    rc_e, s_e = expected_contributions(unit, principals)
    rc_u, s_u = unexpected_contributions(
        unit, principals, result.totals, quantile, bandwidth=h, kernel=kernel
    )
    return AllocationReport(
        labels=result.labels,
        principals=principals.copy(),
        rc_expected=rc_e,
        s_expected=s_e,
        rc_unexpected=rc_u,
        s_unexpected=s_u,
        bandwidth=h,
        quantile_used=quantile,
    )
