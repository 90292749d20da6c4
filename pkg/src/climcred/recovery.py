"""Stochastic recovery-rate model.

Recovery of a defaulted exposure is Phi(mu + sigma * (b.Z + sqrt(1-b.C.b) e)),
a Gaussian-transformed rate driven by the same systematic factors Z as the
asset values plus an idiosyncratic term e. Default and recovery are therefore
correlated only through Z, which yields closed forms for the average and
factor-conditional loss given default and for the rank correlation between
asset value and recovery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri, owens_t

from .errors import CalibrationError, ValidationError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class RecoveryParams:
    """Parameters of the transformed-Gaussian recovery rate.

    Phi^-1(recovery) is N(mu, sigma^2); ``loadings`` is the vector of factor
    loadings of the recovery channel. sigma = 0 makes recovery deterministic
    and equal to Phi(mu).
    """

    mu: float
    sigma: float
    loadings: np.ndarray

    def __post_init__(self):
        if self.sigma < 0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}")
        b = np.ascontiguousarray(self.loadings, dtype=float)
        b.setflags(write=False)
        object.__setattr__(self, "loadings", b)

    @classmethod
    def deterministic(cls, rate: float, dim: int = 1) -> "RecoveryParams":
        """Constant recovery rate: mu = Phi^-1(rate), sigma = 0."""
        if not 0.0 < rate < 1.0:
            raise ValidationError(f"deterministic recovery rate must be in (0,1), got {rate}")
        return cls(mu=float(ndtri(rate)), sigma=0.0, loadings=np.zeros(dim))

    @classmethod
    def collinear(cls, mu: float, sigma: float, coupling: float, asset_loadings: np.ndarray) -> "RecoveryParams":
        """Collateral of the same type as the principal: b = coupling * a."""
        return cls(mu=mu, sigma=sigma, loadings=coupling * np.asarray(asset_loadings, dtype=float))


def binormal_cdf(x: float, y: float, rho: float) -> float:
    """Standard bivariate normal CDF P(U <= x, V <= y) with correlation rho.

    Assembled from Owen's T function: Phi2(h,k;rho) = (Phi(h)+Phi(k))/2
    - T(h,a_h) - T(k,a_k) - beta, which is exact to machine precision.
    """
    if math.isnan(x) or math.isnan(y) or math.isnan(rho):
        raise ValidationError("binormal_cdf arguments must not be NaN")
    if abs(rho) > 1.0:
        raise ValidationError(f"correlation must satisfy |rho| <= 1, got {rho}")
    if x == -math.inf or y == -math.inf:
        return 0.0
    if x == math.inf:
        return float(ndtr(y))
    if y == math.inf:
        return float(ndtr(x))
    if rho == 1.0:
        return float(ndtr(min(x, y)))
    if rho == -1.0:
        return max(0.0, float(ndtr(x)) + float(ndtr(y)) - 1.0)
    if x == 0.0 and y == 0.0:
        return 0.25 + math.asin(rho) / (2.0 * math.pi)
    root = math.sqrt(1.0 - rho * rho)
    # T-terms at h = 0 are the a -> +/-inf limits of Owen's T, handled explicitly
    tx = 0.25 * math.copysign(1.0, y) if x == 0.0 else float(owens_t(x, (y - rho * x) / (x * root)))
    ty = 0.25 * math.copysign(1.0, x) if y == 0.0 else float(owens_t(y, (x - rho * y) / (y * root)))
    beta = 0.5 if (x * y < 0.0 or (x * y == 0.0 and x + y < 0.0)) else 0.0
    value = 0.5 * (float(ndtr(x)) + float(ndtr(y))) - tx - ty - beta
    return min(1.0, max(0.0, value))


def sample_recovery(
    params: RecoveryParams, C: np.ndarray, Z: np.ndarray, eps_tilde: float
) -> float:
    """One recovery-rate draw given factors Z and idiosyncratic noise."""
    b = params.loadings
    share = float(b @ C @ b)
    if share > 1.0 + 1e-12:
        raise ValidationError(f"recovery loadings exceed unit variance: b.C.b = {share}")
    share = min(share, 1.0)
    inner = float(b @ np.asarray(Z, dtype=float)) + math.sqrt(1.0 - share) * eps_tilde
    return float(ndtr(params.mu + params.sigma * inner))


def expected_lgd(
    params: RecoveryParams, a: np.ndarray, C: np.ndarray, z_default: float, pd: float
) -> float:
    """Average loss given default over all risk, conditional on default.

    1 - Phi2(mu/sqrt(1+sigma^2), z_default; -rho*sigma/sqrt(1+sigma^2)) / pd
    with rho = a.C.b the asset/recovery correlation.
    """
    if pd <= 0.0:
        raise ValidationError("pd must be > 0; loss given default is conditional on default")
    if abs(float(ndtr(z_default)) - pd) > 1e-10:
        raise ValidationError(
            f"z_default and pd are inconsistent: Phi(z)={float(ndtr(z_default)):.12e} vs pd={pd:.12e}"
        )
    rho = float(np.asarray(a, dtype=float) @ C @ params.loadings)
    s = params.sigma
    denom = math.sqrt(1.0 + s * s)
    value = 1.0 - binormal_cdf(params.mu / denom, z_default, -rho * s / denom) / pd
    return min(1.0, max(0.0, value))


def conditional_lgd(params: RecoveryParams, C: np.ndarray, Z: np.ndarray) -> float:
    """Loss given default conditional on the systematic factors Z."""
    b = params.loadings
    share = float(b @ C @ b)
    s = params.sigma
    num = params.mu + s * float(b @ np.asarray(Z, dtype=float))
    return 1.0 - float(ndtr(num / math.sqrt(1.0 + s * s * (1.0 - share))))


def kendall_tau(a: np.ndarray, C: np.ndarray, b: np.ndarray) -> float:
    """Rank correlation between asset value and recovery: (2/pi) asin(a.C.b)."""
    cross = float(np.asarray(a, dtype=float) @ C @ np.asarray(b, dtype=float))
    if abs(cross) > 1.0 + 1e-12:
        raise ValidationError(f"|a.C.b| = {abs(cross)} > 1; not a correlation")
    cross = min(1.0, max(-1.0, cross))
    return (2.0 / math.pi) * math.asin(cross)


def conditional_moments(
    params: RecoveryParams, rho: float, z_default: float, pd: float
) -> tuple:
    """First two moments of Phi^-1(recovery) conditional on default.

    With hazard ratio A = phi(z)/pd of the truncated Gaussian:
      m1 = mu - rho sigma A
      m2 = mu^2 - 2 rho sigma mu A - sigma^2 rho^2 z A + sigma^2
    """
    if pd <= 0.0:
        raise ValidationError("pd must be > 0; moments are conditional on default")
    mu, s = params.mu, params.sigma
    hazard = _INV_SQRT_2PI * math.exp(-0.5 * z_default * z_default) / pd
    m1 = mu - rho * s * hazard
    m2 = mu * mu - 2.0 * rho * s * mu * hazard - (s * rho) ** 2 * z_default * hazard + s * s
    return m1, m2


def calibrate_recovery(
    target_mean_lgd: float,
    target_var_phiinv: float,
    target_tau: float,
    a: np.ndarray,
    C: np.ndarray,
) -> tuple:
    """Fit (mu, sigma, coupling) of the collinear model b = coupling * a.

    Targets are the marginal mean loss given default E[1 - recovery], the
    marginal variance of Phi^-1(recovery), and the Kendall rank correlation
    between asset value and recovery. The system is triangular:
    tau fixes a.C.b, the variance fixes sigma, the mean then fixes mu.
    """
    if not 0.0 < target_mean_lgd < 1.0:
        raise CalibrationError(f"target mean LGD must be in (0,1), got {target_mean_lgd}")
    if target_var_phiinv < 0.0:
        raise CalibrationError(f"target variance must be >= 0, got {target_var_phiinv}")
    if not -1.0 < target_tau < 1.0:
        raise CalibrationError(f"target Kendall tau must be in (-1,1), got {target_tau}")
    a = np.asarray(a, dtype=float)
    asset_share = float(a @ C @ a)

    cross = math.sin(0.5 * math.pi * target_tau)
    if cross == 0.0:
        coupling = 0.0
    else:
        if asset_share <= 0.0:
            raise CalibrationError(
                "tau != 0 requires nonzero asset loadings; a.C.a = 0 leaves no systematic channel"
            )
        coupling = cross / asset_share
        recovery_share = coupling * coupling * asset_share  # = cross^2 / a.C.a
        if recovery_share > 1.0 + 1e-12:
            max_tau = (2.0 / math.pi) * math.asin(min(1.0, math.sqrt(asset_share)))
            raise CalibrationError(
                f"infeasible targets: implied b.C.b = {recovery_share:.6f} > 1; "
                f"|tau| is capped at {max_tau:.6f} by a.C.a = {asset_share:.6f}"
            )

    sigma = math.sqrt(target_var_phiinv)
    mu = math.sqrt(1.0 + sigma * sigma) * float(ndtri(1.0 - target_mean_lgd))
    return mu, sigma, coupling
