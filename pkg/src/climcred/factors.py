"""Systematic risk factors and factor-loading calibration.

Factors are i.i.d. multivariate normal N(0, C) per period. A climate
scenario supplies macro intensities per factor and time plus per-(group,
rating) micro adjustments; their product gives raw loadings that each
calibration approach normalizes against the regulatory single-factor anchor:

* T1 keeps both the asset correlation and the migration matrices at their
  regulatory values for all t (reference calibration; rescales loadings only).
* T2 lets the correlation drift with the climate intensities but keeps the
  migration matrices fixed (reference calibration; shrinks idiosyncratic risk).
* The proposed approach keeps idiosyncratic and economic risk stationary, so
  both the correlation and the unconditional migration matrices evolve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError, ValidationError
from .migration import matrix_from_thresholds, thresholds
from ._rng import CHUNK_SIZE, chunk_generator

APPROACHES = ("t1", "t2", "proposed")


def regulatory_correlation(pd, basel3: bool = False):
    """Single-factor asset correlation as a function of default probability.

    0.12 w + 0.24 (1 - w) with w = (1 - exp(-50 pd)) / (1 - exp(-50));
    the basel3 flag applies the revised 1.25 multiplier. Accepts arrays.
    """
    pd = np.asarray(pd, dtype=float)
    if np.any(pd < 0) or np.any(pd > 1):
        raise ValidationError("pd must lie in [0,1]")
    w = -np.expm1(-50.0 * pd) / -np.expm1(-50.0)
    r = 0.12 * w + 0.24 * (1.0 - w)
    if basel3:
        r = 1.25 * r
    return r if r.ndim else float(r)


@dataclass(frozen=True)
class FactorModel:
    """Correlation structure of the systematic factors."""

    correlation: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        C = np.ascontiguousarray(self.correlation, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValidationError(f"correlation matrix must be square, got {C.shape}")
        if np.max(np.abs(C - C.T)) > 1e-12:
            raise ValidationError("correlation matrix must be symmetric")
        if np.max(np.abs(np.diag(C) - 1.0)) > 1e-12:
            raise ValidationError("correlation matrix must have unit diagonal")
        labels = tuple(self.labels) or tuple(f"factor_{j}" for j in range(C.shape[0]))
        if len(labels) != C.shape[0]:
            raise ValidationError("number of factor labels must match the matrix dimension")
        C.setflags(write=False)
        object.__setattr__(self, "correlation", C)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_chol", _robust_cholesky(C))

    @property
    def dim(self) -> int:
        return self.correlation.shape[0]

    @property
    def cholesky(self) -> np.ndarray:
        return self._chol


def _robust_cholesky(C: np.ndarray) -> np.ndarray:
    """Cholesky factor with a tiny diagonal shift; rejects clearly non-PSD input."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    smallest = float(np.linalg.eigvalsh(C)[0])
    if smallest < -1e-8:
        raise ValidationError(
            f"not a correlation matrix: smallest eigenvalue {smallest:.3e} < -1e-8"
        )
    shift = 1e-12
    while shift <= 1e-7:
        try:
            L = np.linalg.cholesky(C + shift * np.eye(C.shape[0]))
            L.setflags(write=False)
            return L
        except np.linalg.LinAlgError:
            shift *= 10.0
    raise ValidationError("correlation matrix could not be factorized")


def build_block_correlation(rho: float, rho_o: float, regions: int, labels=None) -> FactorModel:
    """Block correlation: economy and transition anti-correlated at rho,
    regional physical factors equicorrelated at rho_o, blocks independent."""
    if regions < 1:
        raise ValidationError(f"need at least one region, got {regions}")
    if not 0.0 <= rho < 1.0 or not 0.0 <= rho_o < 1.0:
        raise ValidationError("rho and rho_o must lie in [0,1)")
    d = 2 + regions
    C = np.eye(d)
    C[0, 1] = C[1, 0] = -rho
    C[2:, 2:] = rho_o + (1.0 - rho_o) * np.eye(regions)
    if labels is None:
        labels = ("economic", "transition") + tuple(f"physical_{r+1}" for r in range(regions))
    return FactorModel(correlation=C, labels=tuple(labels))


def sample_factors(model: FactorModel, horizon: int, n_paths: int, seed: int) -> np.ndarray:
    """Draw n_paths trajectories of T i.i.d. N(0, C) factor vectors.

    Deterministic given the seed: paths are generated in fixed-size chunks,
    each from its own counter-based substream, so the k-th trajectory does
    not depend on n_paths or on how chunks are dispatched to workers.
    """
    if n_paths < 1:
        raise ValidationError(f"n_paths must be >= 1, got {n_paths}")
    out = np.empty((n_paths, horizon, model.dim))
    chol_t = model.cholesky.T
    for c, start in enumerate(range(0, n_paths, CHUNK_SIZE)):
        stop = min(start + CHUNK_SIZE, n_paths)
        gen = chunk_generator(seed, c)
        eta = gen.standard_normal((stop - start, horizon, model.dim))
        out[start:stop] = eta @ chol_t
    return out


@dataclass(frozen=True)
class MacroTrajectory:
    """Per-period intensity of each systematic factor, in common relative units.

    Column 0 is the economy-wide factor and must be constant in time; the
    climate columns carry the scenario. Only the ratios intensity_t /
    intensity_1 enter the proposed calibration.
    """

    intensities: np.ndarray  # (T, d)

    def __post_init__(self):
        z = np.ascontiguousarray(self.intensities, dtype=float)
        if z.ndim != 2 or z.shape[0] < 1:
            raise ValidationError("macro trajectory must be a (T, d) array")
        if not np.all(np.isfinite(z)):
            raise ValidationError("macro intensities must be finite")
        if np.max(np.abs(z[:, 0] - z[0, 0])) > 0:
            raise ValidationError("economic intensity (column 0) must be constant in time")
        z.setflags(write=False)
        object.__setattr__(self, "intensities", z)

    @property
    def horizon(self) -> int:
        return self.intensities.shape[0]

    @property
    def dim(self) -> int:
        return self.intensities.shape[1]


@dataclass(frozen=True)
class MicroAdjustments:
    """Relative exposure of each (group, rating) cell to each factor per period."""

    values: np.ndarray  # (G, K-1, T, d)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 4:
            raise ValidationError("micro adjustments must be a (G, K-1, T, d) array")
        if not np.all(np.isfinite(v)):
            raise ValidationError("micro adjustments must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class LoadingSchedule:
    """Calibrated factor loadings, asset correlations and per-period matrices."""

    approach: str
    loadings: np.ndarray  # (G, K-1, T, d)
    correlations: np.ndarray  # (G, K-1, T) = a.C.a
    matrices: np.ndarray  # (G, T, K, K) unconditional matrices per period
    groups: tuple = ()

    @property
    def horizon(self) -> int:
        return self.loadings.shape[2]

    @property
    def num_ratings(self) -> int:
        return self.loadings.shape[1] + 1


def _quad_form(vecs: np.ndarray, C: np.ndarray) -> np.ndarray:
    """v.C.v along the last axis."""
    return np.einsum("...d,de,...e->...", vecs, C, vecs)


def _raw_loadings(macro: MacroTrajectory, micro: MicroAdjustments, model: FactorModel):
    if micro.values.shape[2] != macro.horizon or micro.values.shape[3] != macro.dim:
        raise ValidationError(
            f"micro adjustments {micro.values.shape} do not match macro trajectory "
            f"({macro.horizon}, {macro.dim})"
        )
    if macro.dim != model.dim:
        raise ValidationError("macro trajectory dimension does not match the factor model")
    return micro.values * macro.intensities[None, None, :, :]


def _regulatory_anchor(matrices_reg, model: FactorModel, raw, basel3: bool):
    """Per-(group, rating) regulatory correlation and t=1 loadings."""
    mats = np.stack([m.entries for m in matrices_reg])
    G, K = mats.shape[0], mats.shape[1]
    if raw.shape[0] != G or raw.shape[1] != K - 1:
        raise ValidationError(
            f"micro adjustments {raw.shape[:2]} do not match {G} groups x {K - 1} ratings"
        )
    pd_reg = mats[:, : K - 1, K - 1]
    r_reg = regulatory_correlation(pd_reg, basel3=basel3)
    q1 = _quad_form(raw[:, :, 0, :], model.correlation)  # (G, K-1)
    if np.any(q1 <= 0):
        g, i = np.argwhere(q1 <= 0)[0]
        raise CalibrationError(
            f"degenerate loadings: macro x micro vanishes at t=1 for group index {g}, rating {i + 1}"
        )
    a_reg = np.sqrt(r_reg)[:, :, None] * raw[:, :, 0, :] / np.sqrt(q1)[:, :, None]
    return mats, r_reg, a_reg


def _check_saturation(correlations: np.ndarray, approach: str):
    if np.any(correlations >= 1.0 - 1e-10):
        raise CalibrationError(f"approach {approach}: asset correlation reached 1")


def loadings_t1(
    macro: MacroTrajectory,
    micro: MicroAdjustments,
    matrices_reg,
    model: FactorModel,
    basel3: bool = False,
    groups=(),
) -> LoadingSchedule:
    """Approach T1: rescale raw loadings so a.C.a stays at the regulatory value."""
    raw = _raw_loadings(macro, micro, model)
    mats, r_reg, _ = _regulatory_anchor(matrices_reg, model, raw, basel3)
    T = macro.horizon
    q = _quad_form(raw, model.correlation)  # (G, K-1, T)
    if np.any(q <= 0):
        g, i, t = np.argwhere(q <= 0)[0]
        raise CalibrationError(
            f"degenerate loadings: macro x micro vanishes for group index {g}, rating {i + 1}, t={t + 1}"
        )
    loadings = np.sqrt(r_reg)[:, :, None, None] * raw / np.sqrt(q)[:, :, :, None]
    correlations = np.broadcast_to(r_reg[:, :, None], q.shape).copy()
    _check_saturation(correlations, "t1")
    matrices = np.broadcast_to(mats[:, None, :, :], (mats.shape[0], T) + mats.shape[1:]).copy()
    return LoadingSchedule(
        approach="t1", loadings=loadings, correlations=correlations, matrices=matrices,
        groups=tuple(groups),
    )


def loadings_t2(
    macro: MacroTrajectory,
    micro: MicroAdjustments,
    matrices_reg,
    model: FactorModel,
    basel3: bool = False,
    groups=(),
) -> LoadingSchedule:
    """Approach T2: correlation drifts with intensity, matrices stay regulatory."""
    raw = _raw_loadings(macro, micro, model)
    mats, r_reg, _ = _regulatory_anchor(matrices_reg, model, raw, basel3)
    T = macro.horizon
    q = _quad_form(raw, model.correlation)  # (G, K-1, T)
    if np.any(q <= 0):
        g, i, t = np.argwhere(q <= 0)[0]
        raise CalibrationError(
            f"degenerate loadings: macro x micro vanishes for group index {g}, rating {i + 1}, t={t + 1}"
        )
    q1 = q[:, :, 0]
    denom = q * r_reg[:, :, None] + (q1 * (1.0 - r_reg))[:, :, None]
    if np.any(denom <= 0):
        raise CalibrationError("approach t2: non-positive variance denominator")
    correlations = q * r_reg[:, :, None] / denom
    loadings = np.sqrt(r_reg)[:, :, None, None] * raw / np.sqrt(denom)[:, :, :, None]
    _check_saturation(correlations, "t2")
    matrices = np.broadcast_to(mats[:, None, :, :], (mats.shape[0], T) + mats.shape[1:]).copy()
    return LoadingSchedule(
        approach="t2", loadings=loadings, correlations=correlations, matrices=matrices,
        groups=tuple(groups),
    )


def loadings_proposed(
    macro: MacroTrajectory,
    micro: MicroAdjustments,
    matrices_reg,
    model: FactorModel,
    basel3: bool = False,
    groups=(),
) -> LoadingSchedule:
    """Proposed approach: stationary idiosyncratic/economic risk, so climate
    intensity growth raises both the asset correlation and the unconditional
    default probabilities via rescaled thresholds."""
    raw = _raw_loadings(macro, micro, model)
    mats, r_reg, a_reg = _regulatory_anchor(matrices_reg, model, raw, basel3)
    G, Km1, T, d = raw.shape
    K = Km1 + 1

    raw1 = raw[:, :, 0, :][:, :, None, :]  # (G, K-1, 1, d)
    never_used = np.all(raw == 0.0, axis=2)[:, :, None, :]  # (G, K-1, 1, d)
    bad = (raw1 == 0.0) & ~never_used
    if np.any(bad):
        g, i, _, j = np.argwhere(bad)[0]
        raise CalibrationError(
            f"factor {j} has zero intensity x adjustment at t=1 but is used later "
            f"(group index {g}, rating {i + 1}); the t=1 anchor leaves its loading undefined"
        )
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(raw1 != 0.0, raw / raw1, 0.0)
    adjusted = a_reg[:, :, None, :] * ratio  # c_{g,i,t,j}

    qc = _quad_form(adjusted, model.correlation)  # (G, K-1, T)
    var = 1.0 + qc - r_reg[:, :, None]
    if np.any(var <= 0):
        raise CalibrationError("proposed approach: non-positive stressed asset variance")
    correlations = qc / var
    loadings = adjusted / np.sqrt(var)[:, :, :, None]
    _check_saturation(correlations, "proposed")

    z_reg = np.stack([thresholds(m).z for m in matrices_reg])  # (G, K, K)
    matrices = np.empty((G, T, K, K))
    scale = np.sqrt(var)  # (G, K-1, T)
    for g in range(G):
        for t in range(T):
            z = z_reg[g].copy()
            z[: K - 1] /= scale[g, :, t][:, None]
            matrices[g, t] = matrix_from_thresholds(z).entries
    return LoadingSchedule(
        approach="proposed", loadings=loadings, correlations=correlations, matrices=matrices,
        groups=tuple(groups),
    )


_LOADING_BUILDERS = {
    "t1": loadings_t1,
    "t2": loadings_t2,
    "proposed": loadings_proposed,
}


def build_schedule(approach: str, *args, **kwargs) -> LoadingSchedule:
    """Dispatch to the named calibration approach."""
    try:
        builder = _LOADING_BUILDERS[approach]
    except KeyError:
        raise ValidationError(f"unknown approach {approach!r}; choose from {APPROACHES}") from None
    return builder(*args, **kwargs)
