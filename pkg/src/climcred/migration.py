"""Rating migration matrices: Gaussian thresholds, factor conditioning,
scenario stressing, and the balanced-renewal book update.

A migration matrix is row-stochastic with the last rating K an absorbing
default state. Thresholds are the standard-normal quantiles of the row tail
sums; they are genuinely infinite at the boundaries and are represented as
+/-inf so that downstream Phi(+/-inf) = 1/0 holds exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import LoadingSaturationError, CalibrationError, ValidationError

ROW_SUM_REJECT = 1e-6  # beyond this the data is wrong, not just noisy
ROW_SUM_SILENT = 1e-12
SATURATION_CAP = 1e-10


@dataclass(frozen=True)
class MigrationMatrix:
    """Row-stochastic rating transition matrix.

    ``absorbing=False`` marks renewal-adjusted matrices whose last row is a
    reissue profile rather than the default state.
    """

    entries: np.ndarray
    absorbing: bool = True

    def __post_init__(self):
        m = np.ascontiguousarray(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ValidationError(f"migration matrix must be square K>=2, got {m.shape}")
        if np.any(m < -1e-12) or not np.all(np.isfinite(m)):
            raise ValidationError("migration matrix entries must be finite and >= 0")
        m = np.clip(m, 0.0, None)
        sums = m.sum(axis=1)
        dev = np.max(np.abs(sums - 1.0))
        if dev > ROW_SUM_REJECT:
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ValidationError(
                f"row {bad + 1} sums to {sums[bad]:.8f}; deviation {dev:.2e} exceeds {ROW_SUM_REJECT}"
            )
        if dev > ROW_SUM_SILENT:
            warnings.warn(f"renormalizing migration matrix rows (max deviation {dev:.2e})", stacklevel=2)
            m = m / sums[:, None]
        if self.absorbing:
            last = np.zeros(m.shape[0])
            last[-1] = 1.0
            if np.max(np.abs(m[-1] - last)) > 1e-12:
                raise ValidationError("last row must be (0,...,0,1): default is absorbing")
            m[-1] = last
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def num_ratings(self) -> int:
        return self.entries.shape[0]

    def default_probabilities(self) -> np.ndarray:
        """P(rating i -> default) for i = 1..K-1."""
        return self.entries[:-1, -1].copy()


@dataclass(frozen=True)
class ThresholdMatrix:
    """Standard-normal quantiles of row tail sums; entries may be +/-inf."""

    z: np.ndarray

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=float)
        if np.any(np.isnan(z)):
            raise ValidationError("threshold matrix contains NaN")
        if z.ndim != 2 or z.shape[0] != z.shape[1]:
            raise ValidationError(f"threshold matrix must be square, got {z.shape}")
        if not np.all(z[:, 0] == np.inf):
            raise ValidationError("first threshold column must be +inf (full tail)")
        if np.any(z[:, 1:-1] < z[:, 2:]):
            raise ValidationError("threshold rows must be non-increasing")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def num_ratings(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class RenewalPolicy:
    """Balanced-renewal book: a fraction ``turnover`` of the exposure is
    replaced each period by fresh loans with rating mix ``profile``."""

    turnover: float
    profile: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.turnover <= 1.0:
            raise ValidationError(f"turnover must be in [0,1], got {self.turnover}")
        w = np.ascontiguousarray(self.profile, dtype=float)
        if w.ndim != 1 or w.size < 2:
            raise ValidationError("renewal profile must be a K-vector")
        if w[-1] != 0.0:
            raise ValidationError("renewal profile cannot reissue into default")
        if np.any(w < 0) or abs(w[:-1].sum() - 1.0) > 1e-10:
            raise ValidationError("renewal profile must be a distribution over non-default ratings")
        w.setflags(write=False)
        object.__setattr__(self, "profile", w)


def thresholds(matrix: MigrationMatrix) -> ThresholdMatrix:
    """Quantile thresholds z[i,j] = Phi^-1(sum_{j'>=j} M[i,j']).

    z[i,1] = +inf for every row; the absorbing row is +inf throughout.
    """
    m = matrix.entries
    tails = np.cumsum(m[:, ::-1], axis=1)[:, ::-1]
    if np.any(tails > 1.0 + 1e-9) or np.any(tails < -1e-9):
        raise ValidationError("cumulative row sums leave [0,1]; matrix is invalid")
    z = ndtri(np.clip(tails, 0.0, 1.0))
    z[:, 0] = np.inf
    return ThresholdMatrix(z=z)


def matrix_from_thresholds(z: np.ndarray, absorbing: bool = True) -> MigrationMatrix:
    """Rebuild the transition matrix from thresholds: M[i,j] = Phi(z_ij) - Phi(z_ij+1)."""
    z = np.asarray(z, dtype=float)
    K = z.shape[0]
    edges = np.empty((K, K + 1))
    edges[:, :K] = z
    edges[:, K] = -np.inf
    u = ndtr(edges)
    entries = u[:, :-1] - u[:, 1:]
    return MigrationMatrix(entries=np.clip(entries, 0.0, None), absorbing=absorbing)


def _systematic_share(a: np.ndarray, C: np.ndarray) -> float:
    return float(a @ C @ a)


def conditional_migration(
    z: ThresholdMatrix, a: np.ndarray, C: np.ndarray, Z: np.ndarray
) -> MigrationMatrix:
    """Transition matrix conditional on the systematic factor vector Z.

    Entries are Phi((z_ij - a.Z) / sqrt(1 - a.C.a)) differences; the
    absorbing row is preserved because its thresholds are all +inf.
    """
    a = np.asarray(a, dtype=float)
    Z = np.asarray(Z, dtype=float)
    share = _systematic_share(a, C)
    if share >= 1.0 - SATURATION_CAP:
        raise LoadingSaturationError(
            f"systematic variance share a.C.a = {share:.12f} >= 1 - {SATURATION_CAP}"
        )
    shift = float(a @ Z)
    scale = np.sqrt(1.0 - share)
    return matrix_from_thresholds((z.z - shift) / scale)


def conditional_migration_batch(
    z: ThresholdMatrix, a: np.ndarray, C: np.ndarray, Zs: np.ndarray
) -> np.ndarray:
    """Vectorized conditional matrices for many factor draws; returns (n, K, K)."""
    a = np.asarray(a, dtype=float)
    Zs = np.atleast_2d(np.asarray(Zs, dtype=float))
    share = _systematic_share(a, C)
    if share >= 1.0 - SATURATION_CAP:
        raise LoadingSaturationError(f"systematic variance share a.C.a = {share:.12f}")
    shifts = Zs @ a
    scale = np.sqrt(1.0 - share)
    K = z.num_ratings
    edges = np.empty((K, K + 1))
    edges[:, :K] = z.z
    edges[:, K] = -np.inf
    u = ndtr((edges[None, :, :] - shifts[:, None, None]) / scale)
    return u[:, :, :-1] - u[:, :, 1:]


def balanced_renewal(matrix: MigrationMatrix, policy: RenewalPolicy) -> MigrationMatrix:
    """Mix a migration matrix with the renewal profile: (1-k) M + k 1 w^T.

    The result's last row equals the reissue profile (scaled), so the
    absorbing-row invariant is intentionally relaxed.
    """
    k = policy.turnover
    entries = (1.0 - k) * matrix.entries + k * policy.profile[None, :]
    return MigrationMatrix(entries=entries, absorbing=False)


def stressed_migration(
    matrix_reg: MigrationMatrix, c: np.ndarray, a_reg: np.ndarray, C: np.ndarray
) -> MigrationMatrix:
    """Unconditional matrix under climate-adjusted loadings c.

    The asset variance grows from 1 to 1 + c.C.c - a_reg.C.a_reg while the
    default thresholds stay at their regulatory values, so every threshold is
    rescaled by the new standard deviation before the matrix is rebuilt.
    """
    c = np.asarray(c, dtype=float)
    a_reg = np.asarray(a_reg, dtype=float)
    var = 1.0 + _systematic_share(c, C) - _systematic_share(a_reg, C)
    if var <= 0.0:
        raise CalibrationError(
            f"stressed asset variance {var:.6e} is not positive; calibration inconsistent"
        )
    z_reg = thresholds(matrix_reg)
    return matrix_from_thresholds(z_reg.z / np.sqrt(var))


def load_migration_file(path, num_ratings: int | None = None) -> dict:
    """Read per-group migration matrices from delimited text.

    Format: a line ``group,<name>`` introduces each matrix, followed by K
    comma-separated rows of K probabilities. Lines starting with ``#`` are
    comments. Returns {group: MigrationMatrix}.
    """
    from .errors import InputFormatError

    matrices: dict = {}
    current: str | None = None
    rows: list = []

    def _close():
        nonlocal current, rows
        if current is None:
            return
        arr = np.array(rows, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InputFormatError(f"{path}: group {current!r} block is not square ({arr.shape})")
        if num_ratings is not None and arr.shape[0] != num_ratings:
            raise InputFormatError(
                f"{path}: group {current!r} has {arr.shape[0]} ratings, expected {num_ratings}"
            )
        try:
            matrices[current] = MigrationMatrix(entries=arr)
        except ValidationError as exc:
            raise ValidationError(f"group {current!r}: {exc}") from exc
        current, rows = None, []

    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if parts[0] == "group":
                if len(parts) != 2 or not parts[1]:
                    raise InputFormatError(f"{path}:{lineno}: malformed group header {line!r}")
                _close()
                if parts[1] in matrices:
                    raise InputFormatError(f"{path}:{lineno}: duplicate group {parts[1]!r}")
                current = parts[1]
                continue
            if current is None:
                raise InputFormatError(f"{path}:{lineno}: data before any group header")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise InputFormatError(f"{path}:{lineno}: bad row {line!r}: {exc}") from exc
    _close()
    if not matrices:
        raise InputFormatError(f"{path}: no migration matrices found")
    sizes = {m.num_ratings for m in matrices.values()}
    if len(sizes) > 1:
        raise InputFormatError(f"{path}: inconsistent matrix sizes {sorted(sizes)}")
    return matrices
