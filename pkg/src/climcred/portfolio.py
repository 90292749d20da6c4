"""Portfolio data model: loans, exposure profiles, aggregation, concentration.

Ratings are 1-based integers 1..K where K is the absorbing default state;
no loan may start in default. Time is a discrete index t = 0..T with unit
one year. All monetary amounts are plain floats (single currency).
"""

from __future__ import annotations

import csv
import re
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import InputFormatError, ValidationError

HERFINDAHL_WARN_THRESHOLD = 0.05


def ead_amortizing(principal: float, maturity: int, rate: float, t: int) -> float:
    """Outstanding balance at time t of an equal-payment amortizing loan.

    Returns principal * ((1+r)^m - (1+r)^t) / ((1+r)^m - 1) for t <= maturity
    and 0 afterwards. rate = 0 is the removable singularity of the formula
    and uses the linear limit principal * (m - t) / m.
    """
    if principal < 0:
        raise ValidationError(f"principal must be >= 0, got {principal}")
    if maturity < 1:
        raise ValidationError(f"maturity must be >= 1, got {maturity}")
    if rate <= -1:
        raise ValidationError(f"rate must be > -1, got {rate}")
    if t < 0:
        raise ValidationError(f"t must be >= 0, got {t}")
    if t > maturity:
        return 0.0
    if rate == 0.0:
        return principal * (maturity - t) / maturity
    growth = (1.0 + rate) ** maturity
    return principal * (growth - (1.0 + rate) ** t) / (growth - 1.0)


@dataclass(frozen=True)
class AmortizingProfile:
    """Equal-payment amortizing exposure: EAD_0 = principal, EAD_t = 0 past maturity."""

    principal: float
    maturity: int
    rate: float

    def ead(self, t: int) -> float:
        return ead_amortizing(self.principal, self.maturity, self.rate, t)


@dataclass(frozen=True)
class ExplicitProfile:
    """Exposure given directly as a vector; zero beyond the last given value."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ValidationError("explicit EAD profile must be a non-empty vector")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValidationError("EAD values must be finite and >= 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def ead(self, t: int) -> float:
        return float(self.values[t]) if 0 <= t < self.values.size else 0.0


ExposureProfile = Union[AmortizingProfile, ExplicitProfile]


@dataclass(frozen=True)
class Loan:
    """A single loan: identity, group membership, initial rating, exposure profile."""

    id: str
    group: str
    initial_rating: int
    profile: ExposureProfile
    tag: Optional[str] = None

    def ead_vector(self, horizon: int) -> np.ndarray:
        """EAD at t = 0..horizon (profiles are truncated at the horizon)."""
        return np.array([self.profile.ead(t) for t in range(horizon + 1)])


@dataclass(frozen=True)
class Portfolio:
    """A loan book over a fixed horizon with K rating levels (K = default)."""

    loans: tuple
    horizon: int
    num_ratings: int
    groups: tuple = field(default=())

    def __post_init__(self):
        if self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")
        if self.num_ratings < 2:
            raise ValidationError(f"need at least 2 rating levels, got {self.num_ratings}")
        loans = tuple(self.loans)
        object.__setattr__(self, "loans", loans)
        if not loans:
            raise ValidationError("portfolio has no loans")
        groups = tuple(self.groups) or tuple(sorted({ln.group for ln in loans}))
        object.__setattr__(self, "groups", groups)
        known = set(groups)
        for ln in loans:
            if ln.group not in known:
                raise ValidationError(f"loan {ln.id!r}: unknown group {ln.group!r}")
            if not 1 <= ln.initial_rating <= self.num_ratings - 1:
                raise ValidationError(
                    f"loan {ln.id!r}: initial rating {ln.initial_rating} outside 1..{self.num_ratings - 1}"
                )

    @property
    def group_index(self) -> dict:
        return {g: k for k, g in enumerate(self.groups)}


@dataclass(frozen=True)
class AggregatedExposure:
    """Exposure totals per (group, initial rating, time), time axis t = 0..T."""

    values: np.ndarray  # (G, K-1, T+1)
    groups: tuple

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=float)
        if np.any(vals < 0):
            raise ValidationError("aggregated exposure must be >= 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "groups", tuple(self.groups))

    @property
    def horizon(self) -> int:
        return self.values.shape[2] - 1

    @property
    def num_ratings(self) -> int:
        return self.values.shape[1] + 1

    def total(self, t: int) -> float:
        return float(self.values[:, :, t].sum())


def aggregate_ead(portfolio: Portfolio) -> AggregatedExposure:
    """Sum loan EAD profiles into the (group, initial rating, time) tensor."""
    G = len(portfolio.groups)
    K = portfolio.num_ratings
    T = portfolio.horizon
    gidx = portfolio.group_index
    values = np.zeros((G, K - 1, T + 1))
    for ln in portfolio.loans:
        values[gidx[ln.group], ln.initial_rating - 1, :] += ln.ead_vector(T)
    return AggregatedExposure(values=values, groups=portfolio.groups)


def herfindahl(portfolio: Portfolio, t: int) -> float:
    """Concentration index sum(EAD^2) / sum(EAD)^2 at time t; in (0, 1]."""
    eads = np.array([ln.profile.ead(t) for ln in portfolio.loans])
    total = eads.sum()
    if total <= 0:
        raise ValidationError(f"no exposure at t={t}; Herfindahl index undefined")
    return float(np.sum(eads**2) / total**2)


def warn_if_concentrated(portfolio: Portfolio, threshold: float = HERFINDAHL_WARN_THRESHOLD) -> dict:
    """Herfindahl per period; warns where the granular-limit assumption is shaky."""
    out = {}
    for t in range(1, portfolio.horizon + 1):
        try:
            h = herfindahl(portfolio, t)
        except ValidationError:
            continue
        out[t] = h
        if h > threshold:
            warnings.warn(
                f"Herfindahl index {h:.4f} at t={t} exceeds {threshold}; "
                "the granular-limit loss formula may be inaccurate",
                stacklevel=2,
            )
    return out


@dataclass(frozen=True)
class SubportfolioPartition:
    """A partition of the book used for loss attribution and risk allocation.

    Exposure inside a (group, rating) cell splits across sub-portfolios
    proportionally to EAD, so the per-cell arrays below are all a simulation
    kernel needs: for cell (g, i), ``counts[g, i]`` sub-portfolios take part,
    the s-th of them is ``index[g, i, s]`` and carries exposure
    ``ead[g, i, s, t]`` at time t (t = 1..T stored at axis position t-1).
    """

    labels: tuple
    principals: np.ndarray  # (P,) initial (t=0) exposure per sub-portfolio
    counts: np.ndarray  # (G, K-1) int32
    index: np.ndarray  # (G, K-1, S) int32
    ead: np.ndarray  # (G, K-1, S, T)

    @property
    def size(self) -> int:
        return len(self.labels)


def build_partition(portfolio: Portfolio, key: str = "group_rating") -> SubportfolioPartition:
    """Partition the book by (group, initial rating) cells or by loan tags."""
    if key not in ("group_rating", "tag"):
        raise ValidationError(f"unknown subportfolio key {key!r}")
    G = len(portfolio.groups)
    K = portfolio.num_ratings
    T = portfolio.horizon
    gidx = portfolio.group_index

    # cell -> {label: ead vector over t=0..T}
    cells: dict = {}
    labels: list = []
    for ln in portfolio.loans:
        if key == "group_rating":
            label = f"{ln.group}:{ln.initial_rating}"
        else:
            if ln.tag is None:
                raise ValidationError(f"loan {ln.id!r} has no tag; cannot partition by tag")
            label = ln.tag
        if label not in labels:
            labels.append(label)
        cell = (gidx[ln.group], ln.initial_rating - 1)
        per = cells.setdefault(cell, {})
        vec = per.setdefault(label, np.zeros(T + 1))
        vec += ln.ead_vector(T)

    labels = tuple(sorted(labels))
    pidx = {lb: p for p, lb in enumerate(labels)}
    smax = max(len(per) for per in cells.values())
    counts = np.zeros((G, K - 1), dtype=np.int32)
    index = np.zeros((G, K - 1, smax), dtype=np.int32)
    ead = np.zeros((G, K - 1, smax, T))
    principals = np.zeros(len(labels))
    for (g, i), per in cells.items():
        for s, (label, vec) in enumerate(sorted(per.items())):
            counts[g, i] += 1
            index[g, i, s] = pidx[label]
            ead[g, i, s, :] = vec[1:]
            principals[pidx[label]] += vec[0]
    return SubportfolioPartition(
        labels=labels, principals=principals, counts=counts, index=index, ead=ead
    )


_FIXED_COLUMNS = {"id", "group", "rating", "tag"}
_AMORT_COLUMNS = {"principal", "maturity", "rate"}
_EAD_RE = re.compile(r"^ead_(\d+)$")


def load_portfolio(path, horizon: int, num_ratings: int) -> Portfolio:
    """Read a portfolio CSV.

    Required columns: id, group, rating. Exposure is given either as
    principal/maturity/rate (amortizing) or as ead_0..ead_T columns
    (explicit). An optional tag column defines custom sub-portfolios.
    Any other column is rejected.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise InputFormatError(f"{path}: empty portfolio file")
        ead_cols = {}
        for col in header:
            m = _EAD_RE.match(col)
            if m:
                ead_cols[int(m.group(1))] = col
            elif col not in _FIXED_COLUMNS | _AMORT_COLUMNS:
                raise InputFormatError(f"{path}: unknown column {col!r}")
        amortizing = _AMORT_COLUMNS.issubset(header)
        if not amortizing and not ead_cols:
            raise InputFormatError(
                f"{path}: need either principal/maturity/rate or ead_0.. columns"
            )
        if amortizing and ead_cols:
            raise InputFormatError(f"{path}: mixed amortizing and explicit EAD columns")
        if ead_cols and sorted(ead_cols) != list(range(max(ead_cols) + 1)):
            raise InputFormatError(f"{path}: ead_* columns must be contiguous from ead_0")

        loans = []
        for row in reader:
            try:
                if amortizing:
                    profile: ExposureProfile = AmortizingProfile(
                        principal=float(row["principal"]),
                        maturity=int(row["maturity"]),
                        rate=float(row["rate"]),
                    )
                else:
                    profile = ExplicitProfile(
                        values=np.array([float(row[ead_cols[t]]) for t in sorted(ead_cols)])
                    )
                loans.append(
                    Loan(
                        id=row["id"],
                        group=row["group"],
                        initial_rating=int(row["rating"]),
                        profile=profile,
                        tag=(row.get("tag") or None),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise InputFormatError(f"{path}: missing field in row {row!r}") from exc
            except ValueError as exc:
                raise InputFormatError(f"{path}: bad value in row {row!r}: {exc}") from exc
    return Portfolio(loans=tuple(loans), horizon=horizon, num_ratings=num_ratings)
