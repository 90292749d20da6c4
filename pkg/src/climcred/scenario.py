"""Scenario file: factor model, climate intensities, adjustment and recovery
rules, calibration approach, and the per-group migration matrices.

The file is JSON. Factor intensities are a T x d table (one row per period);
adjustment and recovery rules are keyed by (group, rating, time, factor) with
"*" wildcards and are applied in order, later rules overriding earlier ones.
Migration matrices come either inline under "migrations" or from a delimited
side file referenced by "migration_file".
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .errors import InputFormatError, ValidationError
from .factors import APPROACHES, FactorModel, MacroTrajectory, MicroAdjustments, build_block_correlation
from .migration import MigrationMatrix, load_migration_file


@dataclass(frozen=True)
class AdjustmentRule:
    """Micro-correlation adjustment for (group|*, rating|*, time|*, factor)."""

    group: Optional[str]
    rating: Optional[int]
    time: Optional[int]
    factor: str
    value: float


@dataclass(frozen=True)
class RecoveryRule:
    """Recovery parameters for (group|*, rating|*, time|*).

    Exactly one form: ``rate`` (deterministic recovery), or ``mu``/``sigma``
    with either ``coupling`` (b = coupling * asset loadings) or an explicit
    ``loadings`` vector.
    """

    group: Optional[str]
    rating: Optional[int]
    time: Optional[int]
    mu: float = 0.0
    sigma: float = 0.0
    coupling: Optional[float] = None
    loadings: Optional[tuple] = None


@dataclass(frozen=True)
class ScenarioSpec:
    """Parsed scenario: everything the calibration stage needs."""

    factor_model: FactorModel
    macro: MacroTrajectory
    adjustment_rules: tuple
    recovery_rules: tuple
    matrices: dict
    approach: str = "proposed"
    basel3: bool = False
    renewal: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.macro.horizon

    @property
    def num_ratings(self) -> int:
        return next(iter(self.matrices.values())).num_ratings


def _parse_wild(value, kind: str, lineno):
    if value in ("*", None):
        return None
    if kind == "int":
        try:
            return int(value)
        except (TypeError, ValueError):
            raise InputFormatError(f"rule {lineno}: expected integer or '*', got {value!r}") from None
    return str(value)


def _match(rule_value, actual) -> bool:
    return rule_value is None or rule_value == actual


def resolve_adjustments(
    rules, groups, num_ratings: int, horizon: int, factor_labels
) -> MicroAdjustments:
    """Expand adjustment rules to the dense (G, K-1, T, d) tensor."""
    label_index = {lb: j for j, lb in enumerate(factor_labels)}
    G, Km1, T, d = len(groups), num_ratings - 1, horizon, len(factor_labels)
    values = np.zeros((G, Km1, T, d))
    for rule in rules:
        if rule.factor not in label_index:
            raise ValidationError(f"adjustment rule references unknown factor {rule.factor!r}")
        j = label_index[rule.factor]
        gs = range(G) if rule.group is None else [_group_pos(groups, rule.group)]
        is_ = range(Km1) if rule.rating is None else [_rating_pos(rule.rating, num_ratings)]
        ts = range(T) if rule.time is None else [_time_pos(rule.time, horizon)]
        for g in gs:
            for i in is_:
                for t in ts:
                    values[g, i, t, j] = rule.value
    return MicroAdjustments(values=values)


def _group_pos(groups, name: str) -> int:
    try:
        return list(groups).index(name)
    except ValueError:
        raise ValidationError(f"rule references unknown group {name!r}") from None


def _rating_pos(rating: int, num_ratings: int) -> int:
    if not 1 <= rating <= num_ratings - 1:
        raise ValidationError(f"rule rating {rating} outside 1..{num_ratings - 1}")
    return rating - 1


def _time_pos(time: int, horizon: int) -> int:
    if not 1 <= time <= horizon:
        raise ValidationError(f"rule time {time} outside 1..{horizon}")
    return time - 1


def resolve_recovery_arrays(rules, groups, num_ratings: int, horizon: int, dim: int):
    """Expand recovery rules into per-cell parameter arrays.

    Returns (mu, sigma, coupling, explicit, covered): coupling is NaN where an
    explicit loading vector applies, stored in ``explicit``.
    """
    G, Km1, T = len(groups), num_ratings - 1, horizon
    mu = np.zeros((G, Km1, T))
    sigma = np.zeros((G, Km1, T))
    coupling = np.zeros((G, Km1, T))
    explicit = np.zeros((G, Km1, T, dim))
    covered = np.zeros((G, Km1, T), dtype=bool)
    for rule in rules:
        gs = range(G) if rule.group is None else [_group_pos(groups, rule.group)]
        is_ = range(Km1) if rule.rating is None else [_rating_pos(rule.rating, num_ratings)]
        ts = range(T) if rule.time is None else [_time_pos(rule.time, horizon)]
        if rule.loadings is not None and len(rule.loadings) != dim:
            raise ValidationError(
                f"recovery rule loading vector has length {len(rule.loadings)}, expected {dim}"
            )
        for g in gs:
            for i in is_:
                for t in ts:
                    mu[g, i, t] = rule.mu
                    sigma[g, i, t] = rule.sigma
                    if rule.loadings is not None:
                        coupling[g, i, t] = np.nan
                        explicit[g, i, t] = rule.loadings
                    else:
                        coupling[g, i, t] = rule.coupling or 0.0
                        explicit[g, i, t] = 0.0
                    covered[g, i, t] = True
    if not covered.all():
        g, i, t = np.argwhere(~covered)[0]
        raise ValidationError(
            f"recovery parameters missing for group index {g}, rating {i + 1}, t={t + 1}"
        )
    return mu, sigma, coupling, explicit


def _parse_recovery_rule(obj, idx) -> RecoveryRule:
    base = dict(
        group=_parse_wild(obj.get("group", "*"), "str", idx),
        rating=_parse_wild(obj.get("rating", "*"), "int", idx),
        time=_parse_wild(obj.get("time", "*"), "int", idx),
    )
    keys = set(obj) - {"group", "rating", "time"}
    if keys == {"rate"}:
        rate = float(obj["rate"])
        if not 0.0 < rate < 1.0:
            raise InputFormatError(f"recovery rule {idx}: rate must be in (0,1), got {rate}")
        return RecoveryRule(mu=float(ndtri(rate)), sigma=0.0, coupling=0.0, **base)
    if "mu" not in obj or "sigma" not in obj:
        raise InputFormatError(
            f"recovery rule {idx}: need either 'rate' or 'mu'+'sigma' (+ 'coupling' or 'loadings')"
        )
    extra = keys - {"mu", "sigma", "coupling", "loadings"}
    if extra:
        raise InputFormatError(f"recovery rule {idx}: unknown keys {sorted(extra)}")
    if "coupling" in obj and "loadings" in obj:
        raise InputFormatError(f"recovery rule {idx}: give 'coupling' or 'loadings', not both")
    return RecoveryRule(
        mu=float(obj["mu"]),
        sigma=float(obj["sigma"]),
        coupling=float(obj["coupling"]) if "coupling" in obj else (None if "loadings" in obj else 0.0),
        loadings=tuple(float(v) for v in obj["loadings"]) if "loadings" in obj else None,
        **base,
    )


def load_scenario(path) -> ScenarioSpec:
    """Parse a scenario JSON file and its migration matrices."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputFormatError(f"{path}: scenario must be a JSON object")
    known = {
        "factors", "intensities", "adjustments", "recovery",
        "approach", "basel3", "migrations", "migration_file",
    }
    extra = set(doc) - known
    if extra:
        raise InputFormatError(f"{path}: unknown scenario keys {sorted(extra)}")

    fac = doc.get("factors")
    if not isinstance(fac, dict) or "labels" not in fac:
        raise InputFormatError(f"{path}: 'factors' must give at least the factor labels")
    labels = tuple(str(x) for x in fac["labels"])
    corr_spec = fac.get("correlation")
    if corr_spec is None:
        model = FactorModel(correlation=np.eye(len(labels)), labels=labels)
    elif isinstance(corr_spec, dict):
        extra = set(corr_spec) - {"rho", "rho_o", "regions"}
        if extra:
            raise InputFormatError(f"{path}: unknown correlation block keys {sorted(extra)}")
        model = build_block_correlation(
            rho=float(corr_spec["rho"]),
            rho_o=float(corr_spec["rho_o"]),
            regions=int(corr_spec["regions"]),
            labels=labels,
        )
    else:
        model = FactorModel(correlation=np.asarray(corr_spec, dtype=float), labels=labels)

    try:
        macro = MacroTrajectory(intensities=np.asarray(doc["intensities"], dtype=float))
    except KeyError:
        raise InputFormatError(f"{path}: missing 'intensities' table") from None
    if macro.dim != model.dim:
        raise InputFormatError(
            f"{path}: intensities have {macro.dim} columns but there are {model.dim} factors"
        )

    adjustments = []
    for idx, obj in enumerate(doc.get("adjustments", [])):
        extra = set(obj) - {"group", "rating", "time", "factor", "value"}
        if extra:
            raise InputFormatError(f"{path}: adjustment rule {idx}: unknown keys {sorted(extra)}")
        try:
            adjustments.append(
                AdjustmentRule(
                    group=_parse_wild(obj.get("group", "*"), "str", idx),
                    rating=_parse_wild(obj.get("rating", "*"), "int", idx),
                    time=_parse_wild(obj.get("time", "*"), "int", idx),
                    factor=str(obj["factor"]),
                    value=float(obj["value"]),
                )
            )
        except KeyError as exc:
            raise InputFormatError(f"{path}: adjustment rule {idx}: missing {exc}") from None

    recovery_rules = tuple(
        _parse_recovery_rule(obj, idx) for idx, obj in enumerate(doc.get("recovery", []))
    )

    if "migrations" in doc:
        matrices = {}
        for g, m in doc["migrations"].items():
            try:
                matrices[str(g)] = MigrationMatrix(entries=np.asarray(m, dtype=float))
            except ValidationError as exc:
                raise ValidationError(f"group {g!r}: {exc}") from exc
    elif "migration_file" in doc:
        side = os.path.join(os.path.dirname(os.path.abspath(path)), doc["migration_file"])
        matrices = load_migration_file(side)
    else:
        raise InputFormatError(f"{path}: need 'migrations' or 'migration_file'")
    sizes = {m.num_ratings for m in matrices.values()}
    if len(sizes) != 1:
        raise InputFormatError(f"{path}: inconsistent migration matrix sizes {sorted(sizes)}")

    approach = str(doc.get("approach", "proposed")).lower()
    if approach not in APPROACHES:
        raise InputFormatError(f"{path}: unknown approach {approach!r}; choose from {APPROACHES}")

    return ScenarioSpec(
        factor_model=model,
        macro=macro,
        adjustment_rules=tuple(adjustments),
        recovery_rules=recovery_rules,
        matrices=matrices,
        approach=approach,
        basel3=bool(doc.get("basel3", False)),
    )
