"""Command-line entry point: validate inputs, run the pipeline, write reports.

Outputs (report.json, allocation.csv, quantiles.csv, histogram.csv,
manifest.json) all carry the config digest in a header so that every number
is reproducible from the manifest alone. Files are written to a temp name
and renamed, so a failed run never leaves partial outputs.

Exit codes: 0 ok, 2 input/parse error, 3 validation error, 4 calibration
error, 5 simulation/estimator error, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import tempfile
import warnings

import numpy as np

from . import __version__
from ._backend import active_backend
from .allocation import allocate
from .engine import build_report, prepare, reverse_stress, simulate, stressed_quantile
from .errors import (
    CalibrationError,
    EstimatorError,
    InputFormatError,
    SimulationError,
    ValidationError,
)
from .portfolio import herfindahl, load_portfolio
from .scenario import load_scenario

EXIT_INPUT = 2
EXIT_VALIDATION = 3
EXIT_CALIBRATION = 4
EXIT_SIMULATION = 5


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run; hashed into the config digest."""

    portfolio_path: str
    scenario_path: str
    approach: str | None = None
    alphas: tuple = (0.001,)
    n_paths: int = 100_000
    seed: int = 0
    basel3: bool | None = None
    keep_trajectories: bool = False
    subportfolio_key: str = "group_rating"
    capital_cost_rate: float = 0.10
    output_dir: str = "out"
    workers: int = 1
    validate_only: bool = False

    def __post_init__(self):
        if any(not 0.0 < a < 1.0 for a in self.alphas):
            raise ValidationError(f"alphas must lie in (0,1), got {self.alphas}")
        if self.n_paths < 1:
            raise ValidationError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.capital_cost_rate < 0:
            raise ValidationError(f"capital cost rate must be >= 0, got {self.capital_cost_rate}")
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")

    def digest(self) -> str:
        """Hash of everything that determines the numbers.

        Input files enter through their content, and the worker count and
        output location are excluded: neither may influence results.
        """
        payload = dataclasses.asdict(self)
        payload.pop("workers")
        payload.pop("validate_only")
        payload.pop("output_dir")
        payload["portfolio_path"] = _file_digest(self.portfolio_path)
        payload["scenario_path"] = _file_digest(self.scenario_path)
        side = _referenced_migration_file(self.scenario_path)
        if side is not None:
            payload["migration_file"] = _file_digest(side)
        payload["alphas"] = list(self.alphas)
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()[:16]


def _referenced_migration_file(scenario_path: str) -> str | None:
    """Path of the migration side file, if the scenario points to one."""
    try:
        with open(scenario_path) as fh:
            doc = json.load(fh)
        name = doc.get("migration_file")
    except (OSError, ValueError, AttributeError):
        return None
    if not isinstance(name, str):
        return None
    return os.path.join(os.path.dirname(os.path.abspath(scenario_path)), name)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return repr(float(x))


def validate(config: RunConfig) -> list:
    """Run all load-time checks without simulating; returns diagnostic lines."""
    lines = []
    scenario = load_scenario(config.scenario_path)
    lines.append(f"scenario: {len(scenario.matrices)} migration matrices, "
                 f"{scenario.factor_model.dim} factors, horizon {scenario.horizon}")
    for name, mat in sorted(scenario.matrices.items()):
        dev = float(np.max(np.abs(mat.entries.sum(axis=1) - 1.0)))
        lines.append(f"matrix {name}: K={mat.num_ratings}, max row-sum deviation {dev:.2e}")
    smallest = float(np.linalg.eigvalsh(scenario.factor_model.correlation)[0])
    lines.append(f"factor correlation: smallest eigenvalue {smallest:.6e}")

    portfolio = load_portfolio(
        config.portfolio_path, horizon=scenario.horizon, num_ratings=scenario.num_ratings
    )
    lines.append(f"portfolio: {len(portfolio.loans)} loans, {len(portfolio.groups)} groups")
    for t in range(1, portfolio.horizon + 1):
        try:
            lines.append(f"herfindahl t={t}: {herfindahl(portfolio, t):.6f}")
        except ValidationError:
            lines.append(f"herfindahl t={t}: no exposure")

    for alpha in config.alphas:
        recommended = 100.0 / alpha
        if config.n_paths < recommended:
            lines.append(
                f"warning: n_paths {config.n_paths} below recommended {recommended:.0f} "
                f"for alpha={alpha}"
            )
    # full calibration (loadings + recovery) is part of validation
    prepare(
        portfolio,
        scenario,
        approach=config.approach,
        basel3=config.basel3,
        subportfolio_key=config.subportfolio_key,
    )
    lines.append("calibration: ok")
    return lines


def run(config: RunConfig) -> None:
    """Full pipeline: load, calibrate, simulate, allocate, write artifacts."""
    digest = config.digest()
    scenario = load_scenario(config.scenario_path)
    portfolio = load_portfolio(
        config.portfolio_path, horizon=scenario.horizon, num_ratings=scenario.num_ratings
    )
    model = prepare(
        portfolio,
        scenario,
        approach=config.approach,
        basel3=config.basel3,
        subportfolio_key=config.subportfolio_key,
    )
    result = simulate(
        model,
        config.n_paths,
        config.seed,
        keep_trajectories=config.keep_trajectories,
        workers=config.workers,
    )
    report = build_report(model, result, config.alphas, config.capital_cost_rate)
    alloc = allocate(result, min(config.alphas))

    os.makedirs(config.output_dir, exist_ok=True)
    header = f"# config_digest={digest}\n"

    doc = {
        "config_digest": digest,
        "seed": config.seed,
        "n_paths": config.n_paths,
        "backend": result.backend,
        "approach": config.approach or scenario.approach,
        "expected_loss": {
            "total": report.expected_total,
            "per_period": report.expected_per_period.tolist(),
        },
        "stressed_loss": {
            str(a): {
                "total": report.quantile_totals[a],
                "per_period": report.quantile_per_period[a].tolist(),
            }
            for a in config.alphas
        },
        "capital_charge": {
            str(a): report.capital_per_period[a].tolist() for a in config.alphas
        },
        "premium": {
            "capital_cost_rate": report.capital_cost_rate,
            **{str(a): report.premium[a] for a in config.alphas},
        },
        "allocation": {
            "bandwidth": alloc.bandwidth,
            "quantile_used": alloc.quantile_used,
            "subportfolios": list(alloc.labels),
        },
    }
    if config.keep_trajectories:
        doc["reverse_stress"] = {}
        for a in config.alphas:
            rs = reverse_stress(result, stressed_quantile(result, a))
            doc["reverse_stress"][str(a)] = {
                "n_exceeding": rs.n_exceeding,
                "factor_means": rs.means.tolist(),
                "standard_errors": rs.standard_errors.tolist(),
            }
    _atomic_write(
        os.path.join(config.output_dir, "report.json"),
        header + json.dumps(doc, indent=2, sort_keys=True) + "\n",
    )

    rows = [header.rstrip("\n"),
            "subportfolio,principal,rc_expected,s_expected,rc_unexpected,s_unexpected"]
    for p, label in enumerate(alloc.labels):
        rows.append(",".join([
            label, _fmt(alloc.principals[p]),
            _fmt(alloc.rc_expected[p]), _fmt(alloc.s_expected[p]),
            _fmt(alloc.rc_unexpected[p]), _fmt(alloc.s_unexpected[p]),
        ]))
    _atomic_write(os.path.join(config.output_dir, "allocation.csv"), "\n".join(rows) + "\n")

    rows = [header.rstrip("\n"), "period,expected," + ",".join(f"stressed_{a}" for a in config.alphas)]
    for t in range(1, result.horizon + 1):
        cells = [str(t), _fmt(report.expected_per_period[t - 1])]
        cells += [_fmt(report.quantile_per_period[a][t - 1]) for a in config.alphas]
        rows.append(",".join(cells))
    _atomic_write(os.path.join(config.output_dir, "quantiles.csv"), "\n".join(rows) + "\n")

    edges, counts = _histogram(result.totals)
    rows = [header.rstrip("\n"), "bin_left,bin_right,count"]
    for i, count in enumerate(counts):
        rows.append(f"{_fmt(edges[i])},{_fmt(edges[i + 1])},{count}")
    _atomic_write(os.path.join(config.output_dir, "histogram.csv"), "\n".join(rows) + "\n")

    manifest = {
        "config_digest": digest,
        "config": {**dataclasses.asdict(config), "alphas": list(config.alphas)},
        "inputs": {
            "portfolio": _file_digest(config.portfolio_path),
            "scenario": _file_digest(config.scenario_path),
            **(
                {"migrations": _file_digest(side)}
                if (side := _referenced_migration_file(config.scenario_path)) is not None
                else {}
            ),
        },
        "versions": {
            "climcred": __version__,
            "numpy": np.__version__,
            "backend": result.backend,
        },
    }
    _atomic_write(
        os.path.join(config.output_dir, "manifest.json"),
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    )


def _histogram(sample: np.ndarray):
    """Freedman-Diaconis binning; falls back to a single bin for degenerate samples."""
    x = np.asarray(sample, dtype=float)
    q75, q25 = np.percentile(x, [75, 25])
    iqr = q75 - q25
    width = 2.0 * iqr * x.size ** (-1.0 / 3.0)
    span = x.max() - x.min()
    if width <= 0 or span <= 0:
        lo = x.min()
        return np.array([lo, max(lo + 1e-12, x.max())]), np.array([x.size])
    nbins = max(1, int(np.ceil(span / width)))
    counts, edges = np.histogram(x, bins=nbins)
    return edges, counts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="climcred",
        description="Climate-conditioned credit portfolio risk engine",
    )
    parser.add_argument("--portfolio", required=True, help="portfolio CSV file")
    parser.add_argument("--scenario", required=True, help="scenario JSON file")
    parser.add_argument("--approach", choices=("t1", "t2", "proposed"),
                        help="loading calibration approach (default: from the scenario)")
    parser.add_argument("--alpha", action="append", type=float, default=None,
                        help="tail probability; repeatable (default 0.001)")
    parser.add_argument("--paths", type=int, default=100_000, help="Monte Carlo paths")
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument("--basel3", action="store_true", default=None,
                        help="apply the 1.25 multiplier to the regulatory correlation")
    parser.add_argument("--keep-trajectories", action="store_true",
                        help="retain factor paths (enables reverse stress in the report)")
    parser.add_argument("--subportfolio-key", choices=("group_rating", "tag"),
                        default="group_rating")
    parser.add_argument("--capital-cost", type=float, default=0.10,
                        help="capital cost rate used in the premium")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker threads (no effect on results)")
    parser.add_argument("--validate-only", action="store_true",
                        help="run all input checks and exit without simulating")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig(
            portfolio_path=args.portfolio,
            scenario_path=args.scenario,
            approach=args.approach,
            alphas=tuple(args.alpha) if args.alpha else (0.001,),
            n_paths=args.paths,
            seed=args.seed,
            basel3=args.basel3,
            keep_trajectories=args.keep_trajectories,
            subportfolio_key=args.subportfolio_key,
            capital_cost_rate=args.capital_cost,
            output_dir=args.out,
            workers=args.workers,
            validate_only=args.validate_only,
        )
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if config.validate_only:
                for line in validate(config):
                    print(line)
            else:
                run(config)
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
        if not config.validate_only:
            print(f"wrote {config.output_dir}/report.json (backend: {active_backend()})")
        return 0
    except InputFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (SimulationError, EstimatorError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
