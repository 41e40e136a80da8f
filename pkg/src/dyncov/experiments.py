"""Simulation sweep harness: run both testing frameworks over a grid.

A plan describes the simulation grid (scenarios, series lengths,
amplitudes, frequencies, replicates), the estimators (window fractions
for the frequentist branch, kernel presets for the Bayesian branch), the
statistics and the frameworks. Each grid cell is an independent job whose
per-replicate records are archived as JSON lines; interrupted sweeps
resume by skipping completed cells, and any aggregate can be rebuilt from
the archive without re-running inference.
"""

import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bayes import StatDistribution, savage_dickey, statistic_samples
from .kernels import preset
from .rng import substream
from .sliding_window import WindowConfig, estimate
from .statistics import STAT_KINDS
from .surrogate import null_statistic_samples, right_tail_p_value
from .timeseries import CovarianceTrajectory, SimSpec, generate
from .wishart import (
    SmcConfig,
    WishartModel,
    posterior_trajectory_stack,
    sample_prior_trajectories,
    smc_infer,
)

__all__ = [
    "ExperimentPlan",
    "MetricTable",
    "Cell",
    "mse",
    "classification_metrics",
    "run_plan",
    "load_records",
    "aggregate_records",
    "report",
]

TABLE_SCHEMA = 1

_COLUMNS = [
    "scenario",
    "n",
    "amplitude",
    "frequency",
    "estimator",
    "statistic",
    "framework",
    "replicates",
    "accuracy",
    "recall",
    "false_positive_rate",
    "inconclusive_fraction",
    "mse_per_sample",
    "mse_of_mean",
    "runtime_seconds",
    "tp",
    "fp",
    "tn",
    "fn",
]


@dataclass(frozen=True)
class ExperimentPlan:
    """Full description of a sweep; serializes to one JSON config file."""

    ns: tuple = (150, 300, 600)
    amplitudes: tuple = (0.2, 0.4, 0.6, 0.8)
    frequencies: tuple = (1, 2, 3, 4, 5)
    scenarios: tuple = ("periodic", "state_switching", "static")
    replicates: int = 40
    window_fractions: tuple = (0.05, 0.10, 0.20)
    kernel_presets: tuple = ("exponential", "periodic", "periodic_exponential", "rq1", "rq2")
    statistics: tuple = STAT_KINDS
    frameworks: tuple = ("frequentist", "bayesian")
    surrogates: int = 1000
    alpha: float = 0.05
    particles: int = 1000
    chains: int = 3
    num_draws: int = 1000
    mse_draws: int = 100
    dynamic_threshold: float = 3.0
    static_threshold: float = -3.0
    seed: int = 0

    def __post_init__(self):
        for name in ("ns", "amplitudes", "frequencies", "scenarios", "window_fractions",
                     "kernel_presets", "statistics", "frameworks"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not self.ns or not self.scenarios:
            raise ValueError("the simulation grid must be nonempty")
        if "periodic" in self.scenarios and (not self.amplitudes or not self.frequencies):
            raise ValueError("periodic scenarios need amplitudes and frequencies")
        unknown = set(self.statistics) - set(STAT_KINDS)
        if unknown:
            raise ValueError(f"unknown statistics {sorted(unknown)}")
        unknown = set(self.frameworks) - {"frequentist", "bayesian"}
        if unknown:
            raise ValueError(f"unknown frameworks {sorted(unknown)}")
        if self.num_draws < 100:
            raise ValueError("num_draws must be at least 100 for density estimation")
        if self.mse_draws < 1:
            raise ValueError("mse_draws must be positive")

    @staticmethod
    def desk(**overrides) -> "ExperimentPlan":
        """Reduced-scale defaults: fewer replicates, surrogates and particles."""
        base = dict(replicates=10, surrogates=199, particles=200)
        base.update(overrides)
        return ExperimentPlan(**base)

    def smc_config(self) -> SmcConfig:
        return SmcConfig(particles=self.particles, chains=self.chains)

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(payload: dict) -> "ExperimentPlan":
        names = {f.name for f in fields(ExperimentPlan)}
        unknown = set(payload) - names
        if unknown:
            raise ValueError(f"unknown plan fields {sorted(unknown)}")
        return ExperimentPlan(**payload)


@dataclass(frozen=True)
class Cell:
    """One simulation condition; the unit of scheduling and checkpointing."""

    scenario: str
    n: int
    amplitude: float | None = None
    frequency: int | None = None

    @property
    def cell_id(self) -> str:
        if self.scenario == "periodic":
            return f"periodic_n{self.n}_A{self.amplitude:g}_f{self.frequency}"
        return f"{self.scenario}_n{self.n}"

    @property
    def truth_dynamic(self) -> bool:
        return self.scenario != "static"

    def sim_spec(self) -> SimSpec:
        if self.scenario == "periodic":
            return SimSpec(
                scenario="periodic",
                n=self.n,
                amplitude=self.amplitude,
                frequency=self.frequency,
            )
        return SimSpec(scenario=self.scenario, n=self.n)


def plan_cells(plan: ExperimentPlan) -> list:
    cells = []
    for scenario in plan.scenarios:
        for n in plan.ns:
            if scenario == "periodic":
                for amplitude in plan.amplitudes:
                    for frequency in plan.frequencies:
                        cells.append(Cell(scenario, n, amplitude, frequency))
            else:
                cells.append(Cell(scenario, n))
    return cells


@dataclass
class MetricTable:
    """Aggregated sweep results, one row per condition/estimator/statistic."""

    rows: list
    schema: int = TABLE_SCHEMA

    def to_json(self) -> dict:
        return {"schema": self.schema, "rows": self.rows}

    @staticmethod
    def from_json(payload: dict) -> "MetricTable":
        if payload.get("schema") != TABLE_SCHEMA:
            raise ValueError(f"unsupported table schema {payload.get('schema')}")
        return MetricTable(rows=list(payload["rows"]))

    def to_csv(self, path) -> None:
        if not self.rows:
            warnings.warn("metric table is empty; writing a header-only CSV", RuntimeWarning)
        with open(path, "w") as fh:
            fh.write(",".join(_COLUMNS) + "\n")
            for row in self.rows:
                fh.write(
                    ",".join(
                        "" if row.get(col) is None else repr(row.get(col))
                        if isinstance(row.get(col), float)
                        else str(row.get(col))
                        for col in _COLUMNS
                    )
                    + "\n"
                )

    def to_long_csv(self, path) -> None:
        """Melted metric-per-line format for plotting tools."""
        metrics = [
            "accuracy",
            "recall",
            "false_positive_rate",
            "inconclusive_fraction",
            "mse_per_sample",
            "mse_of_mean",
        ]
        keys = ["scenario", "n", "amplitude", "frequency", "estimator", "statistic", "framework"]
        with open(path, "w") as fh:
            fh.write(",".join(keys + ["metric", "value"]) + "\n")
            for row in self.rows:
                for metric in metrics:
                    value = row.get(metric)
                    if value is None:
                        continue
                    head = ",".join("" if row[k] is None else str(row[k]) for k in keys)
                    fh.write(f"{head},{metric},{value!r}\n")

    def select(self, **conditions) -> list:
        """Rows whose fields equal every given condition."""
        return [
            row
            for row in self.rows
            if all(row.get(k) == v for k, v in conditions.items())
        ]


def mse(truth: CovarianceTrajectory, estimate) -> dict:
    """Mean squared error of off-diagonal entries against the truth.

    ``estimate`` may be a single trajectory, a list of trajectories or a
    raw (draws, n, d, d) stack. ``per_sample`` averages the error over
    draws before anything else; ``of_mean`` scores the draw-averaged
    trajectory. For a point estimate the two coincide.
    """
    if isinstance(estimate, CovarianceTrajectory):
        stack = estimate.matrices[None]
    elif isinstance(estimate, np.ndarray):
        if estimate.ndim != 4:
            raise ValueError("estimate stack must have shape (draws, n, d, d)")
        stack = estimate
    else:
        trajectories = list(estimate)
        if not trajectories:
            raise ValueError("need at least one estimate")
        stack = np.stack([t.matrices for t in trajectories])
    if stack.shape[1:] != truth.matrices.shape:
        raise ValueError(
            f"shape mismatch: estimate {stack.shape[1:]} vs truth {truth.matrices.shape}"
        )
    ju, ku = np.triu_indices(truth.d, k=1)
    err = stack[:, :, ju, ku] - truth.matrices[:, ju, ku]
    per_sample = float(np.mean(err**2))
    mean_err = stack.mean(axis=0)[:, ju, ku] - truth.matrices[:, ju, ku]
    of_mean = float(np.mean(mean_err**2))
    return {"per_sample": per_sample, "of_mean": of_mean}


def _as_predicted_dynamic(prediction) -> tuple:
    """Normalize a prediction to (is_dynamic, is_inconclusive)."""
    if isinstance(prediction, bool) or isinstance(prediction, np.bool_):
        return bool(prediction), False
    if prediction == "dynamic":
        return True, False
    if prediction == "static":
        return False, False
    if prediction == "inconclusive":
        return False, True
    raise ValueError(f"unrecognized prediction {prediction!r}")


def classification_metrics(outcomes) -> dict:
    """Accuracy, recall and false positive rate from (prediction, truth) pairs.

    Predictions are booleans or labels; inconclusive counts as
    not-dynamic for accuracy and is also reported as a separate fraction.
    Recall is null without dynamic truths, the false positive rate null
    without static truths.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("need at least one outcome")
    tp = fp = tn = fn = inconclusive = 0
    for prediction, truth in outcomes:
        dynamic, inc = _as_predicted_dynamic(prediction)
        inconclusive += inc
        if truth:
            tp += dynamic
            fn += not dynamic
        else:
            fp += dynamic
            tn += not dynamic
    total = len(outcomes)
    return {
        "accuracy": (tp + tn) / total,
        "recall": tp / (tp + fn) if (tp + fn) > 0 else None,
        "false_positive_rate": fp / (fp + tn) if (fp + tn) > 0 else None,
        "inconclusive_fraction": inconclusive / total,
        "tp": tp,
        "fp": fp,
        "tn": tn,
        "fn": fn,
    }


# ---------------------------------------------------------------------------
# cell execution

_PRIOR_CACHE: dict = {}


def _prior_statistics(plan: ExperimentPlan, preset_name: str, n: int) -> dict:
    """Prior statistic samples per kind; cached since they are data-free."""
    key = (plan.seed, preset_name, n, plan.num_draws)
    if key not in _PRIOR_CACHE:
        model = WishartModel(d=2, kernel=preset(preset_name))
        rng = substream(plan.seed, "prior", preset_name, n)
        stack = sample_prior_trajectories(model, np.linspace(0.0, 1.0, n), plan.num_draws, rng)
        _PRIOR_CACHE[key] = {
            kind: statistic_samples(stack, 0, 1, kind) for kind in STAT_KINDS
        }
    return _PRIOR_CACHE[key]


def _run_cell(plan: ExperimentPlan, cell: Cell) -> list:
    records = []
    base = {
        "cell": cell.cell_id,
        "scenario": cell.scenario,
        "n": cell.n,
        "amplitude": cell.amplitude,
        "frequency": cell.frequency,
        "truth_dynamic": cell.truth_dynamic,
    }
    for rep in range(plan.replicates):
        sim_rng = substream(plan.seed, "simulation", cell.cell_id, rep)
        truth, ts = generate(cell.sim_spec(), sim_rng)

        if "frequentist" in plan.frameworks:
            for frac in plan.window_fractions:
                started = time.perf_counter()
                wcfg = WindowConfig(window_fraction=frac)
                est_traj = estimate(ts, wcfg)
                errors = mse(truth, est_traj)
                sur_rng = substream(
                    plan.seed, "surrogates", cell.cell_id, rep, f"w{frac:g}"
                )
                pairs, observed, null = null_statistic_samples(
                    ts, wcfg, plan.surrogates, sur_rng, plan.statistics
                )
                elapsed = time.perf_counter() - started
                for kind in plan.statistics:
                    for e, pair in enumerate(pairs):
                        p = right_tail_p_value(observed[kind][pair], null[kind][:, e])
                        records.append(
                            {
                                **base,
                                "replicate": rep,
                                "framework": "frequentist",
                                "estimator": f"window_{frac:g}",
                                "statistic": kind,
                                "edge": list(pair),
                                "observed": observed[kind][pair],
                                "p_value": p,
                                "log_bf10": None,
                                "label": "dynamic" if p < plan.alpha else "static",
                                "mse_per_sample": errors["per_sample"],
                                "mse_of_mean": errors["of_mean"],
                                "runtime_seconds": elapsed,
                                "converged": True,
                            }
                        )

        if "bayesian" in plan.frameworks:
            for preset_name in plan.kernel_presets:
                started = time.perf_counter()
                model = WishartModel(d=2, kernel=preset(preset_name))
                smc_rng = substream(plan.seed, "smc", cell.cell_id, rep, preset_name)
                ensemble = smc_infer(model, ts, plan.smc_config(), smc_rng)
                draw_rng = substream(plan.seed, "draws", cell.cell_id, rep, preset_name)
                stack = posterior_trajectory_stack(ensemble, plan.num_draws, draw_rng)
                errors = mse(truth, stack[: plan.mse_draws])
                priors = _prior_statistics(plan, preset_name, cell.n)
                elapsed = time.perf_counter() - started
                for kind in plan.statistics:
                    for j, k in truth.edges():
                        evidence = savage_dickey(
                            StatDistribution(priors[kind], source="prior", kind=kind),
                            StatDistribution(
                                statistic_samples(stack, j, k, kind),
                                source="posterior",
                                kind=kind,
                            ),
                            plan.dynamic_threshold,
                            plan.static_threshold,
                        )
                        records.append(
                            {
                                **base,
                                "replicate": rep,
                                "framework": "bayesian",
                                "estimator": f"kernel_{preset_name}",
                                "statistic": kind,
                                "edge": [j, k],
                                "observed": None,
                                "p_value": None,
                                "log_bf10": evidence.log_bf10,
                                "label": evidence.label,
                                "mse_per_sample": errors["per_sample"],
                                "mse_of_mean": errors["of_mean"],
                                "runtime_seconds": elapsed,
                                "converged": ensemble.converged,
                            }
                        )
    return records


def _cell_task(plan_payload: dict, cell_payload: dict):
    # top-level entry point for worker processes
    plan = ExperimentPlan.from_json(plan_payload)
    cell = Cell(**cell_payload)
    return cell.cell_id, _run_cell(plan, cell)


# ---------------------------------------------------------------------------
# sweep driver, archive and aggregation


def _archive_dir(out_dir) -> Path:
    path = Path(out_dir) / "archive"
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_plan(plan: ExperimentPlan, out_dir, workers: int | None = None):
    """Run (or resume) every cell; returns (MetricTable, failures).

    Completed cells are skipped on rerun; failed cells are recorded with
    their reason in failures.jsonl and do not stop the sweep. Worker
    count falls back to the DYNCOV_WORKERS environment variable, then 1.
    Results are deterministic for a fixed plan regardless of the worker
    count because every cell derives its streams from (seed, cell id).
    """
    out = Path(out_dir)
    archive = _archive_dir(out)
    if workers is None:
        workers = int(os.environ.get("DYNCOV_WORKERS", "1"))
    cells = plan_cells(plan)
    (out / "plan.json").write_text(json.dumps(plan.to_json(), indent=2))

    pending = [c for c in cells if not (archive / f"{c.cell_id}.done").exists()]
    failures = []

    def _store(cell_id: str, records: list):
        path = archive / f"{cell_id}.jsonl"
        with open(path, "w") as fh:
            for record in records:
                fh.write(json.dumps(record) + "\n")
        (archive / f"{cell_id}.done").touch()

    if workers > 1 and len(pending) > 1:
        plan_payload = plan.to_json()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_cell_task, plan_payload, asdict(cell)): cell
                for cell in pending
            }
            for future, cell in futures.items():
                try:
                    cell_id, records = future.result()
                    _store(cell_id, records)
                except Exception as exc:  # noqa: BLE001 - cell isolation is the point
                    failures.append({"cell": cell.cell_id, "error": str(exc)})
    else:
        for cell in pending:
            try:
                _store(cell.cell_id, _run_cell(plan, cell))
            except Exception as exc:  # noqa: BLE001
                failures.append({"cell": cell.cell_id, "error": str(exc)})

    if failures:
        with open(out / "failures.jsonl", "w") as fh:
            for failure in failures:
                fh.write(json.dumps(failure) + "\n")

    table = aggregate_records(load_records(plan, out_dir))
    return table, failures


def load_records(plan: ExperimentPlan, out_dir) -> list:
    """All archived per-replicate records for the plan's cells."""
    archive = Path(out_dir) / "archive"
    records = []
    for cell in plan_cells(plan):
        path = archive / f"{cell.cell_id}.jsonl"
        if not path.exists():
            continue
        with open(path) as fh:
            records.extend(json.loads(line) for line in fh if line.strip())
    return records


def aggregate_records(records) -> MetricTable:
    """Reduce per-replicate records to one row per condition."""
    groups: dict = {}
    for record in records:
        key = (
            record["scenario"],
            record["n"],
            record["amplitude"],
            record["frequency"],
            record["estimator"],
            record["statistic"],
            record["framework"],
        )
        groups.setdefault(key, []).append(record)

    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(part) for part in k)):
        scenario, n, amplitude, frequency, estimator, statistic, framework = key
        members = groups[key]
        metrics = classification_metrics(
            [(record["label"], record["truth_dynamic"]) for record in members]
        )
        row = {
            "scenario": scenario,
            "n": n,
            "amplitude": amplitude,
            "frequency": frequency,
            "estimator": estimator,
            "statistic": statistic,
            "framework": framework,
            "replicates": len(members),
            "mse_per_sample": float(np.mean([r["mse_per_sample"] for r in members])),
            "mse_of_mean": float(np.mean([r["mse_of_mean"] for r in members])),
            "runtime_seconds": float(np.sum([r["runtime_seconds"] for r in members])),
        }
        row.update(metrics)
        rows.append(row)
    return MetricTable(rows=rows)


def report(table: MetricTable, out_dir, formats=("csv", "json", "long")) -> list:
    """Write the table in the requested formats; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        path = out / "metrics.csv"
        table.to_csv(path)
        written.append(path)
    if "json" in formats:
        path = out / "metrics.json"
        path.write_text(json.dumps(table.to_json(), indent=2))
        written.append(path)
    if "long" in formats:
        path = out / "metrics_long.csv"
        table.to_long_csv(path)
        written.append(path)
    return written
