"""
Experiment harness: JSON configuration, seeded execution and artifacts.

A run writes `results.csv` (plus kind-specific CSVs) and `summary.json` into
its output directory. Every CSV opens with `# key=value` lines carrying the
master seed, the package version and the SHA-256 of the canonical config,
so identical (config, seed) pairs give byte-identical CSV files.
"""

import csv
import dataclasses
import hashlib
import json
import logging
import math
import statistics
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np
import psutil

from . import __version__
from .block_selection import (
    ChoiceLaw,
    selection_experiment,
    smallest_order,
    steered_line_sampler,
    trajectory_rows,
)
from .colored_branching import (
    ColorStructureLaw,
    cantor_filter,
    color_expectation,
    evolve_histogram,
    spectrum_filter,
    total_offspring_law,
)
from .errors import ConfigError
from .fractal_dimension import (
    ThetaMetric,
    basin_dimension,
    billingsley_entropy,
    bowen_root,
    covering_dimension_profile,
    limit_set_empty,
    moran_root,
)
from .galton_watson import (
    OffspringCountLaw,
    extinction_frequency,
    iterate_generating_function,
    mean_offspring,
    solve_extinction,
)
from .mcmillan import (
    certify_radii,
    colored_mcmillan_experiment,
    mcmillan_rate,
)
from .measures import FuncVec, MeasureVec, TVNeighborhood
from .rate_functions import (
    classify_functional,
    kullback_action,
    legendre_divergence_witness,
    legendre_sup_estimate,
    optimal_tilt,
    shannon_entropy,
    young_gap,
)
from .streams import default_workers, run_trials, trial_rng

logger = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("rate", "ldp", "mcmillan", "dimension", "block", "gw")
# Fields each experiment kind cannot run without
REQUIRED_FIELDS = {
    "rate": ("nu", "mu"),
    "ldp": ("nu", "mu", "radii", "depths"),
    "mcmillan": ("nu", "radii", "depths"),
    "dimension": ("law", "theta", "depths"),
    "block": ("law", "nu", "radii", "order"),
    "gw": ("depths",),
}
KNOWN_FIELDS = {
    "experiment", "colors", "offspring", "law", "nu", "mu", "theta", "radii", "depths",
    "trials", "seed", "epsilon", "order", "orders", "threshold", "half_width", "subset",
    "blocks", "boost_floor",
}
# Probabilities read from text may carry rounding; they are renormalized after this check
CONFIG_PROBABILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment description; vectors share the dimension `colors`."""

    experiment: str
    colors: int
    raw: dict
    config_hash: str
    law: object = None
    offspring: object = None
    nu: object = None
    mu: object = None
    theta: object = None
    radii: tuple = (0.1,)
    depths: tuple = (10,)
    trials: int = 1
    seed: int = 0
    epsilon: float = 0.1
    order: object = None
    orders: tuple = (4, 8, 16, 32)
    threshold: object = None
    half_width: object = None
    subset: object = None
    blocks: int = 1
    boost_floor: object = None


def config_hash(raw):
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class _Violations:
    """Collects (field, message) pairs while a config is checked."""

    def __init__(self):
        self.items = []

    def add(self, name, message):
        self.items.append((name, message))

    def raise_if_any(self):
        if self.items:
            raise ConfigError(self.items)


def _number_list(raw, name, problems):
    values = raw[name]
    if not isinstance(values, list) or not values:
        problems.add(name, "must be a nonempty list of numbers")
        return None
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        problems.add(name, "entries must be numbers")
        return None
    if not all(math.isfinite(v) for v in values):
        problems.add(name, "entries must be finite")
        return None
    return [float(v) for v in values]


def _positive_int(raw, name, problems, default):
    value = raw.get(name, default)
    if value is None:
        return None
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        problems.add(name, f"must be an integer >= 1, got {value!r}")
        return default
    return value


def _vector_length(raw):
    for name in ("nu", "mu", "theta"):
        if isinstance(raw.get(name), list) and raw[name]:
            return len(raw[name])
    law = raw.get("law")
    if isinstance(law, list) and law and isinstance(law[0], dict):
        structure = law[0].get("structure")
        if isinstance(structure, list):
            return len(structure)
    return None


def _parse_law(raw, colors, problems):
    entries = raw["law"]
    if not isinstance(entries, list) or not entries:
        problems.add("law", "must be a nonempty list of {structure, p} entries")
        return None
    atoms, ps = [], []
    for index, entry in enumerate(entries):
        where = f"law[{index}]"
        if not isinstance(entry, dict) or "structure" not in entry or "p" not in entry:
            problems.add(where, "needs keys 'structure' and 'p'")
            return None
        structure, p = entry["structure"], entry["p"]
        if not isinstance(structure, list) or not all(isinstance(k, int) and k >= 0 for k in structure):
            problems.add(where, "structure must be a list of nonnegative integers")
            return None
        if len(structure) != colors:
            problems.add(where, f"structure has {len(structure)} colors, expected {colors}")
            return None
        if not isinstance(p, (int, float)) or p < 0:
            problems.add(where, f"probability must be a nonnegative number, got {p!r}")
            return None
        atoms.append(structure)
        ps.append(float(p))
    total = sum(ps)
    if abs(total - 1.0) > CONFIG_PROBABILITY_TOL:
        problems.add("law", f"probabilities sum to {total:.12g}, expected 1")
        return None
    return ColorStructureLaw(atoms, np.array(ps) / total)


def _parse_offspring(raw, problems):
    mapping = raw["offspring"]
    if not isinstance(mapping, dict) or not mapping:
        problems.add("offspring", "must be a nonempty mapping {k: p}")
        return None
    try:
        items = {int(k): float(p) for k, p in mapping.items()}
    except (TypeError, ValueError):
        problems.add("offspring", "keys must be integers and values numbers")
        return None
    if any(k < 0 for k in items) or any(p < 0 for p in items.values()):
        problems.add("offspring", "counts and probabilities must be nonnegative")
        return None
    total = sum(items.values())
    if abs(total - 1.0) > CONFIG_PROBABILITY_TOL:
        problems.add("offspring", f"probabilities sum to {total:.12g}, expected 1")
        return None
    return OffspringCountLaw.from_mapping({k: p / total for k, p in items.items()})


def _parse_vectors(raw, colors, kind, problems):
    parsed = {}
    for name in ("nu", "mu", "theta"):
        if name not in raw:
            continue
        values = _number_list(raw, name, problems)
        if values is None:
            continue
        if len(values) != colors:
            problems.add(name, f"has {len(values)} entries, expected {colors}")
            continue
        if name == "theta":
            if any(not 0 < v < 1 for v in values):
                problems.add("theta", "theta(i) in (0,1) required")
                continue
            parsed[name] = ThetaMetric(values)
        elif name == "nu" and kind == "rate":
            parsed[name] = FuncVec(values)
        elif any(v < 0 for v in values):
            problems.add(name, "entries must be nonnegative")
        elif name == "nu" and abs(sum(values) - 1.0) > CONFIG_PROBABILITY_TOL:
            problems.add("nu", f"must be a probability vector, sums to {sum(values):.12g}")
        elif name == "nu":
            parsed[name] = MeasureVec(np.array(values) / sum(values))
        else:
            parsed[name] = MeasureVec(values)
    return parsed


def validate_config(raw_text):
    """Parse JSON text into an ExperimentConfig or raise ConfigError with every violation."""
    try:
        raw = json.loads(raw_text)
    except json.JSONDecodeError as e:
        raise ConfigError([("json", f"line {e.lineno} column {e.colno}: {e.msg}")]) from e
    if not isinstance(raw, dict):
        raise ConfigError([("json", "top level must be an object")])

    problems = _Violations()
    kind = raw.get("experiment")
    if kind not in EXPERIMENT_KINDS:
        problems.add("experiment", f"must be one of {', '.join(EXPERIMENT_KINDS)}, got {kind!r}")
        problems.raise_if_any()
    for name in sorted(set(raw) - KNOWN_FIELDS):
        problems.add(name, "unknown field")
    for name in REQUIRED_FIELDS[kind]:
        if name not in raw:
            problems.add(name, f"required for experiment '{kind}'")
    if kind == "gw" and "offspring" not in raw and "law" not in raw:
        problems.add("offspring", "required for experiment 'gw' (or give a colored 'law')")
    problems.raise_if_any()

    colors = raw.get("colors", _vector_length(raw) or 1)
    if not isinstance(colors, int) or isinstance(colors, bool) or colors < 1:
        problems.add("colors", f"must be an integer >= 1, got {colors!r}")
        problems.raise_if_any()

    values = _parse_vectors(raw, colors, kind, problems)
    if "law" in raw:
        values["law"] = _parse_law(raw, colors, problems)
    if "offspring" in raw:
        values["offspring"] = _parse_offspring(raw, problems)
    for name in ("radii", "epsilon", "half_width"):
        if name not in raw:
            continue
        numbers = _number_list({name: raw[name] if name == "radii" else [raw[name]]}, name, problems)
        if numbers is None:
            continue
        if any(v <= 0 for v in numbers):
            problems.add(name, "must be positive")
        elif name == "radii":
            values[name] = tuple(numbers)
        else:
            values[name] = numbers[0]
    for name in ("depths", "orders"):
        if name not in raw:
            continue
        entries = raw[name]
        if not isinstance(entries, list) or not entries or not all(
            isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in entries
        ):
            problems.add(name, "must be a nonempty list of integers >= 1")
        else:
            values[name] = tuple(sorted(set(entries)))
    for name in ("trials", "order", "threshold", "blocks", "boost_floor"):
        if name in raw:
            values[name] = _positive_int(raw, name, problems, None)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.add("seed", f"must be a nonnegative integer, got {seed!r}")
    else:
        values["seed"] = seed
    if "subset" in raw:
        subset = raw["subset"]
        if not isinstance(subset, list) or not subset or not all(
            isinstance(i, int) and 1 <= i <= colors for i in subset
        ):
            problems.add("subset", f"must be a nonempty list of color labels in 1..{colors}")
        else:
            values["subset"] = tuple(sorted(set(subset)))
    if "mu" in values and not values["mu"].total > 0:
        problems.add("mu", "needs positive total mass")
    if values.get("half_width") is not None and "nu" in values and kind == "block":
        try:
            ChoiceLaw(values["nu"], values["half_width"])
        except ValueError as e:
            problems.add("half_width", str(e))
    problems.raise_if_any()

    return ExperimentConfig(
        experiment=kind,
        colors=colors,
        raw=raw,
        config_hash=config_hash(raw),
        **{k: v for k, v in values.items() if v is not None},
    )


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError([("path", f"cannot read {path}: {e.strerror}")]) from e
    return validate_config(text)


def _cell(value):
    if isinstance(value, bool) or value is None:
        return "" if value is None else str(value).lower()
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return str(value)
        return float(format(value, ".12g"))
    if isinstance(value, np.integer):
        return int(value)
    return value


def _median(values):
    values = [v for v in values if v is not None and not math.isnan(v)]
    return statistics.median(values) if values else None


def _dimension_trial(law, theta, depths, master_seed, keep, trial):
    history = evolve_histogram(law, max(depths), trial_rng(master_seed, trial), line_limit=None)
    wanted = [h for h in history if h.depth in set(depths)]
    return covering_dimension_profile(wanted, theta, keep=keep)


class ExperimentRunner:
    """Runs one validated configuration and writes its artifacts."""

    RESULTS_FILE = "results.csv"
    SUMMARY_FILE = "summary.json"
    LOG_FILE = "run.log"

    def __init__(self, config, out_dir, threads=1):
        self.config = config
        self.out_dir = Path(out_dir)
        self.threads = default_workers() if threads is None else threads
        self.artifacts = []

    @property
    def metadata(self):
        return {"seed": self.config.seed, "version": __version__, "config_hash": self.config.config_hash}

    def write_csv(self, name, header, rows):
        path = self.out_dir / name
        with open(path, "w", newline="", encoding="utf-8") as handle:
            for key, value in self.metadata.items():
                handle.write(f"# {key}={value}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([_cell(v) for v in row] for row in rows)
        self.artifacts.append(name)
        logger.info(f"Wrote {len(rows)} rows to {path}")

    def write_summary(self, results):
        summary = {
            "experiment": self.config.experiment,
            **self.metadata,
            "trials": self.config.trials,
            "threads": self.threads,
            "host": {
                "physical_cores": psutil.cpu_count(logical=False),
                "logical_cores": psutil.cpu_count(logical=True),
            },
            "config": self.config.raw,
            "artifacts": self.artifacts + [self.SUMMARY_FILE],
            "results": results,
        }
        path = self.out_dir / self.SUMMARY_FILE
        path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return summary

    def run(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        logger.info(
            f"Starting '{self.config.experiment}' experiment (seed {self.config.seed}, "
            f"{self.config.trials} trials, {self.threads} workers)"
        )
        handler = getattr(self, f"run_{self.config.experiment}")
        results = handler()
        summary = self.write_summary(results)
        logger.info(f"Experiment finished; artifacts in {self.out_dir}")
        return summary

    def run_rate(self):
        config = self.config
        nu, mu = config.nu, config.mu
        kind = classify_functional(nu, mu)
        rho = kullback_action(nu, mu, functional=True)
        results = {"class": kind.value, "rho": rho}
        rows = [["class", kind.value], ["rho", rho]]
        if math.isfinite(rho):
            measure = MeasureVec(nu.values)
            estimate = legendre_sup_estimate(measure, mu)
            gap = young_gap(measure, mu, optimal_tilt(measure, mu))
            results.update({"legendre_estimate": estimate, "young_gap_at_optimum": gap,
                            "entropy": shannon_entropy(measure)})
            rows += [["legendre_estimate", estimate], ["young_gap_at_optimum", gap],
                     ["entropy", results["entropy"]]]
        else:
            witness = legendre_divergence_witness(nu, mu)
            results["divergence_witness"] = witness
            rows += [[f"witness_t{t:g}", v] for t, v in zip((1.0, 10.0, 100.0), witness)]
        if config.theta is not None and math.isfinite(rho):
            measure = MeasureVec(nu.values)
            results["billingsley_entropy"] = billingsley_entropy(measure, config.theta)
            rows.append(["billingsley_entropy", results["billingsley_entropy"]])
        self.write_csv(self.RESULTS_FILE, ["quantity", "value"], rows)
        return results

    def run_ldp(self):
        config = self.config
        epsilon = config.epsilon
        certificates = certify_radii(config.mu, config.nu, epsilon, config.depths, config.radii)
        rows = []
        for certificate in certificates:
            for estimate in certificate.rates:
                rows.append([certificate.radius, estimate.n, estimate.log_rate, estimate.predicted, estimate.gap])
        self.write_csv(self.RESULTS_FILE, ["radius", "n", "log_rate", "predicted", "gap"], rows)
        return {
            "rho": kullback_action(config.nu, config.mu),
            "epsilon": epsilon,
            "certificates": [
                {
                    "radius": c.radius,
                    "upper_holds": c.upper_holds,
                    "lower_threshold": c.lower_threshold,
                    "lower_holds_top_half": c.lower_holds_top_half,
                }
                for c in certificates
            ],
        }

    def run_mcmillan(self):
        config = self.config
        if config.law is None:
            rows = []
            for radius in config.radii:
                for n in config.depths:
                    estimate = mcmillan_rate(config.nu, radius, n)
                    rows.append([radius, n, estimate.log_rate, estimate.predicted, estimate.gap])
            self.write_csv(self.RESULTS_FILE, ["radius", "n", "log_rate", "predicted", "gap"], rows)
            return {"mode": "words", "entropy": shannon_entropy(config.nu),
                    "final_log_rate": rows[-1][2]}

        rows, per_depth = [], []
        for radius in config.radii:
            for n in config.depths:
                result = colored_mcmillan_experiment(
                    config.law, config.nu, radius, n, config.trials, config.seed,
                    threads=self.threads, epsilon=config.epsilon,
                )
                for trial, estimate in enumerate(result.estimates):
                    rows.append([radius, n, trial, estimate.survived, estimate.value,
                                 estimate.log_rate if estimate.survived else None, estimate.predicted])
                per_depth.append({
                    "radius": radius,
                    "n": n,
                    "median_log_rate": result.median_log_rate,
                    "predicted_rate": result.predicted_rate,
                    "survival_frequency": result.survival_frequency,
                    "predicted_survival": result.predicted_survival,
                    "lower_bound_applicable": result.lower_bound_applicable,
                    "upper_violation_frequency": result.upper_violation_frequency,
                })
        self.write_csv(
            self.RESULTS_FILE, ["radius", "n", "trial", "survived", "count", "log_rate", "predicted"], rows
        )
        return {"mode": "colored", "depths": per_depth}

    def run_dimension(self):
        config = self.config
        theta = config.theta
        mu = color_expectation(config.law).mu
        results = {"bowen_root": bowen_root(mu, theta)}
        results["limit_set_empty"] = limit_set_empty(results["bowen_root"])
        keep = None
        if config.subset is not None:
            subset = config.subset
            results["moran_root"] = moran_root(theta, subset)
            keep = partial(cantor_filter, subset=subset)
        elif config.nu is not None:
            nbhd = TVNeighborhood(config.nu, config.radii[0])
            results["basin_dimension"] = basin_dimension(config.nu, mu, theta)
            keep = partial(spectrum_filter, nbhd=nbhd)

        trial_fn = partial(_dimension_trial, config.law, theta, tuple(config.depths), config.seed, keep)
        rows, finals = [], []
        for trial, report in enumerate(run_trials(trial_fn, config.trials, self.threads)):
            for entry in report.diagnostics:
                rows.append([trial, entry["n"], entry["estimate"], entry["gap"]])
            finals.append(None if report.empty else report.estimate)
        self.write_csv(self.RESULTS_FILE, ["trial", "n", "estimate", "gap"], rows)
        results.update({
            "estimate": _median(finals),
            "nonempty_trials": sum(f is not None for f in finals),
            "depth": max(config.depths),
        })
        logger.info(f"Covering dimension estimate {results['estimate']} vs Bowen root {results['bowen_root']:.12g}")
        return results

    def run_block(self):
        config = self.config
        radius = config.radii[0]
        result = selection_experiment(
            config.law, config.nu, radius, config.order, config.epsilon, config.blocks,
            config.trials, config.seed, threads=self.threads, boost_floor=config.boost_floor,
            threshold=config.threshold,
        )
        header = ["trial", "ancestors", "survived", "nonempty", "nonempty_subtrials"]
        self.write_csv(self.RESULTS_FILE, header, [[row[h] for h in header] for row in result.rows])
        results = {
            "order": result.order,
            "threshold": result.threshold,
            "nonempty_frequency": result.nonempty_frequency,
            "survival_frequency": result.survival_frequency,
            "predicted_survival": result.predicted_survival,
        }

        if config.raw.get("orders") is not None:
            search_rows = []
            for trial in range(config.trials):
                search = smallest_order(
                    config.law, config.nu, radius, config.epsilon, trial_rng(config.seed, trial),
                    orders=config.orders, blocks=config.blocks,
                )
                search_rows.append([trial, search.order, search.refused_order])
            self.write_csv("orders.csv", ["trial", "smallest_order", "refused_order"], search_rows)
            results["median_smallest_order"] = _median([r[1] for r in search_rows])

        if config.half_width is not None:
            choice = ChoiceLaw(config.nu, config.half_width)
            depth = config.order * max(config.depths) if "depths" in config.raw else config.order * 200
            trajectory, finals = [], []
            for trial in range(config.trials):
                steered = steered_line_sampler(
                    config.law, choice, config.order, depth, trial_rng(config.seed, trial)
                )
                header, rows = trajectory_rows(steered)
                trajectory += [[trial] + row for row in rows]
                finals.append(None if steered.empty else steered.final_tv)
            self.write_csv("trajectories.csv", ["trial"] + header, trajectory)
            results["steered_final_tv"] = _median(finals)
            results["steered_nonempty_trials"] = sum(f is not None for f in finals)
        return results

    def run_gw(self):
        config = self.config
        law = config.offspring if config.offspring is not None else total_offspring_law(config.law)
        solution = solve_extinction(law)
        rows = [[n, iterate_generating_function(law, n, 0.0)] for n in config.depths]
        depth = max(config.depths)
        estimate = extinction_frequency(law, depth, config.trials, config.seed, threads=self.threads)
        self.write_csv(self.RESULTS_FILE, ["n", "extinct_by_n"], rows)
        return {
            "mean_offspring": mean_offspring(law),
            "extinction_probability": solution.probability,
            "degenerate": solution.degenerate,
            "extinction_frequency": estimate.frequency,
            "extinction_stderr": estimate.stderr,
            "depth": depth,
        }


def run_experiment(config, out_dir, seed=None, trials=None, threads=1):
    """Apply CLI overrides, run the experiment and return its summary dict."""
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if trials is not None:
        overrides["trials"] = trials
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return ExperimentRunner(config, out_dir, threads=threads).run()


def report(out_dir):
    """Contents of summary.json in a run directory."""
    path = Path(out_dir) / ExperimentRunner.SUMMARY_FILE
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError([("out", f"no summary in {out_dir}: {e.strerror}")]) from e
    except json.JSONDecodeError as e:
        raise ConfigError([("summary", f"line {e.lineno} column {e.colno}: {e.msg}")]) from e
