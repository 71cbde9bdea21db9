"""Multi-seed aggregation and report emission (CSV, Markdown, SVG), plus the
higher-level drivers: grid search, exact-replay budget sweeps, and the
gating-combination comparison.
"""

import csv
import dataclasses
import io
import itertools
import math
import os
from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError
from .training import ExperimentConfig, RunReport, run_experiment


@dataclass
class AggregateReport:
    protocol: str
    scenario: str
    method: str
    label: str
    n_runs: int
    mean_acc: float
    sem: float
    per_seed: list

    def to_dict(self):
        return dataclasses.asdict(self)


def aggregate(reports, label=None):
    """Mean and SEM (sample stddev / sqrt(n)) of the per-run mean accuracies."""
    if not reports:
        raise ConfigurationError("nothing to aggregate")
    fps = {r.fingerprint for r in reports}
    seeds = [r.seed for r in reports]
    if len(reports) > 1 and (len(fps) != len(reports) or len(set(seeds)) != len(seeds)):
        # identical configs must differ in seed only
        raise ConfigurationError("aggregate expects one run per seed of a single config")
    accs = np.array([r.mean_acc for r in reports])
    sem = float(accs.std(ddof=1) / math.sqrt(len(accs))) if len(accs) > 1 else 0.0
    first = reports[0]
    return AggregateReport(first.protocol, first.scenario, first.method,
                           label or first.method, len(reports),
                           float(accs.mean()), sem, [float(a) for a in accs])


def run_seeds(config, seeds, dataset=None, data_dir=None, runner=None, verbose=False):
    """One run per seed of the same config; ``runner`` may wrap run_experiment
    (e.g. with a cache)."""
    runner = runner or run_experiment
    reports = []
    for s in seeds:
        cfg = dataclasses.replace(config, seed=s)
        reports.append(runner(cfg, dataset=dataset, data_dir=data_dir, verbose=verbose))
    return reports


# --- emission ----------------------------------------------------------------

CSV_FIXED_COLUMNS = ["protocol", "scenario", "method", "seed"]


def reports_to_csv(reports, path=None):
    """Per-run CSV: protocol, scenario, method, seed, per-task accuracies, mean."""
    n_tasks = max(len(r.task_accs) for r in reports)
    header = CSV_FIXED_COLUMNS + [f"acc_task_{i + 1}" for i in range(n_tasks)] + ["mean"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in reports:
        accs = [f"{a:.6f}" for a in r.task_accs]
        accs += [""] * (n_tasks - len(accs))
        writer.writerow([r.protocol, r.scenario, r.method, r.seed] + accs
                        + [f"{r.mean_acc:.6f}"])
    text = buf.getvalue()
    if path:
        with open(path, "w") as f:
            f.write(text)
    return text


def reports_from_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    out = []
    for row in body:
        rec = dict(zip(header, row))
        accs = [float(rec[c]) for c in header if c.startswith("acc_task_") and rec[c] != ""]
        out.append(RunReport(rec["protocol"], rec["scenario"], rec["method"],
                             int(rec["seed"]), accs, float(rec["mean"]), "", 0.0))
    return out


METHOD_GROUPS = [
    ("Baselines", ["none", "offline"]),
    ("Task-specific", ["xdg"]),
    ("Regularization", ["ewc", "oewc", "si"]),
    ("Replay", ["lwf", "dgr", "dgrdistill"]),
    ("Replay + Exemplars", ["icarl"]),
]

METHOD_LABELS = {
    "none": "None", "offline": "Offline", "xdg": "XdG", "ewc": "EWC",
    "oewc": "Online EWC", "si": "SI", "lwf": "LwF", "dgr": "DGR",
    "dgrdistill": "DGR+distill", "icarl": "iCaRL", "exact": "Exact replay",
}

SCENARIO_COLUMNS = [("task", "Task-IL"), ("domain", "Domain-IL"), ("class", "Class-IL")]


def _cell(agg):
    return f"{100 * agg.mean_acc:.2f} (± {100 * agg.sem:.2f})"


def summary_markdown(aggregates, path=None):
    """Methods-by-scenario summary table (rows grouped by approach)."""
    by_key = {(a.method, a.scenario): a for a in aggregates}
    lines = ["| Approach | Method | Task-IL | Domain-IL | Class-IL |",
             "|---|---|---|---|---|"]
    for group, methods in METHOD_GROUPS:
        for m in methods:
            cells = [_cell(by_key[(m, s)]) if (m, s) in by_key else "-"
                     for s, _ in SCENARIO_COLUMNS]
            if all(c == "-" for c in cells):
                continue
            lines.append(f"| {group} | {METHOD_LABELS.get(m, m)} | " + " | ".join(cells) + " |")
    text = "\n".join(lines) + "\n"
    if path:
        with open(path, "w") as f:
            f.write(text)
    return text


def gating_combination_markdown(pairs, path=None):
    """Two-column comparison: task identity in the output layer vs in the
    hidden layers (method combined with gating)."""
    lines = ["| Method | + task-ID in output layer | + task-ID in hidden layers |",
             "|---|---|---|"]
    for method, plain, gated in pairs:
        lines.append(f"| {METHOD_LABELS.get(method, method)} | {_cell(plain)} | {_cell(gated)} |")
    text = "\n".join(lines) + "\n"
    if path:
        with open(path, "w") as f:
            f.write(text)
    return text


def budget_sweep_svg(sweep, reference_lines=None, path=None):
    """Accuracy-vs-budget line chart, one line per exact-replay variant, with
    horizontal reference lines for the non-exemplar methods.

    ``sweep`` maps variant -> list of (budget, AggregateReport).
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, cells in sweep.items():
        budgets = [b for b, _ in cells]
        means = [100 * a.mean_acc for _, a in cells]
        sems = [100 * a.sem for _, a in cells]
        ax.errorbar(budgets, means, yerr=sems, marker="o", label=variant)
    for name, acc in (reference_lines or {}).items():
        ax.axhline(100 * acc, linestyle="--", linewidth=0.8, alpha=0.7)
        ax.annotate(name, (1.0, 100 * acc), xycoords=("axes fraction", "data"),
                    fontsize=7, ha="right", va="bottom")
    ax.set_xscale("log")
    ax.set_xlabel("total stored examples")
    ax.set_ylabel("average test accuracy (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    buf = io.StringIO()
    fig.savefig(buf, format="svg")
    plt.close(fig)
    text = buf.getvalue()
    if path:
        with open(path, "w") as f:
            f.write(text)
    return text


# --- drivers -----------------------------------------------------------------

def grid_search(config, value_lists, dataset=None, data_dir=None, runner=None,
                verbose=False):
    """Run every hyperparameter combination once on the full protocol and pick
    the argmax of test accuracy.

    ``value_lists`` maps config field names to candidate value lists. Returns
    (best values dict, list of (values dict, RunReport), CSV text).
    """
    names = list(value_lists)
    for n in names:
        if not value_lists[n]:
            raise ConfigurationError(f"empty grid for {n}")
    cells = []
    for combo in itertools.product(*(value_lists[n] for n in names)):
        values = dict(zip(names, combo))
        cfg = dataclasses.replace(config, **values)
        report = (runner or run_experiment)(cfg, dataset=dataset, data_dir=data_dir,
                                            verbose=verbose)
        cells.append((values, report))
        if verbose:
            print(f"  grid {values} -> {100 * report.mean_acc:.2f}%")
    best_values, _ = max(cells, key=lambda c: c[1].mean_acc)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names + ["mean_acc"])
    for values, report in cells:
        writer.writerow([values[n] for n in names] + [f"{report.mean_acc:.6f}"])
    return best_values, cells, buf.getvalue()


def budget_sweep(config, budgets, variants, seeds, dataset=None, data_dir=None,
                 runner=None, verbose=False):
    """Exact-replay accuracy per (budget, variant) cell, aggregated over seeds."""
    bad = set(variants) - {"train", "classify", "both"}
    if bad:
        raise ConfigurationError(f"unknown exact-replay variants {sorted(bad)}")
    sweep = {}
    for variant in variants:
        cells = []
        for budget in budgets:
            cfg = dataclasses.replace(config, method="exact", budget=budget,
                                      exact_variant=variant)
            reports = run_seeds(cfg, seeds, dataset=dataset, data_dir=data_dir,
                                runner=runner, verbose=verbose)
            cells.append((budget, aggregate(reports, label=f"exact/{variant}/B={budget}")))
        sweep[variant] = cells
    return sweep


def xdg_combination(config, methods, seeds, dataset=None, data_dir=None,
                    runner=None, verbose=False):
    """Each method with task identity used in the output layer only vs
    combined with per-task hidden gating; task scenario only."""
    if config.scenario != "task":
        raise ConfigurationError("the gating combination applies to the task scenario only")
    pairs = []
    for method in methods:
        plain_cfg = dataclasses.replace(config, method=method, xdg_combine=False)
        gated_cfg = dataclasses.replace(config, method=method, xdg_combine=True)
        plain = aggregate(run_seeds(plain_cfg, seeds, dataset=dataset,
                                    data_dir=data_dir, runner=runner, verbose=verbose))
        gated = aggregate(run_seeds(gated_cfg, seeds, dataset=dataset,
                                    data_dir=data_dir, runner=runner, verbose=verbose),
                          label=f"{method}+xdg")
        pairs.append((method, plain, gated))
    return pairs
