"""Command-line entry point.

Subcommands:
  run    -- train one method (optionally over several seeds) and write reports
  grid   -- hyperparameter grid search, one run per cell
  sweep  -- exact-replay budget sweep (CSV + SVG chart)
  xdg    -- task-scenario comparison of each method with vs without gating
  report -- aggregate previously written per-run CSVs into a Markdown summary

Flags mirror the ExperimentConfig fields; a JSON config file with the same
names can be passed via --config (flags given on the command line win).
"""

import argparse
import dataclasses
import json
import os
import sys

from . import data as data_mod
from .cache import cached_run
from .nn import ConfigurationError
from .training import ExperimentConfig, METHODS, run_experiment
from .reporting import (aggregate, run_seeds, reports_to_csv, summary_markdown,
                        grid_search, budget_sweep, budget_sweep_svg,
                        xdg_combination, gating_combination_markdown,
                        reports_from_csv)


def _add_config_flags(p):
    p.add_argument("--protocol", choices=["splitMNIST", "permMNIST"])
    p.add_argument("--scenario", choices=["task", "domain", "class"])
    p.add_argument("--method", choices=list(METHODS))
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, help="number of seeds (seed, seed+1, ...)")
    p.add_argument("--iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--tasks", type=int, dest="n_tasks")
    p.add_argument("--budget", type=int)
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--gamma", type=float)
    p.add_argument("--xdg-pct", type=float, dest="xdg_pct")
    p.add_argument("--temp", type=float, dest="temperature")
    p.add_argument("--exact-variant", choices=["train", "classify", "both"],
                   dest="exact_variant")
    p.add_argument("--xdg-combine", action="store_true", default=None,
                   dest="xdg_combine")
    p.add_argument("--full", action="store_true",
                   help="permMNIST: use the full configuration instead of the desk preset")
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--data-dir", help="directory with the four MNIST IDX files")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--cache", help="report cache directory (or set CL_CACHE_DIR)")
    p.add_argument("--verbose", action="store_true")


# Desk-scale preset for the (otherwise hours-long) permuted protocol; the
# split protocol is cheap enough to always run at its defaults.
DESK_PERM = {"n_tasks": 3, "hidden": 400, "iters": 1000}
DESK_SEEDS = 3
DEFAULT_SEEDS = 20


def build_config(args):
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    if args.config:
        with open(args.config) as f:
            loaded = json.load(f)
        unknown = set(loaded) - fields
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        values.update(loaded)
    for name in fields:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if values.get("protocol") == "permMNIST" and not args.full:
        for k, v in DESK_PERM.items():
            values.setdefault(k, v)
    return ExperimentConfig(**values)


def _seed_list(args):
    base = args.seed if args.seed is not None else 0
    if args.seeds is not None:
        n = args.seeds
    elif args.seed is not None:
        n = 1
    else:
        n = DESK_SEEDS if (args.protocol == "permMNIST" and not args.full) else DEFAULT_SEEDS
    return list(range(base, base + n))


def _runner(args):
    if args.cache:
        os.environ["CL_CACHE_DIR"] = args.cache
    return cached_run


def cmd_run(args):
    cfg = build_config(args)
    seeds = _seed_list(args)
    dataset = data_mod.load_mnist(args.data_dir)
    reports = run_seeds(cfg, seeds, dataset=dataset, runner=_runner(args),
                        verbose=args.verbose)
    os.makedirs(args.out, exist_ok=True)
    stem = f"{cfg.protocol}_{cfg.scenario}_{cfg.method}" + \
           ("_xdg" if cfg.xdg_combine else "")
    csv_path = os.path.join(args.out, stem + ".csv")
    reports_to_csv(reports, csv_path)
    agg = aggregate(reports)
    print(f"{stem}: mean {100 * agg.mean_acc:.2f}% (± {100 * agg.sem:.2f}) "
          f"over {agg.n_runs} seed(s) -> {csv_path}")


def cmd_grid(args):
    cfg = build_config(args)
    values = json.loads(args.values)
    dataset = data_mod.load_mnist(args.data_dir)
    best, cells, csv_text = grid_search(cfg, values, dataset=dataset,
                                        runner=_runner(args), verbose=args.verbose)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"grid_{cfg.protocol}_{cfg.scenario}_{cfg.method}.csv")
    with open(path, "w") as f:
        f.write(csv_text)
    print(f"best values: {best} -> {path}")


def cmd_sweep(args):
    cfg = build_config(args)
    budgets = [int(b) for b in args.budgets.split(",")]
    variants = args.variants.split(",")
    dataset = data_mod.load_mnist(args.data_dir)
    sweep = budget_sweep(cfg, budgets, variants, _seed_list(args), dataset=dataset,
                         runner=_runner(args), verbose=args.verbose)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, f"sweep_{cfg.protocol}_{cfg.scenario}")
    rows = ["variant,budget,mean_acc,sem"]
    for variant, cells in sweep.items():
        for budget, agg in cells:
            rows.append(f"{variant},{budget},{agg.mean_acc:.6f},{agg.sem:.6f}")
    with open(stem + ".csv", "w") as f:
        f.write("\n".join(rows) + "\n")
    budget_sweep_svg(sweep, path=stem + ".svg")
    print(f"wrote {stem}.csv and {stem}.svg")


def cmd_xdg(args):
    cfg = build_config(args)
    if cfg.scenario != "task":
        raise ConfigurationError("xdg combination requires --scenario task")
    methods = args.methods.split(",")
    dataset = data_mod.load_mnist(args.data_dir)
    pairs = xdg_combination(cfg, methods, _seed_list(args), dataset=dataset,
                            runner=_runner(args), verbose=args.verbose)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"xdg_combination_{cfg.protocol}.md")
    gating_combination_markdown(pairs, path)
    print(f"wrote {path}")


def cmd_samples(args):
    """Train the replay generator over the protocol and dump a sample grid."""
    from .nn import Adam
    from .rng import substream
    from .vae import VAE, train_generator, save_pgm_grid

    cfg = build_config(args).validated()
    dataset = data_mod.load_mnist(args.data_dir)
    if cfg.protocol == "splitMNIST":
        protocol = data_mod.build_split_protocol(dataset)[:cfg.n_tasks]
    else:
        protocol = data_mod.build_permuted_protocol(
            dataset, cfg.n_tasks, substream(cfg.seed, "protocol"))
    n_pixels = protocol[0].train_x.shape[1]
    vae = VAE.create(n_pixels, cfg.hidden, substream(cfg.seed, "generator-init"),
                     n_latent=cfg.n_latent)
    opt = Adam(vae.params, cfg.lr)
    rng_batch = substream(cfg.seed, "minibatch")
    rng_gen = substream(cfg.seed, "generator")
    prev = None
    for k, spec in enumerate(protocol, start=1):
        def sample_inputs(n):
            idx = rng_batch.integers(0, spec.n_train, size=n)
            return spec.transform(spec.train_x[idx])
        train_generator(vae, opt, sample_inputs, prev, k, cfg.iters,
                        cfg.batch_size, rng_gen)
        prev = vae.copy()
        if args.verbose:
            print(f"generator: task {k}/{len(protocol)} done")
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"samples_{cfg.protocol}.pgm")
    save_pgm_grid(vae.sample(args.n, rng_gen), path)
    print(f"wrote {path}")


def cmd_report(args):
    reports = []
    for path in args.csvs:
        with open(path) as f:
            reports.extend(reports_from_csv(f.read()))
    keyed = {}
    for r in reports:
        keyed.setdefault((r.method, r.scenario, r.protocol), []).append(r)
    aggs = []
    for (method, scenario, protocol), group in keyed.items():
        # per-run CSVs carry no fingerprint; group identity comes from the key
        for g in group:
            g.fingerprint = f"{method}/{scenario}/{protocol}/{g.seed}"
        aggs.append(aggregate(group))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "summary.md")
    summary_markdown(aggs, path)
    print(f"wrote {path}")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="clbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and evaluate one method")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_grid = sub.add_parser("grid", help="hyperparameter grid search")
    _add_config_flags(p_grid)
    p_grid.add_argument("--values", required=True,
                        help='JSON mapping of field to value list, e.g. {"lam": [1, 10]}')
    p_grid.set_defaults(func=cmd_grid)

    p_sweep = sub.add_parser("sweep", help="exact-replay budget sweep")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--budgets", default="10,100,500,1000,2000")
    p_sweep.add_argument("--variants", default="train,classify,both")
    p_sweep.set_defaults(func=cmd_sweep)

    p_xdg = sub.add_parser("xdg", help="with/without-gating comparison (task scenario)")
    _add_config_flags(p_xdg)
    p_xdg.add_argument("--methods", default="none,ewc,oewc,si,lwf,dgr,dgrdistill")
    p_xdg.set_defaults(func=cmd_xdg)

    p_smp = sub.add_parser("samples", help="train the generator and dump a PGM sample grid")
    _add_config_flags(p_smp)
    p_smp.add_argument("--n", type=int, default=64, help="number of samples")
    p_smp.set_defaults(func=cmd_samples)

    p_rep = sub.add_parser("report", help="aggregate per-run CSVs into Markdown")
    p_rep.add_argument("csvs", nargs="+")
    p_rep.add_argument("--out", default="results")
    p_rep.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ConfigurationError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
