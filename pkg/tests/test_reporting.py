import dataclasses
import xml.dom.minidom

import numpy as np
import pytest

from clbench.nn import ConfigurationError
from clbench.training import ExperimentConfig, RunReport
from clbench.reporting import (aggregate, run_seeds, reports_to_csv,
                               reports_from_csv, summary_markdown,
                               gating_combination_markdown, budget_sweep_svg,
                               grid_search, budget_sweep)


def report(seed=0, accs=(0.9, 0.8), method="none", scenario="task",
           protocol="splitMNIST", fp=None):
    accs = list(accs)
    return RunReport(protocol, scenario, method, seed, accs,
                     float(np.mean(accs)), fp or f"fp{seed}", 1.0)


def test_aggregate_single_run_has_zero_sem():
    agg = aggregate([report(accs=(0.5, 0.7))])
    assert agg.mean_acc == pytest.approx(0.6)
    assert agg.sem == 0.0
    assert agg.n_runs == 1


def test_aggregate_mean_and_sem_two_runs():
    r1 = report(seed=0, accs=(0.8, 0.8))
    r2 = report(seed=1, accs=(0.6, 0.6))
    agg = aggregate([r1, r2])
    assert agg.mean_acc == pytest.approx(0.7)
    # sample stddev of [0.8, 0.6] over sqrt(2)
    assert agg.sem == pytest.approx(np.std([0.8, 0.6], ddof=1) / np.sqrt(2))
    assert agg.per_seed == [0.8, 0.6]


def test_aggregate_rejects_duplicate_seeds_or_mixed_configs():
    with pytest.raises(ConfigurationError):
        aggregate([report(seed=0), report(seed=0)])
    with pytest.raises(ConfigurationError):
        aggregate([])
    # same seed twice with different fingerprints is also not a seed family
    with pytest.raises(ConfigurationError):
        aggregate([report(seed=0, fp="a"), report(seed=0, fp="b")])


def test_run_seeds_replaces_seed_only():
    cfg = ExperimentConfig(protocol="splitMNIST", scenario="task", method="none")
    seen = []

    def fake_runner(c, dataset=None, data_dir=None, verbose=False):
        seen.append(c)
        return report(seed=c.seed, fp=c.fingerprint())

    reports = run_seeds(cfg, [3, 4, 5], runner=fake_runner)
    assert [c.seed for c in seen] == [3, 4, 5]
    assert all(dataclasses.replace(c, seed=0) == dataclasses.replace(cfg, seed=0)
               for c in seen)
    agg = aggregate(reports)
    assert agg.n_runs == 3


def test_csv_round_trip():
    reports = [report(seed=s, accs=(0.91, 0.82, 0.73)) for s in range(3)]
    text = reports_to_csv(reports)
    back = reports_from_csv(text)
    assert len(back) == 3
    for a, b in zip(reports, back):
        assert (a.protocol, a.scenario, a.method, a.seed) == \
            (b.protocol, b.scenario, b.method, b.seed)
        np.testing.assert_allclose(a.task_accs, b.task_accs, atol=1e-6)
        assert b.mean_acc == pytest.approx(a.mean_acc, abs=1e-6)
    assert text.splitlines()[0] == \
        "protocol,scenario,method,seed,acc_task_1,acc_task_2,acc_task_3,mean"


def test_csv_pads_unequal_task_counts():
    text = reports_to_csv([report(accs=(0.9, 0.8)),
                           report(seed=1, accs=(0.9, 0.8, 0.7))])
    back = reports_from_csv(text)
    assert len(back[0].task_accs) == 2
    assert len(back[1].task_accs) == 3


def test_summary_markdown_layout():
    aggs = []
    for method in ("none", "ewc"):
        for scenario in ("task", "domain", "class"):
            reps = [report(seed=s, method=method, scenario=scenario,
                           accs=(0.5,), fp=f"{method}{scenario}{s}")
                    for s in range(2)]
            aggs.append(aggregate(reps))
    text = summary_markdown(aggs)
    lines = text.splitlines()
    assert lines[0] == "| Approach | Method | Task-IL | Domain-IL | Class-IL |"
    rows = [l for l in lines[2:] if l]
    assert len(rows) == 2  # one row per method present
    assert any("| EWC |" in r and r.count("50.00") == 3 for r in rows)
    # absent methods are dropped, absent cells dashed
    text2 = summary_markdown([aggregate([report(method="lwf", scenario="class",
                                                accs=(0.25,))])])
    (row,) = [l for l in text2.splitlines()[2:] if l]
    assert row.split("|")[3].strip() == "-"  # no task-scenario cell


def test_gating_markdown():
    plain = aggregate([report(accs=(0.8,))])
    gated = aggregate([report(accs=(0.9,))])
    text = gating_combination_markdown([("ewc", plain, gated)])
    row = text.splitlines()[2]
    assert row.startswith("| EWC |")
    assert "80.00" in row and "90.00" in row


def test_budget_sweep_svg_is_valid_xml(tmp_path):
    cells = [(b, aggregate([report(seed=s, accs=(b / 4000,), fp=f"{b}{s}")
                            for s in range(2)]))
             for b in (10, 100, 1000)]
    svg = budget_sweep_svg({"train": cells}, reference_lines={"LwF": 0.715},
                           path=tmp_path / "sweep.svg")
    dom = xml.dom.minidom.parseString(svg)
    assert dom.documentElement.tagName == "svg"
    assert (tmp_path / "sweep.svg").read_text() == svg


def test_grid_search_runs_every_cell_and_picks_argmax():
    cfg = ExperimentConfig(protocol="splitMNIST", scenario="task", method="ewc")
    calls = []

    def fake_runner(c, dataset=None, data_dir=None, verbose=False):
        calls.append((c.lam, c.gamma))
        acc = 1.0 / (1.0 + abs(np.log10(c.lam) - 2)) * (0.9 if c.gamma < 1 else 1.0)
        return report(accs=(acc,), fp=f"{c.lam}-{c.gamma}")

    best, cells, csv_text = grid_search(
        cfg, {"lam": [1.0, 100.0, 1e4], "gamma": [0.9, 1.0]}, runner=fake_runner)
    assert len(calls) == 6
    assert best == {"lam": 100.0, "gamma": 1.0}
    lines = csv_text.splitlines()
    assert lines[0] == "lam,gamma,mean_acc"
    assert len(lines) == 7


def test_grid_search_rejects_empty_axis():
    cfg = ExperimentConfig(protocol="splitMNIST", scenario="task", method="ewc")
    with pytest.raises(ConfigurationError):
        grid_search(cfg, {"lam": []})


def test_budget_sweep_shapes_and_variant_validation():
    cfg = ExperimentConfig(protocol="splitMNIST", scenario="class", method="exact")

    def fake_runner(c, dataset=None, data_dir=None, verbose=False):
        assert c.method == "exact"
        return report(seed=c.seed, accs=(c.budget / 4000,),
                      fp=f"{c.exact_variant}-{c.budget}-{c.seed}")

    sweep = budget_sweep(cfg, [100, 1000], ["train", "both"], [0, 1],
                         runner=fake_runner)
    assert set(sweep) == {"train", "both"}
    budgets = [b for b, _ in sweep["train"]]
    assert budgets == [100, 1000]
    assert sweep["train"][1][1].mean_acc == pytest.approx(0.25)
    with pytest.raises(ConfigurationError):
        budget_sweep(cfg, [100], ["bogus"], [0], runner=fake_runner)
