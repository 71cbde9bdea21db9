"""Scenario semantics: output layouts, active unit sets, label mapping,
per-task gating masks, and model evaluation.

The three scenarios differ in what is known at test time:

* task  -- task identity given; multi-headed output, one unit group per task
* domain -- identity withheld; single shared head (one unit per within-task class)
* class -- identity withheld and inferred; one unit per class ever seen
"""

from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError

SCENARIOS = ("task", "domain", "class")


def check_scenario(scenario):
    if scenario not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    return scenario


@dataclass
class OutputLayout:
    scenario: str
    n_out: int
    groups: list  # per-task arrays of output-unit indices

    @property
    def n_tasks(self):
        return len(self.groups)


def output_layout(scenario, protocol):
    check_scenario(scenario)
    sizes = [len(t.classes) for t in protocol]
    if scenario == "task":
        offsets = np.cumsum([0] + sizes[:-1])
        groups = [np.arange(o, o + s) for o, s in zip(offsets, sizes)]
        return OutputLayout("task", int(sum(sizes)), groups)
    if scenario == "domain":
        if len(set(sizes)) != 1:
            raise ConfigurationError("domain scenario needs equal class counts per task")
        groups = [np.arange(sizes[0]) for _ in sizes]
        return OutputLayout("domain", sizes[0], groups)
    offsets = np.cumsum([0] + sizes[:-1])
    groups = [np.arange(o, o + s) for o, s in zip(offsets, sizes)]
    return OutputLayout("class", int(sum(sizes)), groups)


def active_set(layout, task, tasks_seen):
    """Output units active for (training on / replaying to) ``task`` while
    ``tasks_seen`` tasks have been encountered.

    task scenario: the single head of ``task``; domain: all units;
    class: units of all tasks seen so far.
    """
    if task > tasks_seen:
        raise ConfigurationError(f"task {task} not seen yet (seen {tasks_seen})")
    if layout.scenario == "task":
        return layout.groups[task - 1]
    if layout.scenario == "domain":
        return np.arange(layout.n_out)
    return np.concatenate(layout.groups[:tasks_seen])


def map_target(layout, protocol, task, digit):
    """Index of ``digit`` within the active set used when training ``task``."""
    classes = protocol[task - 1].classes
    if digit not in classes:
        raise ConfigurationError(f"digit {digit} not in task {task} classes {classes}")
    pos = classes.index(digit)
    if layout.scenario in ("task", "domain"):
        return pos
    return int(layout.groups[task - 1][0]) + pos


def map_targets(layout, protocol, task, digits):
    """Vectorized map_target for a label array of one task."""
    classes = np.asarray(protocol[task - 1].classes)
    pos = np.searchsorted(classes, digits)
    if not np.all(classes[pos] == digits):
        raise ConfigurationError(f"labels outside task {task} classes")
    if layout.scenario in ("task", "domain"):
        return pos
    return layout.groups[task - 1][0] + pos


@dataclass
class GatingPlan:
    """Per-task binary masks over the hidden layers (context-dependent gating)."""
    pct: float
    masks: list  # masks[task-1][layer] -> float32 0/1 vector

    def for_task(self, task):
        return self.masks[task - 1]


def make_xdg_masks(pct, n_tasks, hidden_widths, rng):
    if not 0 <= pct < 100:
        raise ConfigurationError(f"gating percentage {pct} outside [0, 100)")
    masks = []
    for _ in range(n_tasks):
        per_layer = []
        for w in hidden_widths:
            n_gated = int(pct / 100.0 * w)
            m = np.ones(w, dtype=np.float32)
            m[rng.choice(w, size=n_gated, replace=False)] = 0.0
            per_layer.append(m)
        masks.append(per_layer)
    return GatingPlan(pct, masks)


def evaluate(model, protocol, scenario, layout, gating=None, chunk=2000):
    """Per-task test accuracy after training the full sequence, plus its mean.

    task scenario: the correct head (and gating mask, if any) is selected by
    the provided task identity; domain/class: no identity is used. Prediction
    is the argmax over the scenario's active units only.
    """
    check_scenario(scenario)
    n_tasks = len(protocol)
    accs = []
    for k, spec in enumerate(protocol, start=1):
        if scenario == "task":
            active = layout.groups[k - 1]
        else:
            active = active_set(layout, k, n_tasks)
        masks = gating.for_task(k) if gating is not None else None
        correct = 0
        targets = map_targets(layout, protocol, k, spec.test_y)
        for i in range(0, len(spec.test_y), chunk):
            x = spec.transform(spec.test_x[i:i + chunk])
            logits = model.forward(x, hidden_masks=masks, active_units=active)
            pred = np.argmax(logits, axis=1)  # ties -> lowest unit index
            correct += int((pred == targets[i:i + chunk]).sum())
        accs.append(correct / len(spec.test_y))
    return accs, float(np.mean(accs))
