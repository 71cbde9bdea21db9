"""Replay-based training support: target construction and loss mixing.

Covers the four replay flavours compared in the benchmark:

* lwf        -- current-task inputs with soft targets from the previous model
* dgr        -- generator samples with hard labels from the previous model
* dgrdistill -- generator samples with soft targets
* exact      -- stored exemplars with their stored hard labels

A ReplayBatch is a list of slices; under the task scenario the replays are
divided evenly over the previous tasks and each slice carries its own head's
active units, elsewhere there is a single slice.
"""

from dataclasses import dataclass

import numpy as np

from .nn import ConfigurationError
from .losses import softmax
from .scenarios import active_set

REPLAY_METHODS = ("lwf", "dgr", "dgrdistill", "exact")
DEFAULT_TEMPERATURE = 2.0


def soft_targets(prev_model, x, T, active_units, n_pad=0):
    """Temperature-softened probabilities of the previous model over
    ``active_units``, with ``n_pad`` zero-probability classes appended
    (the class scenario appends zeros for the current task's classes)."""
    logits = prev_model.forward(x, active_units=active_units)
    p = softmax(logits / T)
    if n_pad:
        p = np.concatenate([p, np.zeros((len(p), n_pad), dtype=p.dtype)], axis=1)
    return p


def dgr_hard_labels(prev_model, x, active_units):
    """Most likely class (index into the active set) under the previous model."""
    logits = prev_model.forward(x, active_units=active_units)
    return np.argmax(logits, axis=1)  # ties -> lowest class index


def compose_loss(loss_current, loss_replay, n_tasks_so_far):
    """(1/N) * L_current + (1 - 1/N) * L_replay; pure L_current at the first task."""
    if n_tasks_so_far < 1:
        raise ConfigurationError("task count must be >= 1")
    w = 1.0 / n_tasks_so_far
    return w * loss_current + (1.0 - w) * loss_replay


def even_split(n, k):
    """Split n items into k contiguous groups of near-equal size."""
    base, extra = divmod(n, k)
    sizes = [base + (1 if i < extra else 0) for i in range(k)]
    bounds = np.cumsum([0] + sizes)
    return [(bounds[i], bounds[i + 1]) for i in range(k)]


@dataclass
class ReplaySlice:
    task: int            # intended task (replay target construction)
    active: np.ndarray   # output units the loss is computed over
    inputs: np.ndarray
    targets: np.ndarray  # hard indices into ``active`` or soft rows over it


@dataclass
class ReplayBatch:
    source: str  # 'current-inputs' | 'generated' | 'stored'
    soft: bool
    slices: list


@dataclass
class ReplayContext:
    """Everything batch assembly needs from the training loop."""
    method: str
    scenario: str
    layout: object
    protocol: list
    task: int                # current task index (1-based)
    current_inputs: np.ndarray
    prev_model: object       # classifier snapshot from the end of task-1
    generator: object = None  # generator snapshot (dgr variants)
    memory: object = None     # ExemplarMemory (exact)
    temperature: float = DEFAULT_TEMPERATURE
    rng: object = None
    batch_size: int = 128


def _scenario_targets(ctx, inputs, slice_task, soft):
    """Targets and loss-active units for one slice of replayed inputs."""
    layout, k = ctx.layout, ctx.task
    if ctx.scenario == "task":
        gen_active = layout.groups[slice_task - 1]
        loss_active = gen_active
        n_pad = 0
    elif ctx.scenario == "domain":
        gen_active = loss_active = np.arange(layout.n_out)
        n_pad = 0
    else:
        gen_active = active_set(layout, k - 1, k - 1)  # classes up to previous task
        loss_active = active_set(layout, k, k)
        n_pad = len(loss_active) - len(gen_active)
    if soft:
        targets = soft_targets(ctx.prev_model, inputs, ctx.temperature, gen_active, n_pad)
    else:
        targets = dgr_hard_labels(ctx.prev_model, inputs, gen_active)
    return ReplaySlice(slice_task, loss_active, inputs, targets)


def assemble_replay_batch(method, ctx):
    """Build the per-iteration replay batch; None at the first task."""
    if method not in REPLAY_METHODS:
        raise ConfigurationError(f"unknown replay method {method!r}")
    if ctx.task < 2:
        return None
    soft = method in ("lwf", "dgrdistill")
    if method == "lwf":
        inputs, source = ctx.current_inputs, "current-inputs"
    elif method in ("dgr", "dgrdistill"):
        inputs, source = ctx.generator.sample(ctx.batch_size, ctx.rng), "generated"
    else:
        return _assemble_exact(ctx)
    if ctx.scenario == "task":
        slices = [
            _scenario_targets(ctx, inputs[lo:hi], j + 1, soft)
            for j, (lo, hi) in enumerate(even_split(len(inputs), ctx.task - 1))
        ]
    else:
        slices = [_scenario_targets(ctx, inputs, ctx.task - 1, soft)]
    return ReplayBatch(source, soft, slices)


def _assemble_exact(ctx):
    from .scenarios import map_targets
    if ctx.memory is None or ctx.memory.n_stored == 0:
        raise ConfigurationError("exact replay requested with empty exemplar memory")
    inputs, digits, tasks = ctx.memory.sample(ctx.batch_size, ctx.rng)
    slices = []
    if ctx.scenario == "task":
        for j in np.unique(tasks):
            sel = tasks == j
            targets = map_targets(ctx.layout, ctx.protocol, int(j), digits[sel])
            slices.append(ReplaySlice(int(j), ctx.layout.groups[j - 1], inputs[sel], targets))
    else:
        loss_active = active_set(ctx.layout, ctx.task, ctx.task)
        targets = np.concatenate([
            map_targets(ctx.layout, ctx.protocol, int(j), digits[tasks == j])
            for j in np.unique(tasks)])
        inputs = np.concatenate([inputs[tasks == j] for j in np.unique(tasks)])
        slices.append(ReplaySlice(ctx.task - 1, loss_active, inputs, targets))
    return ReplayBatch("stored", False, slices)
