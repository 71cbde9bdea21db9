"""Experiment orchestration: one config -> one sequentially-trained model
-> one report.

The loop trains the classifier through the task sequence, invoking the
selected method's hooks: quadratic penalties and end-of-task consolidation
for the regularizers, replay batch assembly and the 1/N loss mixing for the
replay family, generator training for generative replay, and exemplar-memory
updates for the exemplar-based methods.
"""

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from .nn import MLP, Adam, ConfigurationError
from .losses import (masked_nll, masked_nll_grad, distillation, distillation_grad,
                     binary_ce, binary_ce_grad)
from .scenarios import (output_layout, active_set, map_targets, make_xdg_masks,
                        evaluate, check_scenario)
from .regularization import RegState, fisher_diag
from .replay import (ReplayContext, assemble_replay_batch, compose_loss,
                     DEFAULT_TEMPERATURE)
from .vae import VAE, train_generator
from .icarl import ExemplarMemory, binary_targets, ncm_classify
from .rng import substream

METHODS = ("none", "offline", "xdg", "ewc", "oewc", "si",
           "lwf", "dgr", "dgrdistill", "icarl", "exact")
REG_METHODS = ("ewc", "oewc", "si")
GENERATIVE_METHODS = ("dgr", "dgrdistill")

PROTOCOL_DEFAULTS = {
    "splitMNIST": {"n_tasks": 5, "hidden": 400, "iters": 2000, "lr": 1e-3},
    "permMNIST": {"n_tasks": 10, "hidden": 1000, "iters": 5000, "lr": 1e-4},
}

# Values selected by this artifact's own grid search (``clbench grid``); see
# the grids emitted under results/grids/.
DEFAULT_HYPERS = {
    ("splitMNIST", "ewc"): {"lam": 1e9},
    ("splitMNIST", "oewc"): {"lam": 1e9, "gamma": 1.0},
    ("splitMNIST", "si"): {"lam": 10.0},
    ("splitMNIST", "xdg"): {"xdg_pct": 80.0},
    ("permMNIST", "ewc"): {"lam": 100.0},
    ("permMNIST", "oewc"): {"lam": 100.0, "gamma": 1.0},
    ("permMNIST", "si"): {"lam": 10.0},
    ("permMNIST", "xdg"): {"xdg_pct": 80.0},
}


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str = "splitMNIST"
    scenario: str = "class"
    method: str = "none"
    seed: int = 0
    n_tasks: int = None
    hidden: int = None
    iters: int = None
    lr: float = None
    batch_size: int = 128
    lam: float = None          # regularization strength
    gamma: float = None        # online-EWC fisher decay (resolved to 1.0 if unset)
    xi: float = 0.1            # SI damping
    n_fisher: int = None       # cap on samples for the Fisher estimate
    xdg_pct: float = None      # percent of hidden units gated per task
    xdg_combine: bool = False  # add per-task gating on top of the method
    temperature: float = DEFAULT_TEMPERATURE
    budget: int = 2000         # exemplar memory budget
    exact_variant: str = "train"  # train | classify | both
    n_latent: int = 100

    def resolved(self):
        """Fill protocol defaults and grid-selected hyperparameters."""
        if self.protocol not in PROTOCOL_DEFAULTS:
            raise ConfigurationError(f"unknown protocol {self.protocol!r}")
        upd = {}
        for k, v in PROTOCOL_DEFAULTS[self.protocol].items():
            if getattr(self, k) is None:
                upd[k] = v
        hypers = DEFAULT_HYPERS.get((self.protocol, self.method), {})
        if self.xdg_combine and self.xdg_pct is None:
            upd["xdg_pct"] = DEFAULT_HYPERS[(self.protocol, "xdg")]["xdg_pct"]
        for k, v in hypers.items():
            if getattr(self, k) is None:
                upd[k] = v
        if self.gamma is None and "gamma" not in upd:
            upd["gamma"] = 1.0
        return dataclasses.replace(self, **upd) if upd else self

    def validated(self):
        cfg = self.resolved()
        check_scenario(cfg.scenario)
        if cfg.method not in METHODS:
            raise ConfigurationError(f"unknown method {cfg.method!r}")
        if cfg.method == "xdg" and cfg.scenario != "task":
            raise ConfigurationError("gating needs task identity: xdg is task-scenario only")
        if cfg.xdg_combine and cfg.scenario != "task":
            raise ConfigurationError("xdg combination is task-scenario only")
        if cfg.method == "icarl" and cfg.scenario != "class":
            raise ConfigurationError("the exemplar method applies to the class scenario only")
        if cfg.method == "exact" and cfg.exact_variant not in ("train", "classify", "both"):
            raise ConfigurationError(f"unknown exact-replay variant {cfg.exact_variant!r}")
        if cfg.xdg_pct is not None and not 0.0 <= cfg.xdg_pct < 100.0:
            raise ConfigurationError("gated percentage must lie in [0, 100)")
        return cfg

    def to_dict(self):
        return dataclasses.asdict(self)

    def fingerprint(self):
        # hashed after default resolution so equivalent configs share a key
        blob = json.dumps(self.resolved().to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunReport:
    protocol: str
    scenario: str
    method: str
    seed: int
    task_accs: list
    mean_acc: float
    fingerprint: str
    runtime_s: float
    # diagnostic only: accuracies over tasks seen so far at each task boundary
    boundary_accs: list = None

    def to_dict(self):
        return dataclasses.asdict(self)


def _classification_parts_grads(model, parts):
    """Mean classification loss and gradients over a batch given as slices.

    Each part is (x, targets, active_units, hidden_masks, soft, T); slice
    contributions are weighted by slice size so the result is the plain mean
    over all samples.
    """
    n_total = sum(len(p[0]) for p in parts)
    loss = 0.0
    grads = None
    for x, targets, active, masks, soft, T in parts:
        logits, cache = model.forward(x, hidden_masks=masks, active_units=active,
                                      return_cache=True)
        w = len(x) / n_total
        if soft:
            loss += w * distillation(logits, targets, T)
            dlogits = distillation_grad(logits, targets, T)
        else:
            loss += w * masked_nll(logits, targets)
            dlogits = masked_nll_grad(logits, targets)
        g = model.backward(cache, w * dlogits)
        if grads is None:
            grads = g
        else:
            grads.add_scaled(g)
    return loss, grads


class _UnionSampler:
    """Uniform-with-replacement sampling over the union of several tasks."""

    def __init__(self, specs):
        self.specs = specs
        self.counts = np.array([s.n_train for s in specs])
        self.bounds = np.cumsum(self.counts)

    def sample(self, n, rng):
        flat = rng.integers(0, self.bounds[-1], size=n)
        which = np.searchsorted(self.bounds, flat, side="right")
        out = []
        for j in np.unique(which):
            sel = flat[which == j] - (self.bounds[j] - self.counts[j])
            spec = self.specs[j]
            out.append((spec.index, spec.transform(spec.train_x[sel]), spec.train_y[sel]))
        return out


def run_experiment(config, dataset=None, data_dir=None, verbose=False,
                   eval_boundaries=False):
    cfg = config.validated()
    t0 = time.time()
    if dataset is None:
        dataset = data_mod.load_mnist(data_dir)

    rng_batch = substream(cfg.seed, "minibatch")
    rng_gen = substream(cfg.seed, "generator")
    rng_fisher = substream(cfg.seed, "fisher")
    rng_mem = substream(cfg.seed, "memory")

    if cfg.protocol == "splitMNIST":
        protocol = data_mod.build_split_protocol(dataset)[:cfg.n_tasks]
    else:
        protocol = data_mod.build_permuted_protocol(dataset, cfg.n_tasks,
                                                    substream(cfg.seed, "protocol"))
    layout = output_layout(cfg.scenario, protocol)
    n_pixels = protocol[0].train_x.shape[1]
    sizes = [n_pixels, cfg.hidden, cfg.hidden, layout.n_out]
    model = MLP.create(sizes, substream(cfg.seed, "init"),
                       final_bias=cfg.method != "icarl")
    adam = Adam(model.params, cfg.lr)

    gating = None
    if cfg.method == "xdg" or cfg.xdg_combine:
        gating = make_xdg_masks(cfg.xdg_pct, len(protocol), [cfg.hidden, cfg.hidden],
                                substream(cfg.seed, "gating"))

    reg = RegState(cfg.method, cfg.lam, cfg.gamma, cfg.xi,
                   cfg.n_fisher) if cfg.method in REG_METHODS else None
    generator = prev_generator = None
    if cfg.method in GENERATIVE_METHODS:
        generator = VAE.create(n_pixels, cfg.hidden, substream(cfg.seed, "generator-init"),
                               n_latent=cfg.n_latent)
        gen_adam = Adam(generator.params, cfg.lr)
    memory = None
    if cfg.method in ("icarl", "exact"):
        memory = ExemplarMemory(cfg.budget)
    prev_model = None
    boundaries = []

    for k, spec in enumerate(protocol, start=1):
        masks = gating.for_task(k) if gating is not None else None
        active_cur = active_set(layout, k, k)
        if reg is not None:
            reg.si_begin_task(model.params)
        union = _UnionSampler(protocol[:k]) if cfg.method == "offline" else None
        pool = _icarl_pool(cfg, layout, protocol, spec, memory, k) if cfg.method == "icarl" else None

        for _ in range(cfg.iters):
            if cfg.method == "offline":
                parts = []
                for j, x, digits in union.sample(cfg.batch_size, rng_batch):
                    targets = map_targets(layout, protocol, j, digits)
                    active = layout.groups[j - 1] if cfg.scenario == "task" else active_cur
                    parts.append((x, targets, active, None, False, None))
                _, grads = _classification_parts_grads(model, parts)
            elif cfg.method == "icarl":
                grads = _icarl_step_grads(cfg, model, prev_model, pool, active_cur, rng_batch)
            else:
                idx = rng_batch.integers(0, spec.n_train, size=cfg.batch_size)
                x = spec.transform(spec.train_x[idx])
                targets = map_targets(layout, protocol, k, spec.train_y[idx])
                parts = [(x, targets, active_cur, masks, False, None)]
                _, grads = _classification_parts_grads(model, parts)
                replay = None
                if cfg.method in ("lwf",) + GENERATIVE_METHODS + ("exact",) and \
                        not (cfg.method == "exact" and cfg.exact_variant == "classify"):
                    ctx = ReplayContext(
                        cfg.method, cfg.scenario, layout, protocol, k, x, prev_model,
                        generator=prev_generator, memory=memory,
                        temperature=cfg.temperature,
                        rng=rng_gen if cfg.method in GENERATIVE_METHODS else rng_mem,
                        batch_size=cfg.batch_size)
                    replay = assemble_replay_batch(cfg.method, ctx)
                if replay is not None:
                    _, rep_grads = _classification_parts_grads(model, [
                        (s.inputs, s.targets, s.active,
                         gating.for_task(s.task) if gating is not None else None,
                         replay.soft, cfg.temperature)
                        for s in replay.slices])
                    w = 1.0 / k
                    for g, gr in zip(grads.arrays(), rep_grads.arrays()):
                        g *= w
                        g += (1.0 - w) * gr
                if reg is not None:
                    pg = reg.penalty_grad(model.params)
                    if pg is not None:
                        grads.add_scaled(pg, cfg.lam)
            if reg is not None and cfg.method == "si":
                theta_before = model.params.copy()
                adam.step(model.params, grads)
                reg.si_step(theta_before, model.params, grads)
            else:
                adam.step(model.params, grads)

        # end-of-task hooks
        prev_model = model.copy()
        if reg is not None:
            fisher = None
            if cfg.method in ("ewc", "oewc"):
                xs = spec.transform(spec.train_x)
                fisher = fisher_diag(model, xs, active_cur, hidden_masks=masks,
                                     n_cap=cfg.n_fisher, rng=rng_fisher)
            reg.consolidate(model, fisher)
        if cfg.method in GENERATIVE_METHODS:
            def sample_inputs(n):
                idx = rng_batch.integers(0, spec.n_train, size=n)
                return spec.transform(spec.train_x[idx])
            train_generator(generator, gen_adam, sample_inputs, prev_generator, k,
                            cfg.iters, cfg.batch_size, rng_gen)
            prev_generator = generator.copy()
        if memory is not None:
            new_classes = [
                (digit, k, spec.transform(spec.train_x[spec.train_y == digit]))
                for digit in spec.classes]
            memory.update(new_classes, model.features)
        if eval_boundaries:
            seen, _ = evaluate(model, protocol[:k], cfg.scenario, layout, gating)
            boundaries.append([float(a) for a in seen])
        if verbose:
            print(f"[{cfg.method}/{cfg.scenario}/{cfg.protocol} seed {cfg.seed}] "
                  f"task {k}/{len(protocol)} done ({time.time() - t0:.0f}s)")

    if cfg.method == "icarl" or (cfg.method == "exact" and
                                 cfg.exact_variant in ("classify", "both")):
        accs, mean = evaluate_ncm(model, memory, protocol, cfg.scenario, layout, gating)
    else:
        accs, mean = evaluate(model, protocol, cfg.scenario, layout, gating)
    return RunReport(cfg.protocol, cfg.scenario, cfg.method, cfg.seed,
                     [float(a) for a in accs], float(mean),
                     cfg.fingerprint(), time.time() - t0,
                     boundary_accs=boundaries if eval_boundaries else None)


def _icarl_pool(cfg, layout, protocol, spec, memory, k):
    """Extended dataset: current task data plus all stored exemplars, with
    targets as global class indices."""
    xs = [spec.transform(spec.train_x)]
    ys = [np.asarray(map_targets(layout, protocol, k, spec.train_y))]
    for store in memory.classes:
        xs.append(store.images)
        gidx = map_targets(layout, protocol, store.task, np.array([store.digit]))[0]
        ys.append(np.full(len(store.images), gidx))
    n_old = int(layout.groups[k - 1][0]) if k > 1 else 0
    return np.concatenate(xs), np.concatenate(ys), n_old


def _icarl_step_grads(cfg, model, prev_model, pool, active_cur, rng):
    xs, ys, n_old = pool
    idx = rng.integers(0, len(xs), size=cfg.batch_size)
    x, y = xs[idx], ys[idx]
    targets = binary_targets(prev_model, x, y, n_old, active_cur)
    logits, cache = model.forward(x, active_units=active_cur, return_cache=True)
    return model.backward(cache, binary_ce_grad(logits, targets))


def evaluate_ncm(model, memory, protocol, scenario, layout, gating=None, chunk=2000):
    """Nearest-class-mean evaluation over the stored exemplars.

    task scenario restricts candidates to the identified task's classes;
    class scenario requires the exact (task, class) match; domain scenario
    scores the within-task class position of the nearest mean.
    """
    pair_to_idx = {(c.task, c.digit): i for i, c in enumerate(memory.classes)}
    accs = []
    for k, spec in enumerate(protocol, start=1):
        masks = gating.for_task(k) if gating is not None else None

        def feats(x):
            return model.features(x, hidden_masks=masks)

        correct = 0
        for i in range(0, len(spec.test_y), chunk):
            x = spec.transform(spec.test_x[i:i + chunk])
            y = spec.test_y[i:i + chunk]
            if scenario == "task":
                sub_idx = [pair_to_idx[(k, d)] for d in spec.classes]
                sub = ExemplarMemory(memory.budget, [memory.classes[i] for i in sub_idx])
                pred = ncm_classify(x, sub, feats)
                pred_digit = np.array([sub.classes[p].digit for p in pred])
                correct += int((pred_digit == y).sum())
            else:
                pred = ncm_classify(x, memory, feats)
                if scenario == "class":
                    target = np.array([pair_to_idx[(k, d)] for d in y])
                    correct += int((pred == target).sum())
                else:
                    pred_pos = np.array([
                        memory.classes[p].digit if layout.n_out == 10
                        else protocol[memory.classes[p].task - 1].classes.index(
                            memory.classes[p].digit)
                        for p in pred])
                    target = np.asarray(map_targets(layout, protocol, k, y))
                    correct += int((pred_pos == target).sum())
        accs.append(correct / len(spec.test_y))
    return accs, float(np.mean(accs))
