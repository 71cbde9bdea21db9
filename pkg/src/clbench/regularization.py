"""Weight-importance regularizers: EWC, online EWC and SI.

All three add a quadratic penalty lambda * L_reg to the training loss. They
differ in how the per-parameter importance weights are estimated:

* EWC keeps one Fisher diagonal + parameter anchor per finished task,
* online EWC keeps a single decayed running Fisher and the latest anchor,
* SI accumulates a path integral of parameter-change x negative gradient
  during training and normalizes it per task.
"""

import numpy as np

from .nn import ConfigurationError, MLP, ParamSet
from .losses import softmax


def fisher_diag(model, xs, active_units, hidden_masks=None, n_cap=None, rng=None, chunk=500):
    """Diagonal of the true Fisher information at the current parameters.

    For every sample the label is the model's own argmax prediction over the
    active units (ties -> lowest class index); the squared gradient of its
    log-probability is averaged over samples. ``n_cap`` limits the number of
    samples used, taken from a fixed shuffle drawn from ``rng``.
    """
    if len(xs) == 0:
        raise ConfigurationError("fisher_diag needs a nonempty sample set")
    if n_cap is not None and n_cap < len(xs):
        order = rng.permutation(len(xs))[:n_cap]
        xs = xs[order]
    params = model.params
    fisher = ParamSet.zeros_like(params)
    n = len(xs)
    for i in range(0, n, chunk):
        x = xs[i:i + chunk].astype(np.float64)
        logits, cache = model.forward(x, hidden_masks=hidden_masks,
                                      active_units=active_units, return_cache=True)
        p = softmax(logits)
        yhat = np.argmax(p, axis=1)
        # d log p(yhat) / d logits = onehot(yhat) - p, per sample
        d = -p
        d[np.arange(len(x)), yhat] += 1.0
        if active_units is not None:
            full = np.zeros((len(x), model.n_out))
            full[:, np.asarray(active_units)] = d
            d = full
        # Per-sample weight gradients are rank-one (outer(activation, delta)),
        # so the summed squares factor into matrix products per layer.
        delta = d
        fisher.weights[-1] += np.square(cache["acts"][-1]).T @ np.square(delta)
        fisher.biases[-1] += np.square(delta).sum(axis=0)
        for l in range(model.n_hidden_layers - 1, -1, -1):
            delta = delta @ params.weights[l + 1].T
            delta = delta * (cache["pre_acts"][l] > 0)
            if hidden_masks is not None:
                delta = delta * hidden_masks[l]
            fisher.weights[l] += np.square(cache["acts"][l]).T @ np.square(delta)
            fisher.biases[l] += np.square(delta).sum(axis=0)
    for a in fisher.arrays():
        a /= n
    return fisher


def ewc_penalty(params, fishers, anchors):
    """Sum over finished tasks of 1/2 * F * (theta - anchor)^2."""
    if not fishers:
        raise ConfigurationError("EWC penalty needs at least one finished task")
    total = 0.0
    for fisher, anchor in zip(fishers, anchors):
        for p, f, a in zip(params.arrays(), fisher.arrays(), anchor.arrays()):
            total += 0.5 * float(np.sum(f * np.square(p - a)))
    return total


def ewc_penalty_grad(params, fishers, anchors):
    grad = ParamSet.zeros_like(params)
    for fisher, anchor in zip(fishers, anchors):
        for g, p, f, a in zip(grad.arrays(), params.arrays(), fisher.arrays(), anchor.arrays()):
            g += f * (p - a)
    return grad


def anchored_quadratic_penalty(params, anchor, weights):
    """sum_i w_i (theta_i - anchor_i)^2 -- note: no 1/2, unlike per-task EWC."""
    total = 0.0
    for p, a, w in zip(params.arrays(), anchor.arrays(), weights.arrays()):
        if np.any(w < 0):
            raise ConfigurationError("negative importance weight")
        total += float(np.sum(w * np.square(p - a)))
    return total


def anchored_quadratic_penalty_grad(params, anchor, weights):
    grad = ParamSet.zeros_like(params)
    for g, p, a, w in zip(grad.arrays(), params.arrays(), anchor.arrays(), weights.arrays()):
        g += 2.0 * w * (p - a)
    return grad


class RegState:
    """Importance state of one regularization method across the task sequence."""

    def __init__(self, method, lam, gamma=1.0, xi=0.1, n_fisher=None):
        if method not in ("ewc", "oewc", "si"):
            raise ConfigurationError(f"unknown regularization method {method!r}")
        self.method = method
        self.lam = lam
        self.gamma = gamma
        self.xi = xi
        self.n_fisher = n_fisher
        self.fishers = []     # ewc: one per finished task
        self.anchors = []     # ewc: one per finished task
        self.running_fisher = None  # oewc
        self.anchor = None          # oewc / si
        self.omega = None     # si: path integral of the current task
        self.importance = None  # si: consolidated Omega

    @property
    def tasks_consolidated(self):
        if self.method == "ewc":
            return len(self.fishers)
        return 0 if self.anchor is None else self._n_done

    def penalty(self, params):
        if self.method == "ewc":
            if not self.fishers:
                return 0.0
            return ewc_penalty(params, self.fishers, self.anchors)
        if self.anchor is None:
            return 0.0
        weights = self.running_fisher if self.method == "oewc" else self.importance
        return anchored_quadratic_penalty(params, self.anchor, weights)

    def penalty_grad(self, params):
        if self.method == "ewc":
            if not self.fishers:
                return None
            return ewc_penalty_grad(params, self.fishers, self.anchors)
        if self.anchor is None:
            return None
        weights = self.running_fisher if self.method == "oewc" else self.importance
        return anchored_quadratic_penalty_grad(params, self.anchor, weights)

    # --- SI hooks -----------------------------------------------------------

    def si_begin_task(self, params):
        if self.method != "si":
            return
        self.omega = ParamSet.zeros_like(params)
        self._theta_task_start = params.copy()

    def si_step(self, theta_before, theta_after, grad_total):
        """Accumulate omega += (theta[t] - theta[t-1]) * (-dL_total/dtheta)."""
        if self.method != "si":
            return
        for o, b, a, g in zip(self.omega.arrays(), theta_before.arrays(),
                              theta_after.arrays(), grad_total.arrays()):
            if o.shape != g.shape:
                raise ConfigurationError("SI gradient shape mismatch")
            o += (a - b) * (-g)

    # --- end-of-task consolidation ------------------------------------------

    def consolidate(self, model, fisher=None):
        """Snapshot anchors and fold the finished task into the importances.

        ``fisher`` is required for ewc/oewc; SI uses its accumulated omega.
        """
        self._n_done = getattr(self, "_n_done", 0) + 1
        if self.method == "ewc":
            self.fishers.append(fisher)
            self.anchors.append(model.params.copy())
        elif self.method == "oewc":
            if self.running_fisher is None:
                self.running_fisher = fisher
            else:
                for rf, f in zip(self.running_fisher.arrays(), fisher.arrays()):
                    rf *= self.gamma
                    rf += f
            self.anchor = model.params.copy()
        else:
            theta_end = model.params
            if self.importance is None:
                self.importance = ParamSet.zeros_like(theta_end)
            for imp, o, s, e in zip(self.importance.arrays(), self.omega.arrays(),
                                    self._theta_task_start.arrays(), theta_end.arrays()):
                imp += o / (np.square(e - s) + self.xi)
                # Adam steps can make individual path integrals slightly
                # negative; importances must stay valid penalty weights.
                np.maximum(imp, 0.0, out=imp)
            self.anchor = theta_end.copy()
            self.omega = None
