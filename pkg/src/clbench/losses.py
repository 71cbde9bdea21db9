"""Loss values and their gradients w.r.t. the (active) logits.

All losses are averaged over the batch; the returned ``d*`` gradients are
gradients of that batch mean, ready to feed into ``MLP.backward``.
"""

import numpy as np


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def masked_nll(logits, targets):
    """Cross entropy with softmax normalized over the active units only.

    ``targets`` are indices into the active set (columns of ``logits``).
    """
    targets = np.asarray(targets)
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise ValueError("target index outside the active set")
    lsm = log_softmax(logits)
    return -lsm[np.arange(len(targets)), targets].mean()


def masked_nll_grad(logits, targets):
    targets = np.asarray(targets)
    p = softmax(logits)
    p[np.arange(len(targets)), targets] -= 1.0
    return p / len(targets)


def distillation(logits, soft_targets, T):
    """Soft-target cross entropy at temperature T, scaled by T^2."""
    if soft_targets.shape != logits.shape:
        raise ValueError("soft targets must match the active logits")
    lsm = log_softmax(logits / T)
    return -(T * T) * (soft_targets * lsm).sum(axis=1).mean()


def distillation_grad(logits, soft_targets, T):
    p = softmax(logits / T)
    # d/dlogits of -T^2 * sum(y * log_softmax(logits/T)) = T * (p - y)
    return T * (p - soft_targets) / logits.shape[0]


def binary_ce(logits, targets):
    """Sum over classes of independent sigmoid cross entropies.

    ``targets`` may mix hard {0,1} indicators and soft probabilities.
    """
    # softplus(l) - y*l is the stable form of -[y log s(l) + (1-y) log(1-s(l))]
    per_class = np.logaddexp(0.0, logits) - targets * logits
    return per_class.sum(axis=1).mean()


def binary_ce_grad(logits, targets):
    s = 1.0 / (1.0 + np.exp(-logits))
    return (s - targets) / logits.shape[0]


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))
