"""Exemplar machinery: herding selection, budgeted memory, nearest-class-mean
classification, and the binary classification/distillation targets of the
exemplar-based method.

The exemplar memory is shared by two users: the exemplar method itself
(class scenario only) and the exact-replay / exemplar-classification
variants, which reuse storage + herding with the ordinary softmax classifier.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .nn import ConfigurationError
from .losses import sigmoid


def herding_select(features, m):
    """Greedy selection of m row indices keeping the running feature mean
    closest to the full class mean; output order is selection order."""
    if m < 1:
        raise ConfigurationError("herding quota must be >= 1")
    n = len(features)
    if m > n:
        warnings.warn(f"herding quota {m} exceeds class size {n}; selecting all")
        m = n
    feats = features.astype(np.float64)
    mu = feats.mean(axis=0)
    sq_norms = np.square(feats).sum(axis=1)
    selected = []
    running_sum = np.zeros_like(mu)
    taken = np.zeros(n, dtype=bool)
    for step in range(1, m + 1):
        # argmin_x ||mu - (f_x + S)/step|| == argmin_x ||step*mu - S - f_x||
        target = step * mu - running_sum
        scores = sq_norms - 2.0 * feats @ target
        scores[taken] = np.inf
        pick = int(np.argmin(scores))  # ties -> lowest sample index
        selected.append(pick)
        taken[pick] = True
        running_sum += feats[pick]
    return selected


@dataclass
class ClassStore:
    digit: int
    task: int
    images: np.ndarray  # ordered by herding selection


@dataclass
class ExemplarMemory:
    """Budget-B store of raw images, evenly divided over the classes seen."""
    budget: int
    classes: list = field(default_factory=list)

    @property
    def n_classes(self):
        return len(self.classes)

    @property
    def n_stored(self):
        return sum(len(c.images) for c in self.classes)

    @property
    def quota(self):
        if not self.classes:
            return self.budget
        return self.budget // self.n_classes

    def update(self, new_classes, feature_fn):
        """Fold a finished task's classes in: herd exemplar sets for the new
        classes and truncate old classes' ordered lists to the new quota.

        ``new_classes`` is a list of (digit, task, candidate images);
        ``feature_fn`` maps an image batch to feature vectors.
        """
        m = self.budget // (self.n_classes + len(new_classes))
        for store in self.classes:
            store.images = store.images[:m]  # keeps the selection-order prefix
        for digit, task, candidates in new_classes:
            order = herding_select(feature_fn(candidates), m)
            self.classes.append(ClassStore(digit, task, candidates[order]))
        assert self.n_stored <= self.budget

    def sample(self, n, rng):
        """Uniform draw of n stored exemplars; returns (images, digits, tasks)."""
        if self.n_stored == 0:
            raise ConfigurationError("cannot sample from an empty exemplar memory")
        counts = [len(c.images) for c in self.classes]
        flat = rng.integers(0, self.n_stored, size=n)
        bounds = np.cumsum(counts)
        cls_idx = np.searchsorted(bounds, flat, side="right")
        within = flat - (bounds[cls_idx] - np.asarray(counts)[cls_idx])
        images = np.stack([self.classes[c].images[w] for c, w in zip(cls_idx, within)])
        digits = np.array([self.classes[c].digit for c in cls_idx])
        tasks = np.array([self.classes[c].task for c in cls_idx])
        return images, digits, tasks

    def all_stored(self):
        images = np.concatenate([c.images for c in self.classes])
        digits = np.concatenate([[c.digit] * len(c.images) for c in self.classes])
        tasks = np.concatenate([[c.task] * len(c.images) for c in self.classes])
        return images, digits.astype(int), tasks.astype(int)


def class_means(memory, feature_fn):
    means = []
    for store in memory.classes:
        if len(store.images) == 0:
            raise ConfigurationError(f"class {store.digit} has no stored exemplars")
        means.append(feature_fn(store.images).mean(axis=0))
    return np.stack(means)


def ncm_classify(x, memory, feature_fn):
    """Nearest-class-mean prediction; returns indices into ``memory.classes``.

    Means are recomputed from the stored exemplars with the current feature
    extractor. Ties break to the lowest class index.
    """
    means = class_means(memory, feature_fn)
    feats = feature_fn(x)
    d2 = (np.square(feats).sum(axis=1, keepdims=True)
          - 2.0 * feats @ means.T + np.square(means).sum(axis=1))
    return np.argmin(d2, axis=1)


def binary_targets(prev_model, x, y_active, n_old, active):
    """Old-class entries are the previous snapshot's sigmoid outputs; the
    current task's classes get hard 0/1 indicators.

    ``y_active`` are label positions within ``active`` (the classes so far).
    """
    t = np.zeros((len(x), len(active)), dtype=np.float32)
    if n_old:
        old_logits = prev_model.forward(x, active_units=np.asarray(active)[:n_old])
        t[:, :n_old] = sigmoid(old_logits)
    is_new = y_active >= n_old
    t[np.flatnonzero(is_new), y_active[is_new]] = 1.0
    return t
