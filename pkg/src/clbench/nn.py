"""Dense MLP numerics: parameters, forward pass with masking, backprop, Adam.

The network is a plain fully-connected net with ReLU hidden layers. The
forward pass supports two kinds of masking used by the harness:

* ``hidden_masks`` -- per-hidden-layer binary vectors that gate activations
  to exactly zero (context-dependent gating),
* ``active_units`` -- an index set restricting which output units take part
  in the loss; logits are returned for those units only and backprop puts
  exactly zero gradient on the weights of the other output units.
"""

import numpy as np


class ConfigurationError(ValueError):
    """Shapes or index sets inconsistent with the declared architecture."""


class NumericError(FloatingPointError):
    """Non-finite values encountered during forward or backward."""


class ParamSet:
    """Ordered per-layer weight matrices and bias vectors of one network."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases):
            raise ConfigurationError("weights/biases layer count mismatch")
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, sizes, rng, dtype=np.float32):
        """Uniform +-1/sqrt(fan_in) weights, zero biases."""
        weights, biases = [], []
        for nin, nout in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(nin)
            weights.append(rng.uniform(-bound, bound, size=(nin, nout)).astype(dtype))
            biases.append(np.zeros(nout, dtype=dtype))
        return cls(weights, biases)

    @classmethod
    def zeros_like(cls, other):
        return cls([np.zeros_like(w) for w in other.weights],
                   [np.zeros_like(b) for b in other.biases])

    def copy(self):
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        """All arrays in a fixed order (weights and biases interleaved per layer)."""
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_params(self):
        return sum(a.size for a in self.arrays())

    def add_scaled(self, other, scale=1.0):
        """In-place ``self += scale * other``."""
        for a, o in zip(self.arrays(), other.arrays()):
            a += scale * o
        return self

    def check_finite(self):
        for i, a in enumerate(self.arrays()):
            if not np.all(np.isfinite(a)):
                raise NumericError(f"non-finite parameter values in array {i}")


def relu(x):
    return np.maximum(x, 0.0)


class MLP:
    """Multi-layer perceptron over a ParamSet; any number of ReLU hidden layers.

    ``final_bias=False`` pins the output-layer bias at zero (used by the
    exemplar method's sigmoid output layer, which has no bias term).
    """

    def __init__(self, params, final_bias=True):
        self.params = params
        self.final_bias = final_bias

    @classmethod
    def create(cls, sizes, rng, dtype=np.float32, final_bias=True):
        return cls(ParamSet.init(sizes, rng, dtype=dtype), final_bias=final_bias)

    @property
    def n_hidden_layers(self):
        return len(self.params.weights) - 1

    @property
    def n_out(self):
        return self.params.weights[-1].shape[1]

    def copy(self):
        return MLP(self.params.copy(), final_bias=self.final_bias)

    def _check_masks(self, hidden_masks):
        if hidden_masks is None:
            return
        if len(hidden_masks) != self.n_hidden_layers:
            raise ConfigurationError(
                f"got {len(hidden_masks)} hidden masks for {self.n_hidden_layers} hidden layers")
        for l, m in enumerate(hidden_masks):
            if m.shape != (self.params.weights[l].shape[1],):
                raise ConfigurationError(f"mask length mismatch at hidden layer {l}")

    def forward(self, x, hidden_masks=None, active_units=None, return_cache=False):
        """Logits restricted to ``active_units`` (all units if None)."""
        self._check_masks(hidden_masks)
        if active_units is not None:
            active_units = np.asarray(active_units)
            if active_units.size == 0 or active_units.min() < 0 or active_units.max() >= self.n_out:
                raise ConfigurationError("active_units empty or outside the output layer")
        a = x
        pre_acts, acts = [], [x]
        for l in range(self.n_hidden_layers):
            pre = a @ self.params.weights[l] + self.params.biases[l]
            a = relu(pre)
            if hidden_masks is not None:
                a = a * hidden_masks[l]
            if not np.all(np.isfinite(a)):
                raise NumericError(f"non-finite activations at hidden layer {l}")
            pre_acts.append(pre)
            acts.append(a)
        logits = a @ self.params.weights[-1] + self.params.biases[-1]
        if not np.all(np.isfinite(logits)):
            raise NumericError("non-finite logits at output layer")
        if active_units is not None:
            logits = logits[:, active_units]
        if return_cache:
            cache = {"pre_acts": pre_acts, "acts": acts, "hidden_masks": hidden_masks,
                     "active_units": active_units}
            return logits, cache
        return logits

    def features(self, x, hidden_masks=None):
        """Activations of the last hidden layer (the feature extractor view)."""
        _, cache = self.forward(x, hidden_masks=hidden_masks, return_cache=True)
        return cache["acts"][-1]

    def backward(self, cache, dlogits):
        """Gradients of a scalar loss given d(loss)/d(active logits).

        Output units outside the active set get exactly zero gradient, as do
        incoming weights of hidden units gated to zero for the whole batch.
        """
        active_units = cache["active_units"]
        if active_units is not None:
            full = np.zeros((dlogits.shape[0], self.n_out), dtype=dlogits.dtype)
            full[:, active_units] = dlogits
            dlogits = full
        grads_w = [None] * len(self.params.weights)
        grads_b = [None] * len(self.params.biases)
        a_last = cache["acts"][-1]
        grads_w[-1] = a_last.T @ dlogits
        grads_b[-1] = dlogits.sum(axis=0)
        if not self.final_bias:
            grads_b[-1] = np.zeros_like(grads_b[-1])
        delta = dlogits
        for l in range(self.n_hidden_layers - 1, -1, -1):
            delta = delta @ self.params.weights[l + 1].T
            delta = delta * (cache["pre_acts"][l] > 0)
            if cache["hidden_masks"] is not None:
                delta = delta * cache["hidden_masks"][l]
            grads_w[l] = cache["acts"][l].T @ delta
            grads_b[l] = delta.sum(axis=0)
        grads = ParamSet(grads_w, grads_b)
        for a in grads.arrays():
            if not np.all(np.isfinite(a)):
                raise NumericError("non-finite gradient")
        return grads


class Adam:
    """Adam with bias correction; one state per trained ParamSet."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = ParamSet.zeros_like(params)
        self.v = ParamSet.zeros_like(params)
        # scratch buffers so a step allocates nothing
        self._s1 = ParamSet.zeros_like(params)
        self._s2 = ParamSet.zeros_like(params)

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, g, m, v, s1, s2 in zip(params.arrays(), grads.arrays(),
                                      self.m.arrays(), self.v.arrays(),
                                      self._s1.arrays(), self._s2.arrays()):
            if p.shape != g.shape:
                raise ConfigurationError("gradient shape mismatch")
            # m = b1*m + (1-b1)*g ; v = b2*v + (1-b2)*g^2
            m *= b1
            np.multiply(g, 1.0 - b1, out=s1)
            m += s1
            v *= b2
            np.square(g, out=s1)
            s1 *= 1.0 - b2
            v += s1
            # p -= lr * (m/bc1) / (sqrt(v/bc2) + eps)
            np.divide(m, bc1, out=s1)
            s1 *= self.lr
            np.divide(v, bc2, out=s2)
            np.sqrt(s2, out=s2)
            s2 += self.eps
            s1 /= s2
            p -= s1
