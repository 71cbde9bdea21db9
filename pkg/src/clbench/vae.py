"""Symmetric variational autoencoder used for generative replay.

Encoder and decoder are MLPs whose hidden widths match the classifier's.
The encoder emits a mean vector and a log-variance vector over the latent
units (log-variance rather than sigma, for unconstrained optimization); the
decoder ends in a sigmoid so sampled pixels live in (0, 1). The minimized
per-sample loss is binary-cross-entropy reconstruction plus the KL of the
posterior against the standard-normal prior.
"""

import numpy as np

from .nn import ConfigurationError, ParamSet, NumericError, relu
from .losses import sigmoid
from .replay import compose_loss

N_LATENT = 100


class VAE:
    """Parameter order: enc hidden 1, enc hidden 2, mu head, logvar head,
    dec hidden 1, dec hidden 2, dec output."""

    def __init__(self, params, n_latent=N_LATENT):
        self.params = params
        self.n_latent = n_latent

    @classmethod
    def create(cls, n_pixels, n_hidden, rng, n_latent=N_LATENT, dtype=np.float32):
        sizes = [(n_pixels, n_hidden), (n_hidden, n_hidden),
                 (n_hidden, n_latent), (n_hidden, n_latent),
                 (n_latent, n_hidden), (n_hidden, n_hidden), (n_hidden, n_pixels)]
        weights, biases = [], []
        for nin, nout in sizes:
            bound = 1.0 / np.sqrt(nin)
            weights.append(rng.uniform(-bound, bound, size=(nin, nout)).astype(dtype))
            biases.append(np.zeros(nout, dtype=dtype))
        return cls(ParamSet(weights, biases), n_latent)

    @property
    def n_pixels(self):
        return self.params.weights[0].shape[0]

    def copy(self):
        return VAE(self.params.copy(), self.n_latent)

    def _encode(self, x):
        w, b = self.params.weights, self.params.biases
        pre1 = x @ w[0] + b[0]
        h1 = relu(pre1)
        pre2 = h1 @ w[1] + b[1]
        h2 = relu(pre2)
        mu = h2 @ w[2] + b[2]
        logvar = h2 @ w[3] + b[3]
        return pre1, h1, pre2, h2, mu, logvar

    def _decode(self, z):
        w, b = self.params.weights, self.params.biases
        pre1 = z @ w[4] + b[4]
        h1 = relu(pre1)
        pre2 = h1 @ w[5] + b[5]
        h2 = relu(pre2)
        logits = h2 @ w[6] + b[6]
        return pre1, h1, pre2, h2, logits

    def loss(self, x, eps):
        """Scalar training loss (batch mean), with ``eps`` the fixed
        reparameterization draw of shape (batch, n_latent)."""
        return self._loss_impl(x, eps, with_grads=False)

    def loss_and_grads(self, x, eps):
        return self._loss_impl(x, eps, with_grads=True)

    def _loss_impl(self, x, eps, with_grads):
        if np.any(x < 0) or np.any(x > 1):
            raise ConfigurationError("input pixels must lie in [0, 1]")
        n = len(x)
        pre1e, h1e, pre2e, h2e, mu, logvar = self._encode(x)
        sig = np.exp(0.5 * logvar)
        z = mu + sig * eps
        pre1d, h1d, pre2d, h2d, logits = self._decode(z)
        # recon: sum_p softplus(l) - x*l == binary cross entropy vs sigmoid(l)
        recon = (np.logaddexp(0.0, logits) - x * logits).sum(axis=1)
        kl = 0.5 * (np.square(mu) + np.exp(logvar) - logvar - 1.0).sum(axis=1)
        loss = float((recon + kl).mean())
        if not np.isfinite(loss):
            raise NumericError("non-finite generator loss")
        if not with_grads:
            return loss

        w = self.params.weights
        grads = ParamSet.zeros_like(self.params)
        gw, gb = grads.weights, grads.biases
        dlogits = (sigmoid(logits) - x) / n
        gw[6] = h2d.T @ dlogits
        gb[6] = dlogits.sum(axis=0)
        d = (dlogits @ w[6].T) * (pre2d > 0)
        gw[5] = h1d.T @ d
        gb[5] = d.sum(axis=0)
        d = (d @ w[5].T) * (pre1d > 0)
        gw[4] = z.T @ d
        gb[4] = d.sum(axis=0)
        dz = d @ w[4].T
        dmu = mu / n + dz
        dlogvar = 0.5 * (np.exp(logvar) - 1.0) / n + dz * eps * 0.5 * sig
        gw[2] = h2e.T @ dmu
        gb[2] = dmu.sum(axis=0)
        gw[3] = h2e.T @ dlogvar
        gb[3] = dlogvar.sum(axis=0)
        d = (dmu @ w[2].T + dlogvar @ w[3].T) * (pre2e > 0)
        gw[1] = h1e.T @ d
        gb[1] = d.sum(axis=0)
        d = (d @ w[1].T) * (pre1e > 0)
        gw[0] = x.T @ d
        gb[0] = d.sum(axis=0)
        return loss, grads

    def sample(self, n, rng):
        """Decode standard-normal latents; pixels are the sigmoid decoder means."""
        z = rng.standard_normal((n, self.n_latent)).astype(self.params.weights[0].dtype)
        *_, logits = self._decode(z)
        return sigmoid(logits)


def save_pgm_grid(images, path, cols=8):
    """Write square grayscale images as one binary PGM grid for eyeballing."""
    n, d = images.shape
    side = int(round(np.sqrt(d)))
    if side * side != d:
        raise ConfigurationError("samples are not square images")
    rows = (n + cols - 1) // cols
    grid = np.zeros((rows * side, cols * side), dtype=np.uint8)
    pix = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        grid[r * side:(r + 1) * side, c * side:(c + 1) * side] = \
            pix[i].reshape(side, side)
    with open(path, "wb") as f:
        f.write(f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode())
        f.write(grid.tobytes())


def train_generator(vae, optimizer, sample_inputs, prev_vae, n_tasks_so_far,
                    iters, batch_size, rng):
    """Train the generator on the current task with self-replay.

    ``sample_inputs(n)`` yields current-task images; from the second task on,
    each iteration also replays ``batch_size`` samples from the previous
    generator snapshot, with losses mixed by the 1/N rule. Returns the
    per-iteration (mixed) loss history.
    """
    history = np.empty(iters)
    for it in range(iters):
        x = sample_inputs(batch_size)
        eps = rng.standard_normal((len(x), vae.n_latent)).astype(x.dtype)
        loss_cur, grads = vae.loss_and_grads(x, eps)
        if prev_vae is not None:
            xr = prev_vae.sample(batch_size, rng)
            epsr = rng.standard_normal((len(xr), vae.n_latent)).astype(xr.dtype)
            loss_rep, grads_rep = vae.loss_and_grads(xr, epsr)
            wc = 1.0 / n_tasks_so_far
            for g, gr in zip(grads.arrays(), grads_rep.arrays()):
                g *= wc
                g += (1.0 - wc) * gr
            history[it] = compose_loss(loss_cur, loss_rep, n_tasks_so_far)
        else:
            history[it] = loss_cur
        optimizer.step(vae.params, grads)
    return history
