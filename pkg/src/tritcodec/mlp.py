"""Small windowed perceptron with manual gradients.

Both context models are one-hidden-layer tanh networks over flattened
per-channel spatial windows.  Gradients are hand-coded (and checked
against central finite differences in the test suite), training uses
minibatch Adam with seeded shuffling, and weights are rounded through
float32 after training so that in-memory models match their serialized
form bit for bit.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ParameterError


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def window_view(field, radius):
    """Zero-padded square windows per element: (C,H,W) -> (N, (2r+1)**2)."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3:
        raise ParameterError("window_view expects a (C, H, W) field")
    pad = np.pad(field, ((0, 0), (radius, radius), (radius, radius)))
    side = 2 * radius + 1
    win = sliding_window_view(pad, (side, side), axis=(1, 2))
    n = field.shape[0] * field.shape[1] * field.shape[2]
    return win.reshape(n, side * side)


class Mlp:
    """x @ w1 + b1 -> tanh -> @ w2 + b2.

    ``zero_output`` starts the output layer at zero, so the untrained
    network is the zero function; useful when zero output means an
    identity refinement that training can only improve on.
    """

    def __init__(self, n_in, n_hidden, n_out, seed=0, zero_output=False):
        rng = np.random.default_rng(seed)
        s1 = 1.0 / np.sqrt(n_in)
        s2 = 1.0 / np.sqrt(max(n_hidden, 1))
        self.w1 = rng.normal(0.0, s1, size=(n_in, n_hidden))
        self.b1 = np.zeros(n_hidden)
        if zero_output:
            self.w2 = np.zeros((n_hidden, n_out))
        else:
            self.w2 = rng.normal(0.0, s2, size=(n_hidden, n_out))
        self.b2 = np.zeros(n_out)

    @property
    def dims(self):
        return (self.w1.shape[0], self.w1.shape[1], self.w2.shape[1])

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x, keep_hidden=False):
        h = np.tanh(x @ self.w1 + self.b1)
        out = h @ self.w2 + self.b2
        return (out, h) if keep_hidden else out

    def backward(self, x, h, g_out):
        """Gradients of a scalar loss given d(loss)/d(out)."""
        g_w2 = h.T @ g_out
        g_b2 = g_out.sum(axis=0)
        g_h = (g_out @ self.w2.T) * (1.0 - h * h)
        g_w1 = x.T @ g_h
        g_b1 = g_h.sum(axis=0)
        return [g_w1, g_b1, g_w2, g_b2]

    def zero_weights(self):
        for p in self.params():
            p[:] = 0.0
        return self

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec):
        off = 0
        for p in self.params():
            p[:] = vec[off : off + p.size].reshape(p.shape)
            off += p.size
        if off != vec.size:
            raise ParameterError("flat vector size mismatch")

    def round_f32(self):
        for p in self.params():
            p[:] = p.astype(np.float32).astype(np.float64)
        return self

    def copy(self):
        out = Mlp.__new__(Mlp)
        out.w1 = self.w1.copy()
        out.b1 = self.b1.copy()
        out.w2 = self.w2.copy()
        out.b2 = self.b2.copy()
        return out


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.b1 = beta1
        self.b2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def finite_difference_grads(loss_fn, model, step=1e-5):
    """Central finite differences of loss_fn() over every weight."""
    theta = model.flat()
    grads = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        model.set_flat(theta)
        up = loss_fn()
        theta[i] = orig - step
        model.set_flat(theta)
        down = loss_fn()
        theta[i] = orig
        grads[i] = (up - down) / (2.0 * step)
    model.set_flat(theta)
    return grads


def train_minibatch(model, loss_grad_fn, eval_fn, n_train, epochs, batch_size, seed):
    """Generic seeded minibatch loop keeping the best held-out weights.

    ``loss_grad_fn(idx)`` returns (loss, grads) for a batch of training
    indices, ``eval_fn()`` the held-out loss.  Returns (best_model, curve)
    where curve rows are (epoch, train_loss, holdout_loss).
    """
    rng = np.random.default_rng(seed)
    opt = Adam(model.params())
    best = model.copy()
    best_loss = float(eval_fn())
    curve = [(0, float("nan"), best_loss)]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n_train)
        losses = []
        for a in range(0, n_train, batch_size):
            idx = order[a : a + batch_size]
            loss, grads = loss_grad_fn(idx)
            if not np.isfinite(loss):
                raise DataError(f"training diverged at epoch {epoch} (loss={loss})")
            opt.step(model.params(), grads)
            losses.append(loss)
        hold = float(eval_fn())
        curve.append((epoch, float(np.mean(losses)), hold))
        if hold < best_loss:
            best_loss = hold
            best = model.copy()
    best.round_f32()
    return best, curve
