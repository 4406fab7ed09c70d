"""Fully-connected network machinery shared by the learning modules.

A network is a list of (W, b) numpy pairs described by an MlpSpec.
Forward evaluation happens on the autodiff tape; a tangent-propagation
variant returns the derivative of the outputs with respect to the
scalar input alongside the outputs, which is what the physics losses
differentiate. Training is Adam followed by an optional L-BFGS
refinement, both deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk


class TrainingDivergedError(Exception):
    """Loss became non-finite; carries the history up to the failure."""

    def __init__(self, history):
        super().__init__("training loss became non-finite")
        self.history = list(history)


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input to output, tanh or sin hidden activations.

    Sine activations carry an `omega0` first-layer frequency scale;
    they are what the shipped configs use on the 120 s working record,
    where tanh units cannot reach the ~30 oscillation cycles present.
    """

    widths: tuple = (1, 32, 32, 32, 2)
    activation: str = "tanh"
    omega0: float = 60.0

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be positive")
        if self.activation not in ("tanh", "sin"):
            raise ValueError("activation must be 'tanh' or 'sin'")

    @property
    def n_in(self):
        return self.widths[0]

    @property
    def n_out(self):
        return self.widths[-1]


def init_params(spec: MlpSpec, stream: nk.RngStream):
    """Deterministic init: Xavier for tanh, frequency-scaled for sin."""
    params = []
    for i, (n_in, n_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        if spec.activation == "sin" and i == 0 and len(spec.widths) > 2:
            W = stream.uniform(-spec.omega0, spec.omega0, size=(n_in, n_out))
            b = stream.uniform(-np.pi, np.pi, size=n_out)
        else:
            bound = np.sqrt(6.0 / (n_in + n_out))
            W = stream.uniform(-bound, bound, size=(n_in, n_out))
            b = np.zeros(n_out)
        params.append((W, b))
    return params


def leaf_params(tape: nk.Tape, params):
    return [(tape.leaf(W), tape.leaf(b)) for W, b in params]


def mlp_apply(spec: MlpSpec, param_nodes, x):
    """Feed-forward pass on the tape; x is a (N, n_in) node."""
    act = nk.sin if spec.activation == "sin" else nk.tanh
    h = x
    for W, b in param_nodes[:-1]:
        h = act(h @ W + b)
    W, b = param_nodes[-1]
    return h @ W + b


def mlp_apply_tangent(spec: MlpSpec, param_nodes, x):
    """Forward pass plus d(output)/d(input) for single-input networks.

    Propagates the input tangent through each layer,
    s_l = (s_{l-1} W_l) ⊙ σ'(a_l), so the returned derivative is an
    ordinary tape expression and stays differentiable with respect to
    the parameters.
    """
    if x.value.ndim != 2 or x.value.shape[1] != 1:
        raise ValueError("tangent propagation expects (N, 1) inputs")
    h = x
    s = x.tape.constant(np.ones_like(x.value))
    for W, b in param_nodes[:-1]:
        a = h @ W + b
        if spec.activation == "sin":
            h = nk.sin(a)
            s = (s @ W) * nk.cos(a)
        else:
            h = nk.tanh(a)
            s = (s @ W) * (1.0 - h * h)
    W, b = param_nodes[-1]
    return h @ W + b, s @ W


def mlp_predict(spec: MlpSpec, params, x):
    """Plain numpy forward pass for frozen parameters."""
    act = np.sin if spec.activation == "sin" else np.tanh
    h = np.asarray(x, dtype=float)
    for W, b in params[:-1]:
        h = act(h @ W + b)
    W, b = params[-1]
    return h @ W + b


def observation_loss(pred, obs):
    """Mean squared residual norm over observed points.

    pred is a tape node of shape (N, d) or (N,), obs the matching
    measured values; the result is (1/N)·Σ‖pred − obs‖².
    """
    n = pred.value.shape[0]
    if n == 0:
        raise ValueError("empty observation set")
    obs = np.asarray(obs, dtype=float)
    if obs.shape != pred.value.shape:
        raise ValueError(f"shape mismatch: {pred.value.shape} vs {obs.shape}")
    r = pred - pred.tape.constant(obs)
    return nk.vsum(r * r) / float(n)


@dataclass(frozen=True)
class Normalization:
    """Affine input/output scaling: time to [-1, 1], outputs z-scored."""

    t_center: float
    t_half: float
    z_mean: np.ndarray
    z_std: np.ndarray

    @classmethod
    def from_data(cls, t, z=None, n_out=2):
        t = np.asarray(t, dtype=float)
        t_center = 0.5 * (t.max() + t.min())
        t_half = 0.5 * (t.max() - t.min())
        if t_half == 0.0:
            t_half = 1.0
        if z is None:
            z_mean = np.zeros(n_out)
            z_std = np.ones(n_out)
        else:
            z = np.asarray(z, dtype=float).reshape(len(z), -1)
            z_mean = z.mean(axis=0)
            z_std = z.std(axis=0)
            z_std = np.where(z_std > 0, z_std, 1.0)
        return cls(t_center, t_half, z_mean, z_std)

    @classmethod
    def identity(cls, n_out=2):
        return cls(0.0, 1.0, np.zeros(n_out), np.ones(n_out))

    def t_in(self, t):
        return (np.asarray(t, dtype=float) - self.t_center) / self.t_half

    def z_out(self, z_hat):
        return self.z_mean + self.z_std * z_hat


@dataclass
class TrainConfig:
    """Adam schedule plus optional L-BFGS refinement, fully pinned."""

    adam_iters: int = 5000
    adam_lr: float = 1e-3
    lbfgs_iters: int = 500
    seed: int = 0
    normalization: Normalization = None
    log_every: int = 0

    def __post_init__(self):
        if self.adam_iters + self.lbfgs_iters < 1:
            raise ValueError("iteration budget must be >= 1")


def flatten(arrays):
    metas = [(a.shape, a.size) for a in arrays]
    return np.concatenate([np.ravel(a) for a in arrays]), metas


def unflatten(theta, metas):
    out = []
    pos = 0
    for shape, size in metas:
        out.append(theta[pos:pos + size].reshape(shape))
        pos += size
    return out


def pairs_to_arrays(params):
    return [a for pair in params for a in pair]


def arrays_to_pairs(arrays):
    return [(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]


def fit_arrays(arrays0, loss_builder, config: TrainConfig):
    """Train a list of arrays against a tape-loss builder.

    `loss_builder(tape, leaves)` gets one leaf per input array and must
    return a scalar loss node; a fresh tape is built per iteration.
    Returns (trained arrays, loss history).
    """
    arrays0 = [np.asarray(a, dtype=float) for a in arrays0]
    flat, metas = flatten(arrays0)

    def closure(theta):
        tape = nk.Tape()
        leaves = [tape.leaf(a) for a in unflatten(theta, metas)]
        loss = loss_builder(tape, leaves)
        gs = nk.backward(loss, leaves)
        return float(loss.value), np.concatenate([np.ravel(g) for g in gs])

    theta, history = train(closure, flat, config)
    return unflatten(theta, metas), history


def adam(closure, theta0, iters, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
         history=None, log_every=0):
    """Deterministic Adam on a closure theta -> (loss, grad)."""
    theta = np.array(theta0, dtype=float)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    history = [] if history is None else history
    for t in range(1, iters + 1):
        loss, g = closure(theta)
        if not np.isfinite(loss):
            raise TrainingDivergedError(history)
        history.append(float(loss))
        if log_every and t % log_every == 0:
            print(f"adam iter {t}: loss {loss:.6g}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta, history


def lbfgs(closure, theta0, iters, memory=10, c1=1e-4, max_linesearch=25,
          gtol=1e-12, history=None, log_every=0):
    """Limited-memory BFGS with Armijo backtracking; deterministic."""
    theta = np.array(theta0, dtype=float)
    history = [] if history is None else history
    loss, g = closure(theta)
    if not np.isfinite(loss):
        raise TrainingDivergedError(history)
    history.append(float(loss))
    pairs = []
    for it in range(iters):
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(pairs):
            a = rho * (s @ q)
            q -= a * y
            alphas.append(a)
        if pairs:
            s, y, _ = pairs[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(pairs, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        slope = g @ d
        if not np.isfinite(slope) or slope >= 0.0:
            d = -g
            slope = g @ d
        if slope >= 0.0:
            break
        step = 1.0
        accepted = False
        for _ in range(max_linesearch):
            theta_new = theta + step * d
            loss_new, g_new = closure(theta_new)
            if np.isfinite(loss_new) and loss_new <= loss + c1 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        s_vec = theta_new - theta
        y_vec = g_new - g
        sy = s_vec @ y_vec
        if sy > 1e-10 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            pairs.append((s_vec, y_vec, 1.0 / sy))
            if len(pairs) > memory:
                pairs.pop(0)
        theta, loss, g = theta_new, loss_new, g_new
        history.append(float(loss))
        if log_every and (it + 1) % log_every == 0:
            print(f"lbfgs iter {it + 1}: loss {loss:.6g}")
        if np.linalg.norm(g) < gtol:
            break
    return theta, history


def train(closure, theta0, config: TrainConfig):
    """Adam then optional L-BFGS; returns (theta, loss history)."""
    history = []
    theta = np.array(theta0, dtype=float)
    if config.adam_iters > 0:
        theta, history = adam(closure, theta, config.adam_iters,
                              lr=config.adam_lr, history=history,
                              log_every=config.log_every)
    if config.lbfgs_iters > 0:
        theta, history = lbfgs(closure, theta, config.lbfgs_iters,
                               history=history, log_every=config.log_every)
    return theta, history


def save_checkpoint(path, params, names=None):
    """Named-tensor CSV: rows of name, ndim, dims..., values..."""
    rows = []
    for i, (W, b) in enumerate(params):
        base = names[i] if names else f"layer{i}"
        for suffix, arr in (("W", W), ("b", b)):
            arr = np.asarray(arr, dtype=float)
            dims = ",".join(str(d) for d in arr.shape)
            vals = ",".join(f"{x:.17g}" for x in arr.ravel())
            rows.append(f"{base}.{suffix},{arr.ndim},{dims},{vals}")
    with open(path, "w", newline="") as fh:
        fh.write("name,ndim,dims...,values...\n")
        fh.write("\n".join(rows) + "\n")


def load_checkpoint(path):
    params = {}
    with open(path) as fh:
        next(fh)
        for line in fh:
            cells = line.strip().split(",")
            name = cells[0]
            ndim = int(cells[1])
            dims = tuple(int(d) for d in cells[2:2 + ndim])
            vals = np.array([float(x) for x in cells[2 + ndim:]])
            params[name] = vals.reshape(dims)
    layers = sorted({n.rsplit(".", 1)[0] for n in params},
                    key=lambda s: int(s.replace("layer", "")))
    return [(params[f"{n}.W"], params[f"{n}.b"]) for n in layers]


def save_loss_history(path, history):
    with open(path, "w", newline="") as fh:
        fh.write("iter,loss\n")
        for i, loss in enumerate(history):
            fh.write(f"{i},{loss:.17g}\n")
