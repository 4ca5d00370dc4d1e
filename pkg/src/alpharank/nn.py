"""Feed-forward value network scoring every alternative's action value.

The input encodes the four per-alternative statistic blocks plus the clamped
remaining budget (4N+1 coordinates); the output layer is logistic so each of
the N action values lies in (0, 1). Training minimizes binary cross-entropy
against rollout-estimated action values plus an L2 weight penalty, with
gradients from hand-written backpropagation and Adam updates.
"""

import json
from dataclasses import dataclass, field

import numpy as np

STAT_BLOCKS = 4                    # sample mean, sample var, post mean, post var
DEFAULT_HIDDEN = (64, 64, 64)
CLIP = 1e-7                        # keeps log() finite at saturated outputs
FORMAT_VERSION = 1


@dataclass(frozen=True)
class MlpModel:
    """Fully connected network: input 4N+1, rectifier hiddens, logistic output."""

    n: int
    weights: tuple     # per layer, shape (fan_in, fan_out)
    biases: tuple      # per layer, shape (fan_out,)

    @property
    def input_dim(self):
        return STAT_BLOCKS * self.n + 1

    @property
    def layer_widths(self):
        return (self.input_dim,) + tuple(w.shape[1] for w in self.weights)

    def check(self):
        widths = self.layer_widths
        if widths[-1] != self.n:
            raise ValueError("output width must equal the alternative count")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[l], widths[l + 1]) or b.shape != (widths[l + 1],):
                raise ValueError(f"layer {l} dimensions are inconsistent")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite parameters")
        return self


@dataclass(frozen=True)
class TrainingExample:
    input: np.ndarray      # (4N+1,)
    target: np.ndarray     # (N,) action values in [0, 1]


@dataclass
class AdamState:
    """Adam accumulators plus the training hyperparameters."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    reg: float = 1e-4      # L2 coefficient on weights in the loss


def init_model(n, rng, hidden=DEFAULT_HIDDEN):
    """Symmetric uniform initialization scaled by fan-in."""
    widths = (STAT_BLOCKS * n + 1,) + tuple(hidden) + (n,)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(n=n, weights=tuple(weights), biases=tuple(biases)).check()


def adam_init(model, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, reg=1e-4):
    return AdamState(m=[np.zeros_like(w) for w in list(model.weights) + list(model.biases)],
                     v=[np.zeros_like(w) for w in list(model.weights) + list(model.biases)],
                     lr=lr, beta1=beta1, beta2=beta2, eps=eps, reg=reg)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model, x):
    """Action values in (0,1)^N for one input vector or a matrix of them."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != model.input_dim:
        raise ValueError(f"input width {a.shape[1]} does not match model "
                         f"({model.input_dim})")
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w + b
        a = _sigmoid(a) if l == last else np.maximum(a, 0.0)
    return a[0] if single else a


def loss(v, q, model, reg):
    """Mean binary cross-entropy over alternatives plus the weight penalty."""
    v = np.clip(np.asarray(v, dtype=float), CLIP, 1.0 - CLIP)
    q = np.asarray(q, dtype=float)
    ce = -(q * np.log(v) + (1.0 - q) * np.log(1.0 - v)).mean(axis=-1)
    penalty = reg * sum(float((w * w).sum()) for w in model.weights)
    return float(ce.mean()) + penalty


def loss_and_grads(model, x, q, reg):
    """Batch loss and its gradients w.r.t. every weight and bias."""
    b = x.shape[0]
    last = len(model.weights) - 1
    acts = [x]
    a = x
    for l, (w, bias) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + bias
        a = _sigmoid(z) if l == last else np.maximum(z, 0.0)
        acts.append(a)
    v = acts[-1]
    total = loss(v, q, model, reg)
    # logistic output + cross-entropy collapse to (v - q), averaged over
    # batch rows and the N output units
    delta = (v - q) / (b * model.n)
    gw = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for l in range(last, -1, -1):
        gw[l] = acts[l].T @ delta + 2.0 * reg * model.weights[l]
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (acts[l] > 0)
    return total, gw, gb


def train_step(model, batch, adam):
    """One Adam update on a minibatch of TrainingExamples; returns the new
    model, state, and the pre-update loss."""
    if len(batch) == 0:
        raise ValueError("empty training batch")
    x = np.stack([ex.input for ex in batch])
    q = np.stack([ex.target for ex in batch])
    return train_step_arrays(model, x, q, adam)


def train_step_arrays(model, x, q, adam):
    """One Adam update from stacked input/target arrays.

    Raises on non-finite gradients rather than silently corrupting the model.
    """
    value, gw, gb = loss_and_grads(model, x, q, adam.reg)
    grads = gw + gb
    params = list(model.weights) + list(model.biases)
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise FloatingPointError("non-finite gradient; inspect the training data")
    t = adam.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, adam.m, adam.v):
        m = adam.beta1 * m + (1 - adam.beta1) * g
        v = adam.beta2 * v + (1 - adam.beta2) * g * g
        mhat = m / (1 - adam.beta1 ** t)
        vhat = v / (1 - adam.beta2 ** t)
        new_params.append(p - adam.lr * mhat / (np.sqrt(vhat) + adam.eps))
        new_m.append(m)
        new_v.append(v)
    k = len(model.weights)
    new_model = MlpModel(n=model.n, weights=tuple(new_params[:k]),
                         biases=tuple(new_params[k:]))
    new_adam = AdamState(m=new_m, v=new_v, step=t, lr=adam.lr, beta1=adam.beta1,
                         beta2=adam.beta2, eps=adam.eps, reg=adam.reg)
    return new_model, new_adam, value


def encode_input(state, horizon):
    """State encoding [X-bar | s^2 | post mean | post var | clamped budget]."""
    budget = min(state.remaining, horizon) / horizon
    return np.concatenate([state.sample_mean, state.sample_var, state.post_mean,
                           state.post_var, [budget]])


def encode_batch(batch, horizon):
    budget = min(batch.remaining, horizon) / horizon
    col = np.full((batch.b, 1), budget)
    return np.concatenate([batch.sample_mean, batch.sample_var, batch.post_mean,
                           batch.post_var, col], axis=1)


def nn_next(model, state, horizon):
    """Allocate to the alternative with the largest predicted action value."""
    if model.n != state.n:
        raise ValueError(f"model is for {model.n} alternatives, state has {state.n}")
    return int(np.argmax(forward(model, encode_input(state, horizon))))


def save_model(model, path):
    """Write a versioned JSON document; floats round-trip exactly."""
    model.check()
    doc = {
        "format_version": FORMAT_VERSION,
        "n": model.n,
        "stat_blocks": STAT_BLOCKS,
        "layer_widths": list(model.layer_widths),
        "activations": ["relu"] * (len(model.weights) - 1) + ["sigmoid"],
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    return path


def load_model(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt model file {path}: {exc}") from exc
    for key in ("format_version", "n", "layer_widths", "weights", "biases"):
        if key not in doc:
            raise ValueError(f"model file {path} is missing field {key!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc['format_version']}")
    if doc.get("stat_blocks", STAT_BLOCKS) != STAT_BLOCKS:
        raise ValueError("model encodes a different statistic layout")
    widths = doc["layer_widths"]
    weights = tuple(np.asarray(flat, dtype=float).reshape(widths[l], widths[l + 1])
                    for l, flat in enumerate(doc["weights"]))
    biases = tuple(np.asarray(b, dtype=float) for b in doc["biases"])
    return MlpModel(n=int(doc["n"]), weights=weights, biases=biases).check()
