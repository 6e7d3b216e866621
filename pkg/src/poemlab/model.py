"""Small ReLU classifier with an energy-regularized loss and manual backprop.

Shapes: inputs are (B, d); encoder weights are stored (in, out) so a layer
is ``relu(x @ W + b)``; the classification head W_h is (m, K) with no bias,
so logits are ``phi @ W_h``. Class labels are 1..K.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import NonFiniteGradient

# ID energies are pushed below m_in, outliers above m_out; see README "Energy margins"
DEFAULT_M_IN = -25.0
DEFAULT_M_OUT = -7.0
DEFAULT_BETA = 0.1


@dataclass
class EnergyModel:
    weights: list
    biases: list
    head: np.ndarray
    m_in: float = DEFAULT_M_IN
    m_out: float = DEFAULT_M_OUT
    beta: float = DEFAULT_BETA
    # fixed affine input standardization, not trained
    input_shift: np.ndarray = None
    input_scale: np.ndarray = None

    def __post_init__(self):
        d = self.weights[0].shape[0]
        self.input_shift = np.zeros(d) if self.input_shift is None else np.asarray(self.input_shift, float)
        self.input_scale = np.ones(d) if self.input_scale is None else np.asarray(self.input_scale, float)

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def feature_dim(self):
        return self.head.shape[0]

    @property
    def num_classes(self):
        return self.head.shape[1]

    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        out.append(self.head)
        return out

    def param_names(self):
        names = []
        for i in range(len(self.weights)):
            names += [f"layer{i}.weight", f"layer{i}.bias"]
        names.append("head.weight")
        return names

    def decay_mask(self):
        """True for tensors that receive weight decay (weights, not biases)."""
        return [not name.endswith(".bias") for name in self.param_names()]

    def copy(self):
        return EnergyModel(
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
            head=self.head.copy(),
            m_in=self.m_in, m_out=self.m_out, beta=self.beta,
            input_shift=self.input_shift.copy(), input_scale=self.input_scale.copy(),
        )


def init_model(dims, num_classes, rng, m_in=DEFAULT_M_IN, m_out=DEFAULT_M_OUT, beta=DEFAULT_BETA,
               input_shift=None, input_scale=None):
    """He-scaled Gaussian init. `dims` lists encoder widths, e.g. (2, 32, 32)."""
    if len(dims) < 2:
        raise ValueError("need at least an input and a feature width")
    if num_classes < 2:
        raise ValueError("K must be >= 2")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    head = rng.standard_normal((dims[-1], num_classes)) * np.sqrt(1.0 / dims[-1])
    return EnergyModel(weights, biases, head, m_in=m_in, m_out=m_out, beta=beta,
                       input_shift=input_shift, input_scale=input_scale)


def _standardize(model, x):
    return (np.asarray(x, dtype=np.float64) - model.input_shift) / model.input_scale


def encode(model, x):
    h = _standardize(model, x)
    for W, b in zip(model.weights, model.biases):
        h = np.maximum(h @ W + b, 0.0)
    return h


def forward(model, x):
    """Return (phi, logits). Accepts a single vector or a (B, d) batch."""
    x = np.asarray(x, dtype=np.float64)
    phi = encode(model, x)
    return phi, phi @ model.head


def energy(logits):
    """-logsumexp over the last axis."""
    return -logsumexp(np.asarray(logits, dtype=np.float64), axis=-1)


def ood_score(model, x):
    """Negative energy; higher means more in-distribution."""
    return -energy(forward(model, x)[1])


def predict(model, x):
    """Argmax class in 1..K (lowest index wins ties)."""
    return np.argmax(forward(model, x)[1], axis=-1) + 1


def reg_loss(id_energies, out_energies, m_in, m_out):
    id_e = np.asarray(id_energies, dtype=np.float64)
    out_e = np.asarray(out_energies, dtype=np.float64)
    total = 0.0
    if id_e.size:
        total += np.mean(np.maximum(0.0, id_e - m_in) ** 2)
    if out_e.size:
        total += np.mean(np.maximum(0.0, m_out - out_e) ** 2)
    return float(total)


def cross_entropy(logits, labels):
    """Mean of -log softmax at the (1-based) label."""
    logits = np.atleast_2d(logits)
    idx = np.asarray(labels, dtype=int) - 1
    lse = logsumexp(logits, axis=1)
    return float(np.mean(lse - logits[np.arange(len(idx)), idx]))


@dataclass
class Batch:
    id_inputs: np.ndarray
    labels: np.ndarray
    outlier_inputs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def total_loss(model, batch):
    """Cross-entropy on ID samples plus beta times the energy hinge loss."""
    _, id_logits = forward(model, batch.id_inputs)
    loss = cross_entropy(id_logits, batch.labels)
    if model.beta:
        out_e = np.zeros(0)
        if len(batch.outlier_inputs):
            out_e = energy(forward(model, batch.outlier_inputs)[1])
        loss += model.beta * reg_loss(energy(id_logits), out_e, model.m_in, model.m_out)
    return loss


def _forward_cached(model, x):
    acts = [_standardize(model, x)]
    pre = []
    h = acts[0]
    for W, b in zip(model.weights, model.biases):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre, h @ model.head


def loss_and_grads(model, batch):
    """Loss value and gradients (same order as model.params()), no weight decay."""
    n_in = len(batch.id_inputs)
    n_out = len(batch.outlier_inputs)
    x = batch.id_inputs if n_out == 0 else np.concatenate([batch.id_inputs, batch.outlier_inputs])
    acts, pre, logits = _forward_cached(model, x)
    probs = softmax(logits, axis=1)
    E = energy(logits)

    id_logits = logits[:n_in]
    idx = np.asarray(batch.labels, dtype=int) - 1
    loss = cross_entropy(id_logits, batch.labels)

    g_logits = np.zeros_like(logits)
    g_logits[:n_in] = probs[:n_in]
    g_logits[np.arange(n_in), idx] -= 1.0
    g_logits[:n_in] /= n_in

    if model.beta:
        loss += model.beta * reg_loss(E[:n_in], E[n_in:], model.m_in, model.m_out)
        # dE/dlogits = -softmax
        h_in = np.maximum(0.0, E[:n_in] - model.m_in)
        g_E = np.zeros_like(E)
        g_E[:n_in] = model.beta * 2.0 * h_in / n_in
        if n_out:
            h_out = np.maximum(0.0, model.m_out - E[n_in:])
            g_E[n_in:] = -model.beta * 2.0 * h_out / n_out
        g_logits -= g_E[:, None] * probs

    grads_rev = [acts[-1].T @ g_logits]
    g_h = g_logits @ model.head.T
    for layer in range(len(model.weights) - 1, -1, -1):
        g_z = g_h * (pre[layer] > 0)
        grads_rev.append(g_z.sum(axis=0))
        grads_rev.append(acts[layer].T @ g_z)
        if layer:
            g_h = g_z @ model.weights[layer].T
    grads = grads_rev[::-1]
    return float(loss), grads


class SGDNesterov:
    """SGD with Nesterov momentum and L2 weight decay (PyTorch update rule)."""

    def __init__(self, model, lr=0.05, momentum=0.9, weight_decay=1e-4):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p) for p in model.params()]
        self.decay_mask = model.decay_mask()

    def step(self, params, grads):
        for p, g, v, decay in zip(params, grads, self.velocity, self.decay_mask):
            if decay and self.weight_decay:
                g = g + self.weight_decay * p
            if self.momentum:
                v *= self.momentum
                v += g
                g = g + self.momentum * v
            p -= self.lr * g


def backward_and_step(model, optim, batch):
    """One optimizer step in place; returns the pre-step loss."""
    loss, grads = loss_and_grads(model, batch)
    for name, g in zip(model.param_names(), grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name} (loss={loss!r})")
    optim.step(model.params(), grads)
    return loss


CHECKPOINT_MAGIC = b"POEMCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, extra_arrays=None, meta=None):
    """Write a JSON header followed by one flat little-endian float64 blob.

    Layout: magic, uint32 LE header length, UTF-8 JSON header, data. The
    header's `manifest` lists (name, shape, offset) for every array.
    """
    arrays = list(zip(model.param_names(), model.params()))
    arrays += [("input.shift", model.input_shift), ("input.scale", model.input_scale)]
    for name, arr in (extra_arrays or {}).items():
        arrays.append((name, np.asarray(arr, dtype=np.float64)))
    manifest, offset = [], 0
    for name, arr in arrays:
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = {
        "schema_version": CHECKPOINT_VERSION,
        "dims": [model.input_dim] + [W.shape[1] for W in model.weights],
        "num_classes": model.num_classes,
        "hyperparameters": {"m_in": model.m_in, "m_out": model.m_out, "beta": model.beta},
        "manifest": manifest,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    flat = np.concatenate([a.ravel() for _, a in arrays]) if arrays else np.zeros(0)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path):
    """Return (model, extra_arrays, header)."""
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a poemlab checkpoint")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    arrays = {}
    for entry in header["manifest"]:
        size = int(np.prod(entry["shape"], dtype=int))
        arrays[entry["name"]] = flat[entry["offset"]:entry["offset"] + size].reshape(entry["shape"])
    n_layers = len(header["dims"]) - 1
    hp = header["hyperparameters"]
    model = EnergyModel(
        weights=[arrays.pop(f"layer{i}.weight") for i in range(n_layers)],
        biases=[arrays.pop(f"layer{i}.bias") for i in range(n_layers)],
        head=arrays.pop("head.weight"),
        m_in=hp["m_in"], m_out=hp["m_out"], beta=hp["beta"],
        input_shift=arrays.pop("input.shift"), input_scale=arrays.pop("input.scale"),
    )
    return model, arrays, header
