"""Neural-network core with reverse-mode gradients, written on bare numpy.

Layers cache what their backward pass needs, so a network is used as
forward -> backward -> read gradients. Convolutions are expressed as a
small sum of shifted matrix products instead of an explicit im2col
buffer; with kernels of length 2..5 this is both faster and simpler.
The two-branch gesture classifiers (four variants) process the Doppler
band and the proximity raster separately and meet in a dense head.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .core import FeatureTensor
from .errors import DivergenceError, ShapeMismatch

INITIALIZERS = (
    "he-normal",
    "he-uniform",
    "glorot-normal",
    "glorot-uniform",
    "lecun-normal",
    "lecun-uniform",
)

MODEL_IDS = ("M1", "M2", "M3", "M4")
MODALITIES = ("fused", "doppler-only", "ir-only")

FILTER_CHOICES = (8, 16, 32, 64)
KERNEL_CHOICES = (2, 3, 5)
HIDDEN_CHOICES = (32, 64, 128, 256, 512)


@dataclass(frozen=True)
class HyperParams:
    """Searchable training knobs shared by all four architectures."""

    l2: float = 0.001
    lr_exponent: int = -3
    n_filters: int = 16
    kernel_size: int = 3
    dropout_p: float = 0.2
    hidden_units: int = 128
    initializer: str = "he-normal"

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if not (isinstance(self.lr_exponent, (int, np.integer))
                and -6 <= self.lr_exponent <= 0):
            raise ValueError("lr_exponent must be an integer in [-6, 0]")
        if self.n_filters not in FILTER_CHOICES:
            raise ValueError("n_filters must be one of %s" % (FILTER_CHOICES,))
        if self.kernel_size not in KERNEL_CHOICES:
            raise ValueError("kernel_size must be one of %s" % (KERNEL_CHOICES,))
        if not 0.0 <= self.dropout_p <= 0.99:
            raise ValueError("dropout_p must lie in [0, 0.99]")
        if self.hidden_units not in HIDDEN_CHOICES:
            raise ValueError("hidden_units must be one of %s" % (HIDDEN_CHOICES,))
        if self.initializer not in INITIALIZERS:
            raise ValueError("unknown initializer %r" % self.initializer)

    @property
    def learning_rate(self) -> float:
        return 10.0 ** self.lr_exponent


def _fans(shape) -> tuple[int, int]:
    if len(shape) == 2:  # dense [in, out]
        return shape[0], shape[1]
    if len(shape) == 3:  # conv1d [k, in_ch, out_ch]
        return shape[0] * shape[1], shape[0] * shape[2]
    if len(shape) == 4:  # conv2d [kh, kw, in_ch, out_ch]
        return shape[0] * shape[1] * shape[2], shape[0] * shape[1] * shape[3]
    raise ValueError("cannot derive fan-in/fan-out for shape %s" % (shape,))


def init_weights(initializer: str, shape, rng) -> np.ndarray:
    """Draw a weight tensor; uniform variants match the normal's variance."""
    if initializer not in INITIALIZERS:
        raise ValueError("unknown initializer %r" % initializer)
    fan_in, fan_out = _fans(tuple(shape))
    family, _, form = initializer.partition("-")
    var = {"he": 2.0 / fan_in,
           "glorot": 2.0 / (fan_in + fan_out),
           "lecun": 1.0 / fan_in}[family]
    if form == "normal":
        return rng.normal(0.0, np.sqrt(var), size=shape)
    bound = np.sqrt(3.0 * var)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# layers

class Layer:
    """Uniform interface; stateless layers leave params empty."""

    penalized = False  # include weights in the L2 term?

    def params(self) -> list:
        return []

    def grads(self) -> list:
        return []

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in, n_out, initializer, rng, penalized=False):
        self.W = init_weights(initializer, (n_in, n_out), rng)
        self.b = np.zeros(n_out)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self.penalized = penalized

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.gW, self.gb]

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise ShapeMismatch("dense expects [batch, %d], got %s"
                                % (self.W.shape[0], x.shape))
        self._x = x
        return x @ self.W + self.b

    def backward(self, grad_out):
        self.gW[...] = self._x.T @ grad_out
        self.gb[...] = grad_out.sum(axis=0)
        return grad_out @ self.W.T


class Conv1D(Layer):
    """Valid cross-correlation over the time axis, channels last.

    Input [batch, length, channels] -> [batch, length - k + 1, filters].
    """

    penalized = True

    def __init__(self, n_in, n_filters, kernel_size, initializer, rng):
        self.W = init_weights(initializer, (kernel_size, n_in, n_filters), rng)
        self.b = np.zeros(n_filters)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.gW, self.gb]

    def forward(self, x, train=False, rng=None):
        k, c_in, _ = self.W.shape
        if x.ndim != 3 or x.shape[2] != c_in or x.shape[1] < k:
            raise ShapeMismatch("conv1d expects [batch, length >= %d, %d], got %s"
                                % (k, c_in, x.shape))
        self._x = x
        n_out = x.shape[1] - k + 1
        out = np.broadcast_to(self.b, (x.shape[0], n_out, len(self.b))).copy()
        for j in range(k):
            out += x[:, j:j + n_out, :] @ self.W[j]
        return out

    def backward(self, grad_out):
        x = self._x
        k, c_in, n_f = self.W.shape
        n_out = grad_out.shape[1]
        grad_in = np.zeros_like(x)
        self.gb[...] = grad_out.sum(axis=(0, 1))
        g_flat = grad_out.reshape(-1, n_f)
        for j in range(k):
            patch = np.ascontiguousarray(x[:, j:j + n_out, :]).reshape(-1, c_in)
            self.gW[j] = patch.T @ g_flat
            grad_in[:, j:j + n_out, :] += grad_out @ self.W[j].T
        return grad_in


class Conv2D(Layer):
    """Valid cross-correlation over a [height, width] grid, channels last."""

    penalized = True

    def __init__(self, n_in, n_filters, kernel_size, initializer, rng):
        self.W = init_weights(
            initializer, (kernel_size, kernel_size, n_in, n_filters), rng)
        self.b = np.zeros(n_filters)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.gW, self.gb]

    def forward(self, x, train=False, rng=None):
        k = self.W.shape[0]
        if x.ndim != 4 or x.shape[3] != self.W.shape[2] \
                or x.shape[1] < k or x.shape[2] < k:
            raise ShapeMismatch("conv2d expects [batch, h >= %d, w >= %d, %d], got %s"
                                % (k, k, self.W.shape[2], x.shape))
        self._x = x
        h_out, w_out = x.shape[1] - k + 1, x.shape[2] - k + 1
        out = np.broadcast_to(
            self.b, (x.shape[0], h_out, w_out, len(self.b))).copy()
        for i in range(k):
            for j in range(k):
                out += x[:, i:i + h_out, j:j + w_out, :] @ self.W[i, j]
        return out

    def backward(self, grad_out):
        x = self._x
        k, _, c_in, n_f = self.W.shape
        h_out, w_out = grad_out.shape[1], grad_out.shape[2]
        grad_in = np.zeros_like(x)
        self.gb[...] = grad_out.sum(axis=(0, 1, 2))
        g_flat = grad_out.reshape(-1, n_f)
        for i in range(k):
            for j in range(k):
                patch = np.ascontiguousarray(
                    x[:, i:i + h_out, j:j + w_out, :]).reshape(-1, c_in)
                self.gW[i, j] = patch.T @ g_flat
                grad_in[:, i:i + h_out, j:j + w_out, :] += grad_out @ self.W[i, j].T
        return grad_in


class MaxPool1D(Layer):
    """Non-overlapping max over pairs along time; odd tail dropped."""

    def __init__(self, size=2):
        self.size = size

    def forward(self, x, train=False, rng=None):
        s = self.size
        n = (x.shape[1] // s) * s
        if n == 0:
            raise ShapeMismatch("pooling needs length >= %d, got %s" % (s, x.shape))
        self._in_shape = x.shape
        blocks = x[:, :n, :].reshape(x.shape[0], n // s, s, x.shape[2])
        self._argmax = blocks.argmax(axis=2)
        return blocks.max(axis=2)

    def backward(self, grad_out):
        s = self.size
        b, n_blocks, c = grad_out.shape
        blocks = np.zeros((b, n_blocks, s, c))
        np.put_along_axis(blocks, self._argmax[:, :, None, :], grad_out[:, :, None, :], axis=2)
        grad_in = np.zeros(self._in_shape)
        grad_in[:, :n_blocks * s, :] = blocks.reshape(b, n_blocks * s, c)
        return grad_in


class MaxPool2D(Layer):
    """Non-overlapping 2x2 max; odd edges dropped."""

    def __init__(self, size=2):
        self.size = size

    def forward(self, x, train=False, rng=None):
        s = self.size
        h, w = (x.shape[1] // s) * s, (x.shape[2] // s) * s
        if h == 0 or w == 0:
            raise ShapeMismatch("pooling needs h, w >= %d, got %s" % (s, x.shape))
        self._in_shape = x.shape
        b, c = x.shape[0], x.shape[3]
        blocks = x[:, :h, :, :][:, :, :w, :].reshape(b, h // s, s, w // s, s, c)
        flat = blocks.transpose(0, 1, 3, 2, 4, 5).reshape(b, h // s, w // s, s * s, c)
        self._argmax = flat.argmax(axis=3)
        self._dims = (h, w)
        return flat.max(axis=3)

    def backward(self, grad_out):
        s = self.size
        h, w = self._dims
        b, hb, wb, c = grad_out.shape
        flat = np.zeros((b, hb, wb, s * s, c))
        np.put_along_axis(flat, self._argmax[:, :, :, None, :], grad_out[:, :, :, None, :], axis=3)
        blocks = flat.reshape(b, hb, wb, s, s, c).transpose(0, 1, 3, 2, 4, 5)
        grad_in = np.zeros(self._in_shape)
        grad_in[:, :h, :w, :] = blocks.reshape(b, h, w, c)
        return grad_in


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out):
        return grad_out * self._mask


class Tanh(Layer):
    def forward(self, x, train=False, rng=None):
        self._out = np.tanh(x)
        return self._out

    def backward(self, grad_out):
        return grad_out * (1.0 - self._out ** 2)


class Dropout(Layer):
    """Inverted dropout: identity in eval mode, rescaled mask in train."""

    def __init__(self, p):
        if not 0.0 <= p <= 0.99:
            raise ValueError("dropout probability must lie in [0, 0.99]")
        self.p = p

    def forward(self, x, train=False, rng=None):
        if not train or self.p == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        self._mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._in_shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    probs = softmax(logits)
    n = len(labels)
    eps = 1e-12
    loss = -np.log(probs[np.arange(n), labels] + eps).mean()
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# ---------------------------------------------------------------------------
# the two-branch gesture classifiers

class GestureNet:
    """Doppler branch + proximity branch, concatenated into a dense head.

    Single-modality ablations drop the unused branch entirely; the network
    then ignores the batch argument belonging to the removed input.
    """

    def __init__(self, model_id, spectro_branch, ir_branch, dense_head,
                 n_classes, hparams, doppler_shape, ir_shape,
                 modality="fused"):
        if modality not in MODALITIES:
            raise ValueError("modality must be one of %s" % (MODALITIES,))
        self.model_id = model_id
        self.spectro_branch = spectro_branch
        self.ir_branch = ir_branch
        self.dense_head = dense_head
        self.n_classes = n_classes
        self.hparams = hparams
        self.doppler_shape = tuple(doppler_shape)
        self.ir_shape = tuple(ir_shape)
        self.modality = modality
        self.uses_doppler = modality != "ir-only"
        self.uses_ir = modality != "doppler-only"

    def layers(self):
        return [*self.spectro_branch, *self.ir_branch, *self.dense_head]

    def params(self):
        return [p for layer in self.layers() for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers() for g in layer.grads()]

    def _prep_doppler(self, doppler):
        x = np.asarray(doppler, dtype=np.float64)
        if x.shape[1:] != self.doppler_shape:
            raise ShapeMismatch("doppler batch %s != expected %s"
                                % (x.shape[1:], self.doppler_shape))
        if self.model_id == "M4":
            x = x[..., None]  # one image channel
        return x

    def forward(self, doppler, ir, train=False, rng=None):
        parts = []
        if self.uses_doppler:
            x = self._prep_doppler(doppler)
            for layer in self.spectro_branch:
                x = layer.forward(x, train, rng)
            parts.append(x)
        if self.uses_ir:
            z = np.asarray(ir, dtype=np.float64)
            if z.shape[1:] != self.ir_shape:
                raise ShapeMismatch("ir batch %s != expected %s"
                                    % (z.shape[1:], self.ir_shape))
            for layer in self.ir_branch:
                z = layer.forward(z, train, rng)
            parts.append(z)
        if len({len(p) for p in parts}) != 1 or len(parts[0]) == 0:
            raise ShapeMismatch("branches need one nonempty, equal-length batch")
        self._split = parts[0].shape[1] if self.uses_doppler else 0
        h = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
        for layer in self.dense_head:
            h = layer.forward(h, train, rng)
        return h  # logits

    def backward(self, grad_logits):
        g = grad_logits
        for layer in reversed(self.dense_head):
            g = layer.backward(g)
        gx, gz = g[:, :self._split], g[:, self._split:]
        if self.uses_doppler:
            for layer in reversed(self.spectro_branch):
                gx = layer.backward(gx)
        if self.uses_ir:
            for layer in reversed(self.ir_branch):
                gz = layer.backward(gz)
        return gx, gz

    def l2_penalty(self):
        w2 = sum(float(np.sum(layer.params()[0] ** 2))
                 for layer in self.layers() if layer.penalized)
        return self.hparams.l2 * w2

    def add_l2_grads(self):
        for layer in self.layers():
            if layer.penalized:
                layer.grads()[0] += 2.0 * self.hparams.l2 * layer.params()[0]

    def predict_proba(self, doppler, ir, batch_size=256):
        out = []
        for lo in range(0, len(doppler), batch_size):
            logits = self.forward(doppler[lo:lo + batch_size],
                                  ir[lo:lo + batch_size], train=False)
            out.append(softmax(logits))
        return np.concatenate(out, axis=0)

    def predict(self, doppler, ir, batch_size=256):
        return self.predict_proba(doppler, ir, batch_size).argmax(axis=1)

    def get_state(self):
        return [p.copy() for p in self.params()]

    def set_state(self, state):
        for p, s in zip(self.params(), state):
            p[...] = s


def forward(net: GestureNet, batch, train_mode=False, rng=None):
    """Class probabilities for a (doppler, ir) batch."""
    logits = net.forward(batch[0], batch[1], train=train_mode, rng=rng)
    return softmax(logits)


def loss_and_grads(net: GestureNet, batch, labels):
    """Mean cross-entropy plus the conv-only L2 term, with all gradients."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != len(batch[0]):
        raise ShapeMismatch("labels must be one code per sample")
    logits = net.forward(batch[0], batch[1], train=False)
    loss, grad_logits = softmax_cross_entropy(logits, labels)
    net.backward(grad_logits)
    net.add_l2_grads()
    return loss + net.l2_penalty(), net.grads()


_HEAD_COUNTS = {"M1": 2, "M2": 4, "M3": 4, "M4": 2}
_CONV_COUNTS = {"M1": 2, "M2": 2, "M3": 3, "M4": 2}


def build_network(model_id, hparams: HyperParams, rng, n_classes=21,
                  doppler_shape=(57, 32), ir_shape=(57, 2),
                  modality="fused") -> GestureNet:
    """Construct one of the four two-branch architectures.

    M1: 1D, 2 conv + 2 dense. M2: 1D, 2 conv + 4 dense.
    M3: 1D, 3 conv + 4 dense. M4: 2D, 2 conv + 2 dense.
    Every conv is followed by a max-pool; the proximity branch is fixed
    at two 2-filter convolutions of kernel length 2. Single-modality
    variants build only the requested input branch.
    """
    if isinstance(model_id, int):
        model_id = "M%d" % model_id
    if model_id not in MODEL_IDS:
        raise ValueError("model_id must be one of %s" % (MODEL_IDS,))
    if modality not in MODALITIES:
        raise ValueError("modality must be one of %s" % (MODALITIES,))
    hp = hparams
    init = hp.initializer

    spectro = []
    if modality != "ir-only":
        if model_id == "M4":
            c_in = 1
            for _ in range(_CONV_COUNTS[model_id]):
                spectro += [Conv2D(c_in, hp.n_filters, hp.kernel_size, init, rng),
                            ReLU(), MaxPool2D(2)]
                c_in = hp.n_filters
        else:
            c_in = doppler_shape[1]
            for _ in range(_CONV_COUNTS[model_id]):
                spectro += [Conv1D(c_in, hp.n_filters, hp.kernel_size, init, rng),
                            ReLU(), MaxPool1D(2)]
                c_in = hp.n_filters
        spectro.append(Flatten())

    ir_branch = []
    if modality != "doppler-only":
        ir_branch = [Conv1D(ir_shape[1], 2, 2, init, rng), ReLU(), MaxPool1D(2),
                     Conv1D(2, 2, 2, init, rng), ReLU(), MaxPool1D(2), Flatten()]

    def branch_out(layers, shape, extra_channel=False):
        x = np.zeros((1, *shape) + ((1,) if extra_channel else ()))
        for layer in layers:
            x = layer.forward(x, train=False)
        return x.shape[1]

    n_flat = 0
    if spectro:
        n_flat += branch_out(spectro, doppler_shape,
                             extra_channel=(model_id == "M4"))
    if ir_branch:
        n_flat += branch_out(ir_branch, ir_shape)

    head = []
    n_in = n_flat
    for _ in range(_HEAD_COUNTS[model_id] - 1):
        head += [Dense(n_in, hp.hidden_units, init, rng), ReLU(),
                 Dropout(hp.dropout_p)]
        n_in = hp.hidden_units
    head.append(Dense(n_in, n_classes, init, rng))

    return GestureNet(model_id, spectro, ir_branch, head, n_classes, hp,
                      doppler_shape, ir_shape, modality=modality)


def param_count(net: GestureNet) -> int:
    return int(sum(p.size for p in net.params()))


# ---------------------------------------------------------------------------
# data expansion

def augment_shift(sample: FeatureTensor, max_frac: float, rng) -> FeatureTensor:
    """Independent temporal rolls of the two streams; vacated rows zeroed."""
    if not 0.0 <= max_frac < 1.0:
        raise ValueError("max_frac must lie in [0, 1)")
    return FeatureTensor(
        doppler=_shift_rows(sample.doppler, max_frac, rng),
        ir=_shift_rows(sample.ir, max_frac, rng),
    )


def _shift_rows(mat: np.ndarray, max_frac: float, rng) -> np.ndarray:
    bound = int(max_frac * mat.shape[0])
    if bound == 0:
        return mat.copy()
    offset = int(rng.integers(-bound, bound + 1))
    if offset == 0:
        return mat.copy()
    out = np.roll(mat, offset, axis=0)
    if offset > 0:
        out[:offset] = 0.0
    else:
        out[offset:] = 0.0
    return out


def _shift_batch(doppler, ir, max_frac, rng):
    d = np.empty_like(doppler)
    z = np.empty_like(ir)
    for i in range(len(doppler)):
        d[i] = _shift_rows(doppler[i], max_frac, rng)
        z[i] = _shift_rows(ir[i], max_frac, rng)
    return d, z


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    patience: int = 15
    val_fraction: float = 0.10
    augment: bool = True
    max_shift_frac: float = 0.10
    lr: float | None = None  # default: 10 ** hparams.lr_exponent


@dataclass(frozen=True)
class TrainResult:
    train_losses: tuple
    val_losses: tuple
    best_val_loss: float
    epochs_run: int


def train(net: GestureNet, doppler, ir, labels, rng,
          config: TrainConfig = TrainConfig()) -> TrainResult:
    """Minibatch SGD with early stopping on a held-out slice of train.

    The network is left holding the parameters of its best validation
    epoch. Raises DivergenceError the moment the loss leaves the reals.
    """
    doppler = np.asarray(doppler, dtype=np.float64)
    ir = np.asarray(ir, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("empty training set")
    lr = config.lr if config.lr is not None else net.hparams.learning_rate

    order = rng.permutation(n)
    n_val = int(config.val_fraction * n) if n >= 10 else 0
    val_idx, tr_idx = order[:n_val], order[n_val:]

    best_state = net.get_state()
    best_val = np.inf
    stale = 0
    train_losses, val_losses = [], []
    for epoch in range(config.epochs):
        epoch_order = rng.permutation(len(tr_idx))
        epoch_loss = 0.0
        for lo in range(0, len(tr_idx), config.batch_size):
            sel = tr_idx[epoch_order[lo:lo + config.batch_size]]
            bd, bi = doppler[sel], ir[sel]
            if config.augment and config.max_shift_frac > 0:
                bd, bi = _shift_batch(bd, bi, config.max_shift_frac, rng)
            logits = net.forward(bd, bi, train=True, rng=rng)
            loss, grad_logits = softmax_cross_entropy(logits, labels[sel])
            loss += net.l2_penalty()
            if not np.isfinite(loss):
                raise DivergenceError(
                    "loss diverged at epoch %d (lr=%g)" % (epoch, lr))
            net.backward(grad_logits)
            net.add_l2_grads()
            for p, g in zip(net.params(), net.grads()):
                p -= lr * g
            epoch_loss += loss * len(sel)
        train_losses.append(epoch_loss / len(tr_idx))

        if n_val:
            logits = net.forward(doppler[val_idx], ir[val_idx], train=False)
            val_loss, _ = softmax_cross_entropy(logits, labels[val_idx])
            val_loss += net.l2_penalty()
            if not np.isfinite(val_loss):
                raise DivergenceError("validation loss diverged at epoch %d" % epoch)
            val_losses.append(val_loss)
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                best_state = net.get_state()
                stale = 0
            else:
                stale += 1
                if stale > config.patience:
                    break
        else:
            best_val = train_losses[-1]
            best_state = net.get_state()

    net.set_state(best_state)
    return TrainResult(tuple(train_losses), tuple(val_losses),
                       float(best_val), len(train_losses))


# ---------------------------------------------------------------------------
# serialization: magic, header, then little-endian f32 blobs

_MODEL_MAGIC = b"AWNN"


def save_model(net: GestureNet, path):
    hp = net.hparams
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        header = struct.pack(
            "<BBBHHHH", MODEL_IDS.index(net.model_id),
            MODALITIES.index(net.modality), net.n_classes,
            net.doppler_shape[0], net.doppler_shape[1],
            net.ir_shape[0], net.ir_shape[1])
        fh.write(header)
        fh.write(struct.pack(
            "<dbiidii", hp.l2, hp.lr_exponent, hp.n_filters, hp.kernel_size,
            hp.dropout_p, hp.hidden_units, INITIALIZERS.index(hp.initializer)))
        params = net.params()
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            fh.write(struct.pack("<B", p.ndim))
            fh.write(struct.pack("<%dI" % p.ndim, *p.shape))
            fh.write(p.astype("<f4").tobytes())


def load_model(path) -> GestureNet:
    with open(path, "rb") as fh:
        if fh.read(4) != _MODEL_MAGIC:
            raise ValueError("not a model file: %s" % path)
        model_idx, mod_idx, n_classes, df, db, irf, irc = struct.unpack(
            "<BBBHHHH", fh.read(11))
        l2, lr_exp, n_filt, kern, drop, hidden, init_idx = struct.unpack(
            "<dbiidii", fh.read(struct.calcsize("<dbiidii")))
        hp = HyperParams(l2=l2, lr_exponent=int(lr_exp), n_filters=n_filt,
                         kernel_size=kern, dropout_p=drop, hidden_units=int(hidden),
                         initializer=INITIALIZERS[init_idx])
        net = build_network(MODEL_IDS[model_idx], hp, np.random.default_rng(0),
                            n_classes=n_classes, doppler_shape=(df, db),
                            ir_shape=(irf, irc), modality=MODALITIES[mod_idx])
        (n_params,) = struct.unpack("<I", fh.read(4))
        params = net.params()
        if n_params != len(params):
            raise ValueError("parameter count mismatch in %s" % path)
        for p in params:
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack("<%dI" % ndim, fh.read(4 * ndim))
            if shape != p.shape:
                raise ValueError("parameter shape mismatch in %s" % path)
            blob = fh.read(4 * int(np.prod(shape)))
            p[...] = np.frombuffer(blob, dtype="<f4").reshape(shape)
    return net
