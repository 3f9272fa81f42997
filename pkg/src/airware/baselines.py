"""Classical classifiers: PCA features, random forest, linear SVM, MLP.

The forest's tree grower is plain numpy-flavored Python; when numba is
importable it is JIT-compiled, otherwise the same function runs
interpreted (identical results, slower). Candidate features are drawn
per node from a tiny splitmix/LCG stream so tree growth is fully
deterministic given the caller's seeds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import SampleRecord
from .errors import (
    DivergenceError,
    NonConvergenceWarning,
    RankDeficiencyWarning,
    ShapeMismatch,
)
from .nn import Dense, Tanh, softmax, softmax_cross_entropy

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - numba is optional
    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


# ---------------------------------------------------------------------------
# PCA

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # [d]
    components: np.ndarray  # [k, d], orthonormal rows
    k: int
    explained_variance: np.ndarray  # [k], non-increasing
    fitted_on: frozenset = frozenset()


# past this problem size an exact LAPACK SVD is replaced by a seeded
# randomized range-finder (Halko et al. style): q power iterations keep
# the leading subspace accurate while the cost drops to O(n d k)
_EXACT_SVD_LIMIT = 700
_RANDOM_SVD_SEED = 0x51D5EED
_RANDOM_SVD_OVERSAMPLE = 16
_RANDOM_SVD_POWER_ITERS = 4


def _randomized_svd(Xc: np.ndarray, k: int):
    n, d = Xc.shape
    r = min(k + _RANDOM_SVD_OVERSAMPLE, min(n, d))
    rng = np.random.default_rng(_RANDOM_SVD_SEED)
    Q = Xc @ rng.standard_normal((d, r))
    Q, _ = np.linalg.qr(Q)
    for _ in range(_RANDOM_SVD_POWER_ITERS):
        Q, _ = np.linalg.qr(Xc.T @ Q)
        Q, _ = np.linalg.qr(Xc @ Q)
    B = Q.T @ Xc  # [r, d]
    _, s, vt = np.linalg.svd(B, full_matrices=False)
    return s, vt


def pca_fit(X: np.ndarray, k: int = 100, fitted_on=frozenset(),
            method: str = "auto") -> PcaModel:
    """Top-k right singular vectors of the centered data."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("pca_fit needs a [n >= 2, d] matrix")
    if k < 1:
        raise ValueError("k must be positive")
    n, d = X.shape
    mean = X.mean(axis=0)
    Xc = X - mean

    if method == "exact" or (method == "auto" and min(n, d) <= _EXACT_SVD_LIMIT):
        _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    elif method in ("auto", "randomized"):
        s, vt = _randomized_svd(Xc, min(k + 2, min(n, d)))
    else:
        raise ValueError("method must be 'auto', 'exact' or 'randomized'")

    tol = s[0] * max(n, d) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    k_max = min(k, n, d)
    if k_max < k or rank < k:
        k_eff = max(min(k_max, rank), 1)
        warnings.warn(
            "requested %d components but data supports %d; clipping"
            % (k, k_eff), RankDeficiencyWarning, stacklevel=2)
    else:
        k_eff = k
    s = s[:k_eff]
    return PcaModel(
        mean=mean,
        components=np.ascontiguousarray(vt[:k_eff]),
        k=k_eff,
        explained_variance=s ** 2 / (n - 1),
        fitted_on=frozenset(fitted_on),
    )


def pca_transform(model: PcaModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.components.shape[1]:
        raise ShapeMismatch("expected [n, %d], got %s"
                            % (model.components.shape[1], X.shape))
    return (X - model.mean) @ model.components.T


# ---------------------------------------------------------------------------
# random forest

@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 1000
    bootstrap: bool = True
    criterion: str = "gini"
    max_features: str = "sqrt"

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.criterion != "gini":
            raise ValueError("only gini splits are implemented")
        if self.max_features != "sqrt":
            raise ValueError("only sqrt feature sampling is implemented")


@dataclass(frozen=True)
class ForestModel:
    # per tree: feature (−1 marks a leaf), threshold, children, leaf label
    trees: tuple
    classes: np.ndarray  # sorted original codes; tree labels index into this
    n_features: int


def gini_impurity(labels) -> float:
    """1 - sum of squared class proportions."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    _, counts = np.unique(labels, return_counts=True)
    p = counts / labels.size
    return float(1.0 - np.sum(p * p))


def _grow_tree(X, y, n_classes, sample_idx, mtry, seed):
    """One CART tree on X[sample_idx]; returns packed node arrays.

    Written against the numpy subset numba understands; the module
    decorates it with njit when numba is present. Candidate features
    come from a splitmix-style integer stream seeded per tree.
    """
    n = sample_idx.shape[0]
    max_nodes = 2 * n + 1
    node_feature = np.full(max_nodes, -1, np.int64)
    node_threshold = np.zeros(max_nodes, np.float64)
    node_left = np.full(max_nodes, -1, np.int64)
    node_right = np.full(max_nodes, -1, np.int64)
    node_label = np.zeros(max_nodes, np.int64)

    idx = sample_idx.copy()
    d = X.shape[1]
    feat_order = np.empty(d, np.int64)

    # stack of (node id, start, end) ranges over idx
    stack_node = np.empty(max_nodes, np.int64)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    n_nodes = 1
    state = np.uint64(seed)

    counts = np.zeros(n_classes, np.int64)
    left_counts = np.zeros(n_classes, np.int64)

    while top >= 0:
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        top -= 1
        m = hi - lo

        counts[:] = 0
        for i in range(lo, hi):
            counts[y[idx[i]]] += 1
        majority = 0
        best_count = -1
        n_present = 0
        for c in range(n_classes):
            if counts[c] > 0:
                n_present += 1
            if counts[c] > best_count:
                best_count = counts[c]
                majority = c
        if n_present <= 1 or m < 2:
            node_label[node] = majority
            continue

        # Fisher-Yates permutation of the feature indices via splitmix64
        for f in range(d):
            feat_order[f] = f
        for f in range(d - 1):
            state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
            z = state
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
            j = f + int(z % np.uint64(d - f))
            tmp = feat_order[f]
            feat_order[f] = feat_order[j]
            feat_order[j] = tmp

        best_gain = -1.0
        best_feature = -1
        best_threshold = 0.0
        examined = 0
        total_sq = 0.0
        for c in range(n_classes):
            total_sq += counts[c] * counts[c]
        parent_impurity = m - total_sq / m

        vals = np.empty(m, np.float64)
        labs = np.empty(m, np.int64)
        for fi in range(d):
            if examined >= mtry and best_feature >= 0:
                break
            f = feat_order[fi]
            for i in range(m):
                vals[i] = X[idx[lo + i], f]
            vmin = vals[0]
            vmax = vals[0]
            for i in range(1, m):
                if vals[i] < vmin:
                    vmin = vals[i]
                if vals[i] > vmax:
                    vmax = vals[i]
            if vmax <= vmin:
                continue  # constant here; does not count against mtry
            examined += 1
            order = np.argsort(vals)
            for i in range(m):
                labs[i] = y[idx[lo + order[i]]]

            left_counts[:] = 0
            sl = 0.0
            sr = total_sq
            for i in range(m - 1):
                c = labs[i]
                sl += 2.0 * left_counts[c] + 1.0
                sr -= 2.0 * counts[c] - 1.0
                left_counts[c] += 1
                counts[c] -= 1
                vi = vals[order[i]]
                vj = vals[order[i + 1]]
                if vj > vi:
                    nl = i + 1.0
                    nr = m - nl
                    impurity = (nl - sl / nl) + (nr - sr / nr)
                    gain = parent_impurity - impurity
                    if gain > best_gain + 1e-12:
                        best_gain = gain
                        best_feature = f
                        best_threshold = 0.5 * (vi + vj)
            # restore the parent counts consumed by the scan
            for i in range(m - 1):
                counts[labs[i]] += 1

        if best_feature < 0:
            node_label[node] = majority
            continue

        # partition idx[lo:hi] around the chosen threshold, stable
        n_left = 0
        for i in range(lo, hi):
            if X[idx[i], best_feature] <= best_threshold:
                n_left += 1
        buf = np.empty(m, np.int64)
        a = 0
        b = n_left
        for i in range(lo, hi):
            if X[idx[i], best_feature] <= best_threshold:
                buf[a] = idx[i]
                a += 1
            else:
                buf[b] = idx[i]
                b += 1
        for i in range(m):
            idx[lo + i] = buf[i]

        node_feature[node] = best_feature
        node_threshold[node] = best_threshold
        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        node_left[node] = left_id
        node_right[node] = right_id
        top += 1
        stack_node[top] = left_id
        stack_lo[top] = lo
        stack_hi[top] = lo + n_left
        top += 1
        stack_node[top] = right_id
        stack_lo[top] = lo + n_left
        stack_hi[top] = hi

    return (node_feature[:n_nodes], node_threshold[:n_nodes],
            node_left[:n_nodes], node_right[:n_nodes], node_label[:n_nodes])


_grow_tree = _njit(cache=True)(_grow_tree)


def forest_train(X, y, cfg: ForestConfig = ForestConfig(), rng=None) -> ForestModel:
    """Bootstrap-aggregated CART trees with sqrt feature sampling."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeMismatch("X must be [n, d] with one label per row")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes to train a forest")
    if rng is None:
        rng = np.random.default_rng(0)
    y_enc = np.searchsorted(classes, y)
    n, d = X.shape
    mtry = int(np.ceil(np.sqrt(d)))

    trees = []
    for _ in range(cfg.n_trees):
        if cfg.bootstrap:
            sample_idx = rng.integers(0, n, size=n)
        else:
            sample_idx = np.arange(n)
        seed = int(rng.integers(1, 2**63 - 1))
        trees.append(_grow_tree(X, y_enc, len(classes),
                                sample_idx.astype(np.int64), mtry, seed))
    return ForestModel(trees=tuple(trees), classes=classes, n_features=d)


def _tree_apply(tree, X):
    feature, threshold, left, right, label = tree
    cur = np.zeros(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    while True:
        feat = feature[cur]
        active = feat >= 0
        if not active.any():
            break
        go_left = np.zeros(len(X), dtype=bool)
        go_left[active] = X[rows[active], feat[active]] <= threshold[cur[active]]
        nxt = np.where(go_left, left[cur], right[cur])
        cur = np.where(active, nxt, cur)
    return label[cur]


def forest_predict(model: ForestModel, X) -> np.ndarray:
    """Majority vote across trees; ties resolve to the lowest class code."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeMismatch("expected [n, %d], got %s" % (model.n_features, X.shape))
    votes = np.zeros((len(X), len(model.classes)), dtype=np.int64)
    rows = np.arange(len(X))
    for tree in model.trees:
        votes[rows, _tree_apply(tree, X)] += 1
    return model.classes[votes.argmax(axis=1)]


# ---------------------------------------------------------------------------
# linear SVM, one-vs-rest

@dataclass(frozen=True)
class LinearSvmModel:
    weights: np.ndarray  # [n_classes, d]
    biases: np.ndarray  # [n_classes]
    classes: np.ndarray
    converged: tuple


def _svm_binary(X, target, C, tol, max_iter):
    """Minimize 0.5 ||w||^2 + C sum hinge by deterministic subgradient steps.

    Full-batch Pegasos on the 1/(Cn)-scaled problem: the bias rides along as
    an extra coordinate on a constant-one column, iterates are projected onto
    the 1/sqrt(lam) ball, and the best iterate under the original objective
    is kept.
    """
    n, d = X.shape
    Z = np.concatenate([X, np.ones((n, 1))], axis=1)
    lam = 1.0 / (C * n)
    radius = 1.0 / np.sqrt(lam)
    v = np.zeros(d + 1)

    def objective(v):
        margins = 1.0 - target * (Z @ v)
        hinge = np.clip(margins, 0.0, None).sum()
        return 0.5 * float(v[:d] @ v[:d]) + C * float(hinge)

    best_obj = objective(v)
    best = v.copy()
    since_improvement = 0
    warmup = 100  # the first 1/(lam t) steps overshoot until projection bites
    for t in range(1, max_iter + 1):
        margins = 1.0 - target * (Z @ v)
        viol = margins > 0.0
        g = lam * v - (target[viol] @ Z[viol]) / n
        v = v - g / (lam * (t + 1))
        norm = float(np.linalg.norm(v))
        if norm > radius:
            v *= radius / norm
        obj = objective(v)
        if obj < best_obj - tol:
            best_obj = obj
            best = v.copy()
            since_improvement = 0
        elif t > warmup:
            since_improvement += 1
            if since_improvement >= 50:
                return best[:d], float(best[d]), True
    warnings.warn("svm subproblem hit max_iter without meeting tolerance",
                  NonConvergenceWarning, stacklevel=3)
    return best[:d], float(best[d]), False


def svm_train(X, y, C: float = 10.0, tol: float = 1e-4,
              max_iter: int = 2000) -> LinearSvmModel:
    """One-vs-rest linear SVMs trained by deterministic subgradient descent."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes to train an SVM")
    weights, biases, converged = [], [], []
    for c in classes:
        target = np.where(y == c, 1.0, -1.0)
        w, b, ok = _svm_binary(X, target, C, tol, max_iter)
        weights.append(w)
        biases.append(b)
        converged.append(ok)
    return LinearSvmModel(np.array(weights), np.array(biases),
                          classes, tuple(converged))


def svm_predict(model: LinearSvmModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    scores = X @ model.weights.T + model.biases
    return model.classes[scores.argmax(axis=1)]


def svm_decision_boundary_1d(model: LinearSvmModel, class_index: int = 0) -> float:
    """x where w x + b = 0 for a 1-feature binary model (test convenience)."""
    w = model.weights[class_index]
    return float(-model.biases[class_index] / w[0])


# ---------------------------------------------------------------------------
# MLP (500 -> 250 tanh), built on the nn layer kit

@dataclass
class MlpModel:
    layers: list
    classes: np.ndarray
    l2: float

    def logits(self, X):
        h = np.asarray(X, dtype=np.float64)
        for layer in self.layers:
            h = layer.forward(h, train=False)
        return h

    def predict_proba(self, X):
        return softmax(self.logits(X))

    def predict(self, X):
        return self.classes[self.logits(X).argmax(axis=1)]


def mlp_train(X, y, rng=None, l2: float = 0.01, epochs: int = 300,
              batch_size: int = 32, lr: float = 0.01, patience: int = 15,
              hidden=(500, 250)) -> MlpModel:
    """Two tanh hidden layers with L2 on every weight matrix, plain SGD."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if rng is None:
        rng = np.random.default_rng(0)
    classes = np.unique(y)
    y_enc = np.searchsorted(classes, y)
    n, d = X.shape

    layers = []
    n_in = d
    for units in hidden:
        layers += [Dense(n_in, units, "glorot-normal", rng, penalized=True), Tanh()]
        n_in = units
    layers.append(Dense(n_in, len(classes), "glorot-normal", rng, penalized=True))
    model = MlpModel(layers=layers, classes=classes, l2=l2)
    denses = [l for l in layers if isinstance(l, Dense)]

    def penalty():
        return l2 * sum(float(np.sum(l.W ** 2)) for l in denses)

    def run(batch_X, train=False):
        h = batch_X
        for layer in layers:
            h = layer.forward(h, train, rng)
        return h

    order = rng.permutation(n)
    n_val = int(0.1 * n) if n >= 10 else 0
    val_idx, tr_idx = order[:n_val], order[n_val:]

    best_state = [l.W.copy() for l in denses] + [l.b.copy() for l in denses]
    best_val = np.inf
    stale = 0
    for epoch in range(epochs):
        epoch_order = rng.permutation(len(tr_idx))
        for lo in range(0, len(tr_idx), batch_size):
            sel = tr_idx[epoch_order[lo:lo + batch_size]]
            logits = run(X[sel], train=True)
            loss, grad = softmax_cross_entropy(logits, y_enc[sel])
            loss += penalty()
            if not np.isfinite(loss):
                raise DivergenceError("mlp loss diverged at epoch %d" % epoch)
            g = grad
            for layer in reversed(layers):
                g = layer.backward(g)
            for dense in denses:
                dense.gW += 2.0 * l2 * dense.W
                dense.W -= lr * dense.gW
                dense.b -= lr * dense.gb
        if n_val:
            val_loss, _ = softmax_cross_entropy(run(X[val_idx]), y_enc[val_idx])
            val_loss += penalty()
            if not np.isfinite(val_loss):
                raise DivergenceError("mlp validation loss diverged")
            if val_loss < best_val - 1e-12:
                best_val = val_loss
                best_state = [l.W.copy() for l in denses] + [l.b.copy() for l in denses]
                stale = 0
            else:
                stale += 1
                if stale > patience:
                    break
    if n_val:
        for dense, W in zip(denses, best_state[:len(denses)]):
            dense.W[...] = W
        for dense, b in zip(denses, best_state[len(denses):]):
            dense.b[...] = b
    return model


# ---------------------------------------------------------------------------
# feature assembly

def ir_summary(ir: np.ndarray) -> np.ndarray:
    """Per-channel mean over frames."""
    ir = np.asarray(ir, dtype=np.float64)
    if ir.ndim != 2:
        raise ShapeMismatch("ir matrix must be [frames, channels]")
    return ir.mean(axis=0)


def baseline_featurize(record: SampleRecord, pca: PcaModel) -> np.ndarray:
    """PCA of the flattened Doppler band plus the averaged IR channels."""
    flat = record.features.doppler.reshape(1, -1)
    if flat.shape[1] != pca.components.shape[1]:
        raise ShapeMismatch("doppler size %d does not match the PCA (%d)"
                            % (flat.shape[1], pca.components.shape[1]))
    return np.concatenate([pca_transform(pca, flat)[0],
                           ir_summary(record.features.ir)])
