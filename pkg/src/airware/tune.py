"""Hyper-parameter search: Tree-structured Parzen Estimator plus random search.

The tuner models the density of hyper-parameters among high-scoring trials
(l) and low-scoring trials (g) and proposes the candidate maximizing l/g.
Continuous dimensions use Parzen windows (Gaussian kernels, scaled-std
bandwidth); categorical dimensions use add-one smoothed frequencies, so
every density is strictly positive and the ratio is always finite.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import logsumexp

from .errors import NoSuccessfulTrial
from .nn import FILTER_CHOICES, HIDDEN_CHOICES, INITIALIZERS, KERNEL_CHOICES, HyperParams

LR_EXPONENTS = (-6, -5, -4, -3, -2, -1, 0)


@dataclass(frozen=True)
class SearchSpace:
    """Independent priors over every searchable dimension."""

    l2_mean: float = 0.001
    l2_std: float = 0.0001
    lr_exponents: tuple = LR_EXPONENTS
    n_filters: tuple = tuple(sorted(FILTER_CHOICES))
    kernel_sizes: tuple = tuple(sorted(KERNEL_CHOICES))
    dropout_low: float = 0.0
    dropout_high: float = 0.99
    hidden_units: tuple = tuple(sorted(HIDDEN_CHOICES))
    initializers: tuple = tuple(INITIALIZERS)


@dataclass(frozen=True)
class Trial:
    hparams: HyperParams
    score: float
    status: str  # "ok" | "failed"

    def __post_init__(self):
        if self.status not in ("ok", "failed"):
            raise ValueError("status must be 'ok' or 'failed'")
        if self.status == "ok" and not np.isfinite(self.score):
            raise ValueError("ok trials need a finite score")


@dataclass(frozen=True)
class TpeConfig:
    gamma: float = 0.25
    n_startup: int = 10
    n_candidates: int = 24

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_candidates < 1:
            raise ValueError("need at least one candidate per suggestion")
        if self.n_startup < 0:
            raise ValueError("n_startup must be non-negative")


def sample_space(space: SearchSpace, rng) -> HyperParams:
    """One independent draw per dimension; negative l2 draws are retried."""
    l2 = float(rng.normal(space.l2_mean, space.l2_std))
    while l2 < 0.0:
        l2 = float(rng.normal(space.l2_mean, space.l2_std))
    return HyperParams(
        l2=l2,
        lr_exponent=int(space.lr_exponents[rng.integers(len(space.lr_exponents))]),
        n_filters=int(space.n_filters[rng.integers(len(space.n_filters))]),
        kernel_size=int(space.kernel_sizes[rng.integers(len(space.kernel_sizes))]),
        dropout_p=float(rng.uniform(space.dropout_low, space.dropout_high)),
        hidden_units=int(space.hidden_units[rng.integers(len(space.hidden_units))]),
        initializer=str(space.initializers[rng.integers(len(space.initializers))]),
    )


def split_good_bad(ok_trials, gamma):
    """Top ceil(gamma * n) trials by score, rest; at least one of each."""
    ranked = sorted(ok_trials, key=lambda t: t.score, reverse=True)
    n_good = math.ceil(gamma * len(ranked))
    n_good = max(1, min(n_good, len(ranked) - 1))
    return ranked[:n_good], ranked[n_good:]


def _bandwidth(values, floor):
    """Scaled-std (Scott) bandwidth with a floor for degenerate samples."""
    values = np.asarray(values, dtype=np.float64)
    h = float(values.std()) * len(values) ** -0.2
    return max(h, floor)


def _mixture_logpdf(x, centers, h, prior_logpdf):
    """Parzen mixture with the prior mixed in as one extra component."""
    z = (x - np.asarray(centers)) / h
    kernel_logs = -0.5 * z * z - 0.5 * np.log(2 * np.pi) - np.log(h)
    comps = np.append(kernel_logs, prior_logpdf)
    return float(logsumexp(comps) - np.log(len(comps)))


def _smoothed_probs(values, choices):
    counts = np.array([sum(v == c for v in values) for c in choices], float)
    probs = (counts + 1.0) / (counts.sum() + len(choices))
    return dict(zip(choices, probs))


_CATEGORICAL = ("lr_exponent", "n_filters", "kernel_size", "hidden_units",
                "initializer")


def _space_choices(space, dim):
    return {
        "lr_exponent": space.lr_exponents,
        "n_filters": space.n_filters,
        "kernel_size": space.kernel_sizes,
        "hidden_units": space.hidden_units,
        "initializer": space.initializers,
    }[dim]


def _continuous_dims(space):
    """Per-dimension floor, prior sampler, prior log-density, and support."""
    def draw_l2(rng):
        x = float(rng.normal(space.l2_mean, space.l2_std))
        while x < 0.0:
            x = float(rng.normal(space.l2_mean, space.l2_std))
        return x

    def logpdf_l2(x):
        z = (x - space.l2_mean) / space.l2_std
        return -0.5 * z * z - 0.5 * np.log(2 * np.pi) - np.log(space.l2_std)

    width = space.dropout_high - space.dropout_low
    return {
        "l2": (1e-5, draw_l2, logpdf_l2, (0.0, np.inf)),
        "dropout_p": (0.01,
                      lambda rng: float(rng.uniform(space.dropout_low,
                                                    space.dropout_high)),
                      lambda x: -np.log(width),
                      (space.dropout_low, space.dropout_high)),
    }


def tpe_suggest(history, space: SearchSpace, cfg: TpeConfig, rng) -> HyperParams:
    """Propose hyper-parameters: random during startup, then maximize l/g."""
    ok = [t for t in history if t.status == "ok"]
    if len(ok) < cfg.n_startup:
        return sample_space(space, rng)

    good, bad = split_good_bad(ok, cfg.gamma)
    cont = {}
    for dim, (floor, draw_prior, prior_logpdf, support) in _continuous_dims(space).items():
        g_vals = np.array([getattr(t.hparams, dim) for t in good])
        b_vals = np.array([getattr(t.hparams, dim) for t in bad])
        cont[dim] = (g_vals, _bandwidth(g_vals, floor),
                     b_vals, _bandwidth(b_vals, floor),
                     draw_prior, prior_logpdf, support)
    cat = {}
    for dim in _CATEGORICAL:
        choices = _space_choices(space, dim)
        cat[dim] = (_smoothed_probs([getattr(t.hparams, dim) for t in good], choices),
                    _smoothed_probs([getattr(t.hparams, dim) for t in bad], choices))

    best_hp, best_ratio = None, -np.inf
    for _ in range(cfg.n_candidates):
        fields = {}
        log_ratio = 0.0
        for dim, (g_vals, g_h, b_vals, b_h,
                  draw_prior, prior_logpdf, support) in cont.items():
            # draw from the good-side mixture; one slot belongs to the prior
            slot = rng.integers(len(g_vals) + 1)
            if slot == len(g_vals):
                x = draw_prior(rng)
            else:
                x = float(g_vals[slot] + rng.normal(0.0, g_h))
            x = float(np.clip(x, support[0], support[1]))
            fields[dim] = x
            log_ratio += (_mixture_logpdf(x, g_vals, g_h, prior_logpdf(x))
                          - _mixture_logpdf(x, b_vals, b_h, prior_logpdf(x)))

        for dim in _CATEGORICAL:
            choices = _space_choices(space, dim)
            p_good, p_bad = cat[dim]
            weights = np.array([p_good[c] for c in choices])
            pick = choices[rng.choice(len(choices), p=weights / weights.sum())]
            fields[dim] = pick
            log_ratio += np.log(p_good[pick]) - np.log(p_bad[pick])

        if log_ratio > best_ratio:
            best_ratio = log_ratio
            best_hp = HyperParams(**fields)
    return best_hp


def _run_trial(objective, hp) -> Trial:
    try:
        score = float(objective(hp))
    except Exception:
        return Trial(hparams=hp, score=float("nan"), status="failed")
    if not np.isfinite(score):
        return Trial(hparams=hp, score=float("nan"), status="failed")
    return Trial(hparams=hp, score=score, status="ok")


def _best_of(history):
    ok = [t for t in history if t.status == "ok"]
    if not ok:
        raise NoSuccessfulTrial("every trial failed")
    return max(ok, key=lambda t: t.score)


def tune(objective, space: SearchSpace, budget: int,
         cfg: TpeConfig = TpeConfig(), rng=None):
    """Sequential TPE loop; returns (best ok trial, full history)."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if rng is None:
        rng = np.random.default_rng(0)
    history = []
    for _ in range(budget):
        hp = tpe_suggest(history, space, cfg, rng)
        history.append(_run_trial(objective, hp))
    return _best_of(history), history


def random_search(objective, space: SearchSpace, budget: int, rng=None):
    """Pure prior sampling under the same trial-recording rules as tune()."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if rng is None:
        rng = np.random.default_rng(0)
    history = [_run_trial(objective, sample_space(space, rng))
               for _ in range(budget)]
    return _best_of(history), history
