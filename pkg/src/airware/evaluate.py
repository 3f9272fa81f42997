"""Cross-validation harness: protocols, metrics, ablations, learning curves.

Three protocols are provided: leave-one-subject-out, per-user personalized
splits, and user-calibrated (everyone else's data plus a slice of the target
user). Every stage that fits state (normalization, PCA, models) carries the
keys of the records it saw, and folds refuse to predict when that set
intersects the test set.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
import warnings

import numpy as np
from scipy.stats import spearmanr, ttest_rel

from .baselines import (
    ForestConfig,
    forest_predict,
    forest_train,
    ir_summary,
    mlp_train,
    pca_fit,
    pca_transform,
    svm_predict,
    svm_train,
)
from .core import Dataset, derive_rng, gesture_set_members
from .errors import (
    AbsentClassWarning,
    EmptyMatrix,
    InsufficientSamples,
    TooFewUsers,
)
from .nn import MODALITIES, HyperParams, TrainConfig, build_network, train

STRATEGIES = ("loso", "personalized", "user-calibrated")
MODEL_FAMILIES = ("m1", "m2", "m3", "m4", "rf", "svm", "mlp")
CURVE_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5)

_STREAM_SPLIT = 3100
_STREAM_FOLD = 3000
_STREAM_INNER = 3200
_STREAM_CURVE = 3300


# ---------------------------------------------------------------------------
# confusion matrices and the macro true-positive-rate metric

@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predictions, in `classes` order."""

    counts: np.ndarray
    classes: tuple

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        c = len(self.classes)
        if counts.shape != (c, c):
            raise ValueError("counts must be [C, C] matching classes")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "classes", tuple(int(k) for k in self.classes))

    def add(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.classes != self.classes:
            raise ValueError("cannot add confusions over different classes")
        return ConfusionMatrix(self.counts + other.counts, self.classes)


def confusion_from_predictions(y_true, y_pred, classes) -> ConfusionMatrix:
    classes = tuple(int(c) for c in classes)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        counts[index[int(t)], index[int(p)]] += 1
    return ConfusionMatrix(counts, classes)


def per_class_tpr(cm: ConfusionMatrix):
    """Per-class recall vector (nan for absent classes) and its macro mean."""
    counts = cm.counts
    if counts.size == 0 or counts.sum() == 0:
        raise EmptyMatrix("confusion matrix holds no samples")
    row_sums = counts.sum(axis=1)
    present = row_sums > 0
    if not present.all():
        absent = [cm.classes[i] for i in np.flatnonzero(~present)]
        warnings.warn("classes %s have no test samples; dropped from macro"
                      % (absent,), AbsentClassWarning, stacklevel=2)
    rates = np.full(len(cm.classes), np.nan)
    rates[present] = counts.diagonal()[present] / row_sums[present]
    return rates, float(rates[present].mean())


def paired_ttest(scores_a, scores_b):
    """Two-tailed paired t-test; returns (statistic, p_value)."""
    res = ttest_rel(scores_a, scores_b)
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------------------
# protocols

@dataclass(frozen=True)
class Fold:
    strategy: str
    user: int
    iteration: int
    train: tuple
    test: tuple


def split_loso(ds: Dataset):
    """One fold per user: train on everyone else, test on the holdout."""
    users = ds.users()
    if len(users) < 2:
        raise TooFewUsers("leave-one-subject-out needs at least 2 users")
    folds = []
    for user in users:
        train_recs = tuple(r for r in ds.records if r.user_id != user)
        test_recs = tuple(r for r in ds.records if r.user_id == user)
        folds.append(Fold("loso", user, 0, train_recs, test_recs))
    return folds


def _per_class_lists(records):
    by_class = {}
    for rec in records:
        by_class.setdefault(int(rec.gesture), []).append(rec)
    return dict(sorted(by_class.items()))


def split_personalized(ds: Dataset, iterations: int = 5,
                       train_frac: float = 0.6, rng=None):
    """Per user: stratified shuffled splits within that user's own records."""
    if rng is None:
        rng = np.random.default_rng(0)
    test_frac = 1.0 - train_frac
    per_user = {}
    for user in ds.users():
        own = [r for r in ds.records if r.user_id == user]
        by_class = _per_class_lists(own)
        for code, recs in by_class.items():
            if len(recs) < 5:
                raise InsufficientSamples(
                    "user %d class %d has %d records; stratified splits need 5"
                    % (user, code, len(recs)))
        folds = []
        for it in range(iterations):
            train_recs, test_recs = [], []
            for code, recs in by_class.items():
                n_test = int(round(test_frac * len(recs)))
                order = rng.permutation(len(recs))
                test_recs += [recs[i] for i in order[:n_test]]
                train_recs += [recs[i] for i in order[n_test:]]
            folds.append(Fold("personalized", user, it,
                              tuple(train_recs), tuple(test_recs)))
        per_user[user] = folds
    return per_user


def split_user_calibrated(ds: Dataset, iterations: int = 5,
                          train_frac: float = 0.6, rng=None):
    """Personalized splits whose train side also gets all other users."""
    if len(ds.users()) < 2:
        raise TooFewUsers("user-calibrated splits need at least 2 users")
    per_user = split_personalized(ds, iterations, train_frac, rng)
    folds = []
    for user, user_folds in per_user.items():
        others = tuple(r for r in ds.records if r.user_id != user)
        for f in user_folds:
            folds.append(Fold("user-calibrated", user, f.iteration,
                              others + f.train, f.test))
    return folds


# ---------------------------------------------------------------------------
# per-fold pipelines

@dataclass(frozen=True)
class NormStats:
    """Per-channel standardization constants with training provenance."""

    doppler_mean: np.ndarray
    doppler_std: np.ndarray
    ir_mean: np.ndarray
    ir_std: np.ndarray
    fitted_on: frozenset


def fit_norm_stats(records) -> NormStats:
    doppler = np.stack([r.features.doppler for r in records])
    ir = np.stack([r.features.ir for r in records])
    return NormStats(
        doppler_mean=doppler.mean(axis=(0, 1)),
        doppler_std=np.maximum(doppler.std(axis=(0, 1)), 1e-8),
        ir_mean=ir.mean(axis=(0, 1)),
        ir_std=np.maximum(ir.std(axis=(0, 1)), 1e-8),
        fitted_on=frozenset(r.key for r in records),
    )


def apply_norm(stats: NormStats, records):
    doppler = np.stack([r.features.doppler for r in records])
    ir = np.stack([r.features.ir for r in records])
    return ((doppler - stats.doppler_mean) / stats.doppler_std,
            (ir - stats.ir_mean) / stats.ir_std)


def _check_disjoint(fitted_on, test_records, stage):
    overlap = fitted_on & {r.key for r in test_records}
    if overlap:
        raise RuntimeError("leakage: %s was fitted on %d test records"
                           % (stage, len(overlap)))


@dataclass(frozen=True)
class EvalConfig:
    """Desk-scale defaults: small forest, capped epochs."""

    hparams: HyperParams = HyperParams()
    epochs: int = 100
    batch_size: int = 32
    patience: int = 15
    augment: bool = True
    n_trees: int = 100
    pca_k: int = 100
    svm_c: float = 10.0
    svm_max_iter: int = 2000
    mlp_epochs: int = 150
    jobs: int = 1


def _featurize(records, pca, modality):
    doppler_flat = np.stack([r.features.doppler.reshape(-1) for r in records])
    if modality == "ir-only":
        return np.stack([ir_summary(r.features.ir) for r in records])
    reduced = pca_transform(pca, doppler_flat)
    if modality == "doppler-only":
        return reduced
    irs = np.stack([ir_summary(r.features.ir) for r in records])
    return np.concatenate([reduced, irs], axis=1)


def _run_fold(family, modality, fold: Fold, cfg: EvalConfig, seed: int,
              stream=_STREAM_FOLD, extra_key=()):
    rng = derive_rng(seed, stream, *extra_key, fold.user, fold.iteration)
    classes = sorted({int(r.gesture) for r in fold.train})
    y_train = np.array([int(r.gesture) for r in fold.train])
    y_test = np.array([int(r.gesture) for r in fold.test])

    if family in ("m1", "m2", "m3", "m4"):
        stats = fit_norm_stats(fold.train)
        _check_disjoint(stats.fitted_on, fold.test, "normalization")
        d_train, ir_train = apply_norm(stats, fold.train)
        net = build_network(family.upper(), cfg.hparams, rng,
                            n_classes=len(classes),
                            doppler_shape=d_train.shape[1:],
                            ir_shape=ir_train.shape[1:], modality=modality)
        y_enc = np.searchsorted(classes, y_train)
        train(net, d_train, ir_train, y_enc, rng,
              TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                          patience=cfg.patience, augment=cfg.augment))
        d_test, ir_test = apply_norm(stats, fold.test)
        y_pred = np.asarray(classes)[net.predict(d_test, ir_test)]
    else:
        pca = None
        if modality != "ir-only":
            flat = np.stack([r.features.doppler.reshape(-1)
                             for r in fold.train])
            # centering drops one rank; cap k so small folds stay quiet
            k = min(cfg.pca_k, max(1, flat.shape[0] - 1), flat.shape[1])
            pca = pca_fit(flat, k=k,
                          fitted_on=frozenset(r.key for r in fold.train))
            _check_disjoint(pca.fitted_on, fold.test, "pca")
        X_train = _featurize(fold.train, pca, modality)
        X_test = _featurize(fold.test, pca, modality)
        if family == "rf":
            model = forest_train(X_train, y_train,
                                 ForestConfig(n_trees=cfg.n_trees), rng)
            y_pred = forest_predict(model, X_test)
        elif family == "svm":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = svm_train(X_train, y_train, C=cfg.svm_c,
                                  max_iter=cfg.svm_max_iter)
            y_pred = svm_predict(model, X_test)
        elif family == "mlp":
            model = mlp_train(X_train, y_train, rng, epochs=cfg.mlp_epochs)
            y_pred = model.predict(X_test)
        else:
            raise ValueError("unknown model family %r" % (family,))

    return y_test, y_pred


# ---------------------------------------------------------------------------
# experiment driver

@dataclass(frozen=True)
class UserResult:
    macro_tpr: float
    confusion: ConfusionMatrix
    fold_scores: tuple
    fold_confusions: tuple = ()  # (iteration, ConfusionMatrix) per fold


@dataclass(frozen=True)
class EvalReport:
    strategy: str
    modality: str
    family: str
    classes: tuple
    per_user: dict
    overall_mean: float
    std_error: float
    failures: tuple = ()

    @property
    def complete(self) -> bool:
        return not self.failures

    def user_scores(self):
        """Per-user macro TPRs in sorted user order."""
        return np.array([self.per_user[u].macro_tpr
                         for u in sorted(self.per_user)])


def _folds_for(ds, strategy, seed):
    if strategy == "loso":
        return split_loso(ds)
    rng = derive_rng(seed, _STREAM_SPLIT)
    if strategy == "personalized":
        per_user = split_personalized(ds, rng=rng)
        return [f for folds in per_user.values() for f in folds]
    if strategy == "user-calibrated":
        return split_user_calibrated(ds, rng=rng)
    raise ValueError("strategy must be one of %s" % (STRATEGIES,))


def _fold_task(args):
    family, modality, fold, cfg, seed, stream, extra_key = args
    return _run_fold(family, modality, fold, cfg, seed, stream, extra_key)


def _evaluate_folds(folds, family, modality, cfg, seed, classes,
                    stream=_STREAM_FOLD, extra_key=()):
    """Run folds (optionally in worker processes), collect per-fold results."""
    tasks = [(family, modality, f, cfg, seed, stream, extra_key)
             for f in folds]
    outcomes = []
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(_fold_task, t) for t in tasks]
            for fold, fut in zip(folds, futures):
                try:
                    outcomes.append((fold, fut.result(), None))
                except Exception as exc:
                    outcomes.append((fold, None,
                                     "%s: %s" % (type(exc).__name__, exc)))
    else:
        for task in tasks:
            fold = task[2]
            try:
                outcomes.append((fold, _fold_task(task), None))
            except Exception as exc:  # fold failures are reported, not fatal
                outcomes.append((fold, None, "%s: %s" % (type(exc).__name__, exc)))

    per_fold, failures = [], []
    for fold, result, error in outcomes:
        if error is not None:
            failures.append((fold.user, fold.iteration, error))
            continue
        y_test, y_pred = result
        cm = confusion_from_predictions(y_test, y_pred, classes)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AbsentClassWarning)
            _, macro = per_class_tpr(cm)
        per_fold.append((fold, cm, macro))
    return per_fold, failures


def _aggregate(per_fold):
    by_user = {}
    for fold, cm, macro in per_fold:
        by_user.setdefault(fold.user, []).append((fold.iteration, cm, macro))
    per_user = {}
    for user, results in sorted(by_user.items()):
        results = sorted(results, key=lambda r: r[0])
        total = results[0][1]
        for _, cm, _ in results[1:]:
            total = total.add(cm)
        scores = tuple(m for _, _, m in results)
        per_user[user] = UserResult(float(np.mean(scores)), total, scores,
                                    tuple((i, cm) for i, cm, _ in results))
    macros = np.array([r.macro_tpr for r in per_user.values()])
    overall = float(macros.mean()) if len(macros) else float("nan")
    sem = float(macros.std(ddof=1) / np.sqrt(len(macros))) if len(macros) > 1 else 0.0
    return per_user, overall, sem


def run_experiment(ds: Dataset, family: str, strategy: str,
                   modality: str = "fused", cfg: EvalConfig = EvalConfig(),
                   seed: int = 0) -> EvalReport:
    """Train and score one model family under one protocol and modality."""
    if family not in MODEL_FAMILIES:
        raise ValueError("family must be one of %s" % (MODEL_FAMILIES,))
    if strategy not in STRATEGIES:
        raise ValueError("strategy must be one of %s" % (STRATEGIES,))
    if modality not in MODALITIES:
        raise ValueError("modality must be one of %s" % (MODALITIES,))
    classes = tuple(ds.classes())
    folds = _folds_for(ds, strategy, seed)
    per_fold, failures = _evaluate_folds(folds, family, modality, cfg, seed,
                                         classes)
    per_user, overall, sem = _aggregate(per_fold)
    return EvalReport(strategy=strategy, modality=modality, family=family,
                      classes=classes, per_user=per_user, overall_mean=overall,
                      std_error=sem, failures=tuple(failures))


def inner_cv_score(ds: Dataset, family: str, modality: str = "fused",
                   cfg: EvalConfig = EvalConfig(), seed: int = 0,
                   n_groups: int = 3) -> float:
    """Mean macro TPR over a grouped leave-users-out split.

    Hyperparameter tuning scores candidates here rather than on the outer
    protocol, so tuned settings never see the final test users.
    """
    users = ds.users()
    if len(users) < 2:
        raise TooFewUsers("inner split needs at least 2 users")
    n_groups = min(n_groups, len(users))
    groups = [users[i::n_groups] for i in range(n_groups)]
    folds = []
    for i, group in enumerate(groups):
        held = set(group)
        train_recs = tuple(r for r in ds.records if r.user_id not in held)
        test_recs = tuple(r for r in ds.records if r.user_id in held)
        folds.append(Fold("loso", i, 0, train_recs, test_recs))
    classes = tuple(ds.classes())
    per_fold, failures = _evaluate_folds(folds, family, modality, cfg, seed,
                                         classes, stream=_STREAM_INNER)
    if failures:
        raise RuntimeError("inner fold failed: %s" % failures[0][2])
    return float(np.mean([macro for _, _, macro in per_fold]))


# ---------------------------------------------------------------------------
# training curve: calibration share swept from 10% to 50%

@dataclass(frozen=True)
class CurveResult:
    fractions: tuple
    means: tuple
    std_errors: tuple
    spearman: float


def training_curve(ds: Dataset, family: str,
                   fractions=CURVE_FRACTIONS, modality: str = "fused",
                   cfg: EvalConfig = EvalConfig(), seed: int = 0) -> CurveResult:
    """User-calibrated evaluation at increasing calibration shares.

    The personalized 60/40 split fixes each iteration's test side; the
    calibration share then draws round(f * class_count) records per class
    from the train side, so scores at different fractions are comparable.
    """
    classes = tuple(ds.classes())
    rng = derive_rng(seed, _STREAM_SPLIT)
    per_user = split_personalized(ds, rng=rng)
    by_user_others = {u: tuple(r for r in ds.records if r.user_id != u)
                      for u in per_user}

    means, sems = [], []
    for fraction in fractions:
        folds = []
        for user, user_folds in per_user.items():
            for f in user_folds:
                calib = []
                for code, recs in _per_class_lists(f.train).items():
                    total = ds.manifest[user][code]
                    take = min(len(recs), int(round(fraction * total)))
                    calib += recs[:take]
                folds.append(Fold("user-calibrated", user, f.iteration,
                                  by_user_others[user] + tuple(calib), f.test))
        per_fold, failures = _evaluate_folds(
            folds, family, modality, cfg, seed,
            classes, stream=_STREAM_CURVE,
            extra_key=(int(round(fraction * 100)),))
        if failures:
            raise RuntimeError("curve folds failed: %s" % (failures,))
        _, overall, sem = _aggregate(per_fold)
        means.append(overall)
        sems.append(sem)

    if len(set(means)) == 1:
        rho = float("nan")  # a flat curve has no defined rank correlation
    else:
        rho = float(spearmanr(np.asarray(fractions), np.asarray(means)).statistic)
    return CurveResult(tuple(fractions), tuple(means), tuple(sems), rho)


# ---------------------------------------------------------------------------
# reduced gesture sets

def evaluate_reduced(ds: Dataset, set_id, family: str,
                     modality: str = "fused", cfg: EvalConfig = EvalConfig(),
                     seed: int = 0) -> EvalReport:
    """User-calibrated evaluation on one application vocabulary subset."""
    members = {int(c) for c in gesture_set_members(set_id)}
    subset = ds.filter(lambda r: int(r.gesture) in members)
    return run_experiment(subset, family, "user-calibrated", modality, cfg,
                          seed)
