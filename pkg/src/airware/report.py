"""Report rendering: deterministic JSON/CSV/text plus matplotlib figures.

Every delimited artifact (JSON, CSV, text table) is byte-reproducible for a
fixed seed; wall-clock information lives only in the run manifest written by
the CLI. Figures are rendered with the Agg backend next to the tables.
"""

import json
from pathlib import Path
import warnings

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import AbsentClassWarning
from .evaluate import CurveResult, EvalReport, per_class_tpr


def _jsonable(value):
    """Make a value JSON-safe: numpy scalars to python, nan/inf to None."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, (np.integer, int)):
        return int(value)
    return value


def _dump_json(payload, path: Path):
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True)
                    + "\n")


def report_to_dict(report: EvalReport) -> dict:
    per_user = {}
    for user, res in sorted(report.per_user.items()):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AbsentClassWarning)
            rates, _ = per_class_tpr(res.confusion)
        per_user[str(user)] = {
            "macro_tpr": res.macro_tpr,
            "fold_scores": list(res.fold_scores),
            "per_class_tpr": rates,
            "confusion": res.confusion.counts,
        }
    return _jsonable({
        "family": report.family,
        "strategy": report.strategy,
        "modality": report.modality,
        "classes": list(report.classes),
        "overall_mean": report.overall_mean,
        "std_error": report.std_error,
        "complete": report.complete,
        "failures": [list(f) for f in report.failures],
        "per_user": per_user,
    })


def confusion_to_csv(cm) -> str:
    header = "true\\pred," + ",".join(str(c) for c in cm.classes)
    lines = [header]
    for code, row in zip(cm.classes, cm.counts):
        lines.append("%s,%s" % (code, ",".join(str(int(v)) for v in row)))
    return "\n".join(lines) + "\n"


def _overall_confusion(report: EvalReport):
    users = sorted(report.per_user)
    total = report.per_user[users[0]].confusion
    for user in users[1:]:
        total = total.add(report.per_user[user].confusion)
    return total


def report_to_text(report: EvalReport) -> str:
    lines = [
        "gesture recognition report",
        "family %s | strategy %s | modality %s | %d classes"
        % (report.family, report.strategy, report.modality,
           len(report.classes)),
        "",
        "%6s  %9s  %s" % ("user", "macro_tpr", "fold_scores"),
    ]
    for user, res in sorted(report.per_user.items()):
        folds = ",".join("%.4f" % s for s in res.fold_scores)
        lines.append("%6d  %9.4f  %s" % (user, res.macro_tpr, folds))
    lines.append("")
    lines.append("mean %.4f  sem %.4f  %s"
                 % (report.overall_mean, report.std_error,
                    "complete" if report.complete
                    else "INCOMPLETE (%d failed folds)" % len(report.failures)))
    for user, iteration, message in report.failures:
        lines.append("failed fold user=%s iteration=%s: %s"
                     % (user, iteration, message))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# figures

def render_confusion_figure(cm, path: Path, title: str):
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    with np.errstate(invalid="ignore"):
        row_sums = cm.counts.sum(axis=1, keepdims=True)
        shares = np.where(row_sums > 0, cm.counts / np.maximum(row_sums, 1), 0.0)
    im = ax.imshow(shares, cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(cm.classes)), [str(c) for c in cm.classes],
                  fontsize=7, rotation=90)
    ax.set_yticks(range(len(cm.classes)), [str(c) for c in cm.classes],
                  fontsize=7)
    ax.set_xlabel("predicted class")
    ax.set_ylabel("true class")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="row share")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_per_user_figure(report: EvalReport, path: Path):
    users = sorted(report.per_user)
    scores = [report.per_user[u].macro_tpr for u in users]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([str(u) for u in users], scores, color="#4878a8")
    ax.axhline(report.overall_mean, color="#b5442d", linestyle="--",
               label="mean %.3f" % report.overall_mean)
    ax.set_xlabel("user")
    ax.set_ylabel("macro TPR")
    ax.set_ylim(0, 1)
    ax.set_title("%s / %s / %s" % (report.family, report.strategy,
                                   report.modality))
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_curve_figure(curve: CurveResult, path: Path, label: str):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(curve.fractions, curve.means, yerr=curve.std_errors,
                marker="o", capsize=3, color="#4878a8")
    ax.set_xlabel("calibration fraction")
    ax.set_ylabel("macro TPR")
    ax.set_title(label)
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_gridsearch_figure(rows, path: Path):
    labels = ["%d/%.2f/%d" % (r["window"], r["overlap"], r["half_width"])
              for r in rows]
    scores = [r["score"] if r["ok"] else 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(7, 5.5))
    ax.barh(range(len(rows))[::-1], scores, color="#4878a8")
    ax.set_yticks(range(len(rows))[::-1], labels, fontsize=7)
    ax.set_xlabel("macro TPR")
    ax.set_ylabel("window/overlap/half-width")
    ax.set_title("STFT parameter grid search")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# whole-artifact writers; each returns the list of files it created

def write_experiment_report(report: EvalReport, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(exist_ok=True)
    written = []

    _dump_json(report_to_dict(report), out / "report.json")
    written.append(out / "report.json")
    (out / "report.txt").write_text(report_to_text(report))
    written.append(out / "report.txt")

    if report.per_user:
        overall = _overall_confusion(report)
        (out / "confusion_overall.csv").write_text(confusion_to_csv(overall))
        written.append(out / "confusion_overall.csv")
        for user in sorted(report.per_user):
            for iteration, cm in report.per_user[user].fold_confusions:
                p = out / ("confusion_user%d_fold%d.csv" % (user, iteration))
                p.write_text(confusion_to_csv(cm))
                written.append(p)
        render_confusion_figure(
            overall, out / "figures" / "confusion_overall.png",
            "%s / %s / %s" % (report.family, report.strategy, report.modality))
        written.append(out / "figures" / "confusion_overall.png")
        render_per_user_figure(report, out / "figures" / "per_user_tpr.png")
        written.append(out / "figures" / "per_user_tpr.png")
    return written


def write_curve_report(curve: CurveResult, out_dir, label: str) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    rows = ["fraction,macro_tpr,std_error"]
    for f, m, s in zip(curve.fractions, curve.means, curve.std_errors):
        rows.append("%.2f,%.6f,%.6f" % (f, m, s))
    (out / "curve.csv").write_text("\n".join(rows) + "\n")
    written.append(out / "curve.csv")
    _dump_json({"fractions": curve.fractions, "means": curve.means,
                "std_errors": curve.std_errors, "spearman": curve.spearman},
               out / "curve.json")
    written.append(out / "curve.json")
    render_curve_figure(curve, out / "curve.png", label)
    written.append(out / "curve.png")
    return written


def gridsearch_to_csv(rows) -> str:
    lines = ["window,overlap,half_width,score"]
    for r in rows:
        score = "%.6f" % r["score"] if r["ok"] else "nan"
        lines.append("%d,%.2f,%d,%s"
                     % (r["window"], r["overlap"], r["half_width"], score))
    return "\n".join(lines) + "\n"


def write_gridsearch_report(rows, out_file) -> list:
    out = Path(out_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(gridsearch_to_csv(rows))
    fig_path = out.with_suffix(".png")
    render_gridsearch_figure(rows, fig_path)
    return [out, fig_path]


_TRIAL_COLUMNS = ("trial", "l2", "lr_exponent", "n_filters", "kernel_size",
                  "dropout_p", "hidden_units", "initializer", "score",
                  "status", "seed")


def trials_to_csv(history, seed: int) -> str:
    lines = [",".join(_TRIAL_COLUMNS)]
    for i, t in enumerate(history):
        hp = t.hparams
        score = "%.6f" % t.score if t.status == "ok" else "nan"
        lines.append(",".join(map(str, (
            i, repr(hp.l2), hp.lr_exponent, hp.n_filters, hp.kernel_size,
            repr(hp.dropout_p), hp.hidden_units, hp.initializer, score,
            t.status, seed))))
    return "\n".join(lines) + "\n"


def write_tune_report(history, best, out_file, seed: int) -> list:
    out = Path(out_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(trials_to_csv(history, seed))
    best_path = out.with_suffix(".best.json")
    hp = best.hparams
    _dump_json({"score": best.score,
                "hparams": {"l2": hp.l2, "lr_exponent": hp.lr_exponent,
                            "n_filters": hp.n_filters,
                            "kernel_size": hp.kernel_size,
                            "dropout_p": hp.dropout_p,
                            "hidden_units": hp.hidden_units,
                            "initializer": hp.initializer}},
               best_path)
    return [out, best_path]
