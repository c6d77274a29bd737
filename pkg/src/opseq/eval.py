"""Classification metrics, multi-run aggregation and one-way ANOVA."""
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateGroups, EmptyList, EmptyMatrix, InvalidDegrees,
                     LabelOutOfRange, LengthMismatch, TooFewGroups,
                     TooFewObservations)


# -- confusion matrix and metrics --------------------------------------------------

@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, cols = predicted class

    @property
    def K(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def tp(self):
        return np.diag(self.counts).astype(np.int64)

    def fp(self):
        return self.counts.sum(axis=0) - self.tp()

    def fn(self):
        return self.counts.sum(axis=1) - self.tp()

    def tn(self):
        return self.total - self.tp() - self.fp() - self.fn()


def confusion(preds, truths, K):
    preds = np.asarray(preds, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if preds.shape != truths.shape:
        raise LengthMismatch(f"{preds.size} predictions vs {truths.size} truths")
    for name, arr in (("prediction", preds), ("truth", truths)):
        if arr.size and (arr.min() < 0 or arr.max() >= K):
            raise LabelOutOfRange(f"{name} labels must lie in [0, {K})")
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts)


def _ratio(num, den):
    return num / den if den else 0.0


def precision(tp, fp):
    return _ratio(tp, tp + fp)


def recall(tp, fn):
    return _ratio(tp, tp + fn)


def f1(p, r):
    return _ratio(2 * p * r, p + r)


def binary_metrics(tp, tn, fp, fn):
    """Accuracy, precision, recall and F1 from the four binary counts."""
    p = precision(tp, fp)
    r = recall(tp, fn)
    return {"accuracy": _ratio(tp + tn, tp + tn + fp + fn),
            "precision": p, "recall": r, "f1": f1(p, r)}


@dataclass
class MetricsReport:
    accuracy: float
    precision: list
    recall: list
    f1: list
    macro_precision: float
    macro_recall: float
    macro_f1: float


def metrics(cm):
    """Per-class metrics from each class's one-vs-rest counts; macro values are
    unweighted means over classes. A zero denominator yields 0."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    tp, fp, fn = cm.tp(), cm.fp(), cm.fn()
    prec = [precision(int(a), int(b)) for a, b in zip(tp, fp)]
    rec = [recall(int(a), int(b)) for a, b in zip(tp, fn)]
    f1s = [f1(p, r) for p, r in zip(prec, rec)]
    K = cm.K
    return MetricsReport(accuracy=int(tp.sum()) / cm.total,
                         precision=prec, recall=rec, f1=f1s,
                         macro_precision=math.fsum(prec) / K,
                         macro_recall=math.fsum(rec) / K,
                         macro_f1=math.fsum(f1s) / K)


def aggregate_runs(accuracies):
    """``(mean, max, min)`` over repeated runs."""
    values = [float(a) for a in accuracies]
    if not values:
        raise EmptyList("no run accuracies to aggregate")
    return math.fsum(values) / len(values), max(values), min(values)


# -- regularized incomplete beta and the F distribution ----------------------------

_CF_MAX_ITER = 200
_CF_EPS = 1e-14
_TINY = 1e-300


def _beta_cf(a, b, x):
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            break
    return h


def betainc(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise InvalidDegrees(f"beta parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _check_degrees(d1, d2):
    if d1 < 1 or d2 < 1:
        raise InvalidDegrees(f"degrees of freedom must be >= 1, got ({d1}, {d2})")


def f_cdf(x, d1, d2):
    _check_degrees(d1, d2)
    if x <= 0:
        return 0.0
    return betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))


def f_sf(x, d1, d2):
    """Upper tail ``1 - f_cdf``, evaluated directly for accuracy at small p."""
    _check_degrees(d1, d2)
    if x <= 0:
        return 1.0
    return betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))


# -- one-way ANOVA ---------------------------------------------------------------------

@dataclass
class AnovaResult:
    F: float
    df_between: int
    df_within: int
    p: float

    def to_dict(self):
        return {"F": self.F, "df1": self.df_between, "df2": self.df_within, "p": self.p}


def anova_oneway(groups):
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2:
        raise TooFewGroups(f"need at least 2 groups, got {len(groups)}")
    if min(len(g) for g in groups) < 2:
        raise TooFewObservations("every group needs at least 2 observations")
    k = len(groups)
    n_total = sum(len(g) for g in groups)
    grand = math.fsum(math.fsum(g) for g in groups) / n_total
    means = [math.fsum(g) / len(g) for g in groups]
    ss_between = math.fsum(len(g) * (m - grand) ** 2 for g, m in zip(groups, means))
    ss_within = math.fsum(math.fsum((g - m) ** 2) for g, m in zip(groups, means))
    if ss_within == 0.0:
        raise DegenerateGroups("within-group variance is zero")
    df1, df2 = k - 1, n_total - k
    F = (ss_between / df1) / (ss_within / df2)
    return AnovaResult(F, df1, df2, f_sf(F, df1, df2))


# -- JSON report -------------------------------------------------------------------------

def build_report(cm, label_names=None, run_accuracies=None, anova=None):
    """Metrics report with stable key order."""
    rep = metrics(cm)
    names = label_names or [str(i) for i in range(cm.K)]
    report = {
        "accuracy": rep.accuracy,
        "per_class": [{"label": names[i], "precision": rep.precision[i],
                       "recall": rep.recall[i], "f1": rep.f1[i]} for i in range(cm.K)],
        "macro": {"precision": rep.macro_precision, "recall": rep.macro_recall,
                  "f1": rep.macro_f1},
        "confusion": [int(v) for v in cm.counts.ravel()],
    }
    values = list(run_accuracies) if run_accuracies else [rep.accuracy]
    mean, hi, lo = aggregate_runs(values)
    report["runs"] = {"mean": mean, "max": hi, "min": lo, "values": values}
    report["anova"] = anova.to_dict() if anova is not None else None
    return report


def dumps_report(report):
    return json.dumps(report, indent=2) + "\n"


def write_report(report, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_report(report))


def read_report(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
