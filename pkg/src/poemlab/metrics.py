"""OOD detection metrics. Scores follow the higher-is-more-ID convention; ID is the positive class."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import LengthMismatch


@dataclass
class MetricsReport:
    fpr95: float
    auroc: float
    aupr: float
    id_acc: float
    gamma: float

    CSV_COLUMNS = ("fpr95", "auroc", "aupr", "id_acc", "gamma")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps({"schema_version": 1, **self.to_dict()}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(**{k: data[k] for k in cls.CSV_COLUMNS})

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_COLUMNS)
        writer.writerow([repr(float(getattr(self, c))) for c in self.CSV_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        row = next(csv.DictReader(io.StringIO(text)))
        return cls(**{c: float(row[c]) for c in cls.CSV_COLUMNS})


def _scores(x):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("score list is empty")
    return x


def threshold_at_tpr(id_scores, target_tpr=0.95):
    """Largest gamma with fraction(id_scores >= gamma) >= target_tpr.

    The threshold is always one of the ID scores: with the scores sorted in
    descending order, it is the entry at position ceil(target_tpr * n) (1-based).
    """
    s = np.sort(_scores(id_scores))[::-1]
    n = s.size
    # guard against 0.95 * 100 landing on 95.00000000000001
    need = math.ceil(target_tpr * n - 1e-9)
    need = min(max(need, 1), n)
    return float(s[need - 1])


def fpr_at_tpr(id_scores, ood_scores, tpr=0.95):
    gamma = threshold_at_tpr(id_scores, tpr)
    return float(np.mean(_scores(ood_scores) >= gamma))


def auroc(id_scores, ood_scores):
    """Mann-Whitney U / (n_id * n_ood): P(id > ood) + P(id = ood) / 2."""
    a, b = _scores(id_scores), _scores(ood_scores)
    ranks = rankdata(np.concatenate([a, b]), method="average")
    u = ranks[:a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def aupr(id_scores, ood_scores):
    """Average precision with ID positive; tied scores enter as one block."""
    a, b = _scores(id_scores), _scores(ood_scores)
    scores = np.concatenate([a, b])
    positive = np.concatenate([np.ones(a.size), np.zeros(b.size)])
    order = np.argsort(-scores, kind="stable")
    scores, positive = scores[order], positive[order]
    tp = np.cumsum(positive)
    fp = np.cumsum(1.0 - positive)
    # last index of each tie block
    ends = np.flatnonzero(np.r_[scores[1:] != scores[:-1], True])
    tp, fp = tp[ends], fp[ends]
    precision = tp / (tp + fp)
    recall = tp / a.size
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(d_recall * precision))


def id_accuracy(predictions, labels):
    """Fraction correct. 2-D `predictions` are treated as logits and argmaxed to 1..K."""
    pred = np.asarray(predictions)
    if pred.ndim == 2:
        pred = np.argmax(pred, axis=1) + 1
    labels = np.asarray(labels)
    if pred.shape[0] != labels.shape[0]:
        raise LengthMismatch(f"{pred.shape[0]} predictions vs {labels.shape[0]} labels")
    if labels.size == 0:
        return 0.0
    return float(np.mean(pred == labels))


def evaluate(id_scores, ood_scores, predictions=None, labels=None, tpr=0.95):
    acc = id_accuracy(predictions, labels) if predictions is not None else float("nan")
    return MetricsReport(
        fpr95=fpr_at_tpr(id_scores, ood_scores, tpr),
        auroc=auroc(id_scores, ood_scores),
        aupr=aupr(id_scores, ood_scores),
        id_acc=acc,
        gamma=threshold_at_tpr(id_scores, tpr),
    )
