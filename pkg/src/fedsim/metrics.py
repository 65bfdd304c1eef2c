"""Cross-domain anti-spoofing metrics: AUC, EER and HTER.

Scores are oriented so that higher means "real" (label 1). A sample is
accepted as real when its score is ``>= threshold``; FAR is the fraction
of spoof samples accepted and FRR the fraction of real samples rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateEvaluationError, ShapeError


@dataclass(eq=False)
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.ndim != 1 or self.scores.shape != self.labels.shape:
            raise ShapeError(f"scores {self.scores.shape} and labels {self.labels.shape} must be equal-length 1-D")
        if not np.isin(self.labels, (0, 1)).all():
            raise ShapeError("labels must be 0 or 1")

    def __len__(self):
        return int(self.scores.shape[0])

    @property
    def num_real(self) -> int:
        return int(self.labels.sum())

    @property
    def num_spoof(self) -> int:
        return len(self) - self.num_real

    def require_both_classes(self) -> None:
        if self.num_real == 0 or self.num_spoof == 0:
            raise DegenerateEvaluationError(
                f"need both classes, got {self.num_real} real and {self.num_spoof} spoof scores"
            )

    @classmethod
    def concat(cls, sets: Sequence[ScoreSet]) -> ScoreSet:
        if not sets:
            raise DegenerateEvaluationError("no score sets to pool")
        return cls(np.concatenate([s.scores for s in sets]), np.concatenate([s.labels for s in sets]))


@dataclass
class EvalReport:
    hter: float
    eer: float
    auc: float
    threshold: float
    far: float
    frr: float
    tp: int
    tn: int
    fp: int
    fn: int

    def to_dict(self, percent: bool = False) -> dict:
        d = asdict(self)
        if percent:
            for key in ("hter", "eer", "auc", "far", "frr"):
                d[key] = round(100.0 * d[key], 2)
        return d

    def to_json(self, percent: bool = True) -> str:
        return json.dumps(self.to_dict(percent), sort_keys=True)


def auc(s: ScoreSet) -> float:
    """P(real score > spoof score) with ties counted half, via rank sums."""
    s.require_both_classes()
    ranks = rankdata(s.scores)  # average ranks, exact halves for ties
    n_real, n_spoof = s.num_real, s.num_spoof
    u = ranks[s.labels == 1].sum() - n_real * (n_real + 1) / 2.0
    return float(u / (n_real * n_spoof))


def _error_counts(s: ScoreSet, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(# spoof accepted, # real rejected) at each threshold."""
    real = np.sort(s.scores[s.labels == 1])
    spoof = np.sort(s.scores[s.labels == 0])
    fa = spoof.size - np.searchsorted(spoof, thresholds, side="left")
    fr = np.searchsorted(real, thresholds, side="left")
    return fa, fr


def eer(s: ScoreSet) -> tuple[float, float]:
    """Equal error rate and the threshold that achieves it.

    Candidates are every distinct score plus -inf and +inf. The winner
    minimizes |FAR - FRR|, then FAR + FRR, then the threshold itself.
    Comparisons run on integer counts scaled to a common denominator, so
    ties are detected exactly.
    """
    s.require_both_classes()
    thresholds = np.concatenate([[-np.inf], np.unique(s.scores), [np.inf]])
    fa, fr = _error_counts(s, thresholds)
    n_real, n_spoof = s.num_real, s.num_spoof
    # FAR = fa / n_spoof, FRR = fr / n_real; scale both by n_real * n_spoof
    gap = np.abs(fa * n_real - fr * n_spoof)
    total = fa * n_real + fr * n_spoof
    best = np.lexsort((np.arange(thresholds.size), total, gap))[0]
    far, frr = fa[best] / n_spoof, fr[best] / n_real
    return float((far + frr) / 2.0), float(thresholds[best])


def hter(s: ScoreSet, threshold: float) -> EvalReport:
    """Full report at a threshold fixed in advance (e.g. from data-center scores)."""
    s.require_both_classes()
    real = s.labels == 1
    accepted = s.scores >= threshold
    tp = int(np.count_nonzero(accepted & real))
    fn = int(np.count_nonzero(~accepted & real))
    fp = int(np.count_nonzero(accepted & ~real))
    tn = int(np.count_nonzero(~accepted & ~real))
    far = fp / (fp + tn)
    frr = fn / (tp + fn)
    eer_value, _ = eer(s)
    return EvalReport(
        hter=(far + frr) / 2.0,
        eer=eer_value,
        auc=auc(s),
        threshold=float(threshold),
        far=far,
        frr=frr,
        tp=tp,
        tn=tn,
        fp=fp,
        fn=fn,
    )


def cross_domain_threshold(center_scores: Sequence[ScoreSet]) -> float:
    """EER threshold of the pooled data-center scores, to be applied to user data."""
    pooled = ScoreSet.concat(list(center_scores))
    return eer(pooled)[1]


# brute-force references, kept deliberately naive for use as test oracles

def auc_pairwise(s: ScoreSet) -> float:
    s.require_both_classes()
    real = s.scores[s.labels == 1]
    spoof = s.scores[s.labels == 0]
    wins = 0.0
    for r in real:
        for f in spoof:
            if r > f:
                wins += 1.0
            elif r == f:
                wins += 0.5
    return wins / (real.size * spoof.size)


def eer_exhaustive(s: ScoreSet) -> tuple[float, float, float]:
    """EER by scanning midpoints between consecutive distinct scores.

    Returns ``(eer, far, frr)`` at the best midpoint under the same
    tie-breaking order as :func:`eer`.
    """
    s.require_both_classes()
    u = sorted(set(s.scores.tolist()))
    cands = [u[0] - 1.0] + [(a + b) / 2.0 for a, b in zip(u, u[1:])] + [u[-1] + 1.0]
    best = None
    for t in cands:
        fa = sum(1 for x, y in zip(s.scores, s.labels) if y == 0 and x >= t)
        fr = sum(1 for x, y in zip(s.scores, s.labels) if y == 1 and x < t)
        far, frr = fa / s.num_spoof, fr / s.num_real
        key = (abs(fa * s.num_real - fr * s.num_spoof), fa * s.num_real + fr * s.num_spoof, t)
        if best is None or key < best[0]:
            best = (key, far, frr)
    _, far, frr = best
    return (far + frr) / 2.0, far, frr
