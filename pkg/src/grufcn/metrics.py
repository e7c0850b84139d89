"""Evaluation statistics: error rates, per-class error (MPCE), macro f1,
cross-model rank aggregation, the exact/approximate Wilcoxon signed-rank
test, and critical-difference values for post-hoc rank comparison.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class UndefinedTestError(ValueError):
    """The statistic is undefined for the given sample (e.g. all-zero
    differences)."""


# ---------------------------------------------------------------------------
# Per-dataset classification metrics
# ---------------------------------------------------------------------------

def error_rate(predictions, truths) -> float:
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape or predictions.size == 0:
        raise ValueError(
            f"need equal-length nonempty label vectors, got "
            f"{predictions.shape} and {truths.shape}"
        )
    return float(np.mean(predictions != truths))


def mpce(error_rates, class_counts) -> float:
    """Mean over datasets of error_rate / class_count."""
    error_rates = np.asarray(error_rates, dtype=np.float64)
    class_counts = np.asarray(class_counts, dtype=np.float64)
    if error_rates.shape != class_counts.shape or error_rates.size == 0:
        raise ValueError("error rates and class counts must be equal-length and nonempty")
    if np.any(class_counts < 2):
        raise ValueError("every dataset needs at least 2 classes")
    return float(np.mean(error_rates / class_counts))


@dataclass
class ConfusionCounts:
    tp: np.ndarray  # (C,)
    fp: np.ndarray
    fn: np.ndarray

    @property
    def num_classes(self) -> int:
        return len(self.tp)


def confusion_counts(predictions, truths, num_classes: int) -> ConfusionCounts:
    predictions = np.asarray(predictions, dtype=int)
    truths = np.asarray(truths, dtype=int)
    tp = np.zeros(num_classes)
    fp = np.zeros(num_classes)
    fn = np.zeros(num_classes)
    for c in range(num_classes):
        tp[c] = np.sum((predictions == c) & (truths == c))
        fp[c] = np.sum((predictions == c) & (truths != c))
        fn[c] = np.sum((predictions != c) & (truths == c))
    return ConfusionCounts(tp, fp, fn)


def f1_scores(confusion: ConfusionCounts, averaging: str = "macro") -> float:
    """Macro-averaged f1 = 2PR/(P+R); a class with P+R = 0 scores 0."""
    if averaging != "macro":
        raise ValueError(f"unsupported averaging {averaging!r}")
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(confusion.tp + confusion.fp > 0,
                             confusion.tp / np.maximum(confusion.tp + confusion.fp, 1), 0.0)
        recall = np.where(confusion.tp + confusion.fn > 0,
                          confusion.tp / np.maximum(confusion.tp + confusion.fn, 1), 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.maximum(denom, 1e-300), 0.0)
    return float(np.mean(f1))


# ---------------------------------------------------------------------------
# Cross-model error matrix and rank aggregation
# ---------------------------------------------------------------------------

@dataclass
class ErrorMatrix:
    models: list[str]
    datasets: list[str]
    errors: np.ndarray  # (D, M) with NaN for missing entries

    @classmethod
    def from_csv(cls, path) -> "ErrorMatrix":
        with open(path, "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty error-matrix file") from None
            if not header or header[0] != "dataset":
                raise ValueError(f"{path}: first header column must be 'dataset'")
            models = header[1:]
            datasets, rows = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ValueError(
                        f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
                    )
                datasets.append(row[0])
                try:
                    rows.append([float(v) if v != "" else np.nan for v in row[1:]])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: bad value ({exc})") from exc
        return cls(models, datasets, np.asarray(rows, dtype=np.float64))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["dataset", *self.models])
            for name, row in zip(self.datasets, self.errors):
                writer.writerow([name] + ["" if np.isnan(v) else f"{v:.6f}" for v in row])

    def column(self, model: str) -> np.ndarray:
        return self.errors[:, self.models.index(model)]


def tie_average_ranks(values: np.ndarray) -> np.ndarray:
    """Ascending 1-based ranks with tied entries sharing the mean of their
    positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j < len(values) and values[order[j]] == values[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2
        i = j
    return ranks


def rank_models(matrix: ErrorMatrix, missing_mode: str = "exclude"):
    """Per-model arithmetic mean rank and "no. best" count.

    missing_mode "exclude": absent entries are left out of that dataset's
    ranking and of the absent model's mean. "worst": absent entries rank as
    tied-worst and count into every mean.
    """
    if missing_mode not in ("exclude", "worst"):
        raise ValueError(f"missing_mode must be 'exclude' or 'worst', got {missing_mode!r}")
    n_models = len(matrix.models)
    if n_models < 2:
        raise ValueError("ranking needs at least 2 models")
    rank_sums = np.zeros(n_models)
    rank_counts = np.zeros(n_models, dtype=int)
    no_best = np.zeros(n_models, dtype=int)
    for d, row in enumerate(matrix.errors):
        present = ~np.isnan(row)
        if present.sum() < 2:
            warnings.warn(
                f"dataset {matrix.datasets[d]!r} has fewer than 2 entries; skipped"
            )
            continue
        best = np.nanmin(row)
        no_best[present & (row == best)] += 1
        if missing_mode == "exclude":
            ranks = tie_average_ranks(row[present])
            rank_sums[present] += ranks
            rank_counts[present] += 1
        else:
            filled = np.where(present, row, np.inf)
            rank_sums += tie_average_ranks(filled)
            rank_counts += 1
    mean_ranks = {m: rank_sums[i] / rank_counts[i] for i, m in enumerate(matrix.models)}
    best_counts = {m: int(no_best[i]) for i, m in enumerate(matrix.models)}
    return mean_ranks, best_counts


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------

@dataclass
class WilcoxonResult:
    statistic: float   # W = min(W+, W-)
    pvalue: float
    n: int             # pairs remaining after zero differences are dropped
    exact: bool


EXACT_LIMIT = 25


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided paired signed-rank test.

    Zero differences are dropped; |differences| are ranked with tie
    averaging. For n <= 25 the p-value is exact over all 2^n sign
    assignments; above that a tie-corrected normal approximation with
    continuity correction is used.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"paired samples differ in length: {a.shape} vs {b.shape}")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise UndefinedTestError("all paired differences are zero")
    ranks = tie_average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_LIMIT:
        p = _exact_pvalue(ranks, w)
        return WilcoxonResult(w, p, n, exact=True)
    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie_counts**3 - tie_counts)) / 48
    z = (w - mean + 0.5) / math.sqrt(var)
    p = min(1.0, 2 * 0.5 * math.erfc(-z / math.sqrt(2)))
    return WilcoxonResult(w, p, n, exact=False)


def _exact_pvalue(ranks: np.ndarray, w: float) -> float:
    """min(1, 2 * P(W+ <= w)) over the exact null distribution of W+.

    Tie-averaged ranks are half-integers, so everything is doubled to keep
    integer arithmetic; counts are convolved one rank at a time, which
    enumerates all 2^n sign assignments without listing them.
    """
    doubled = [round(2 * r) for r in ranks]
    total = sum(doubled)
    counts = [0] * (total + 1)
    counts[0] = 1
    upper = 0
    for r in doubled:
        for s in range(upper, -1, -1):
            if counts[s]:
                counts[s + r] += counts[s]
        upper += r
    threshold = round(2 * w)
    le = sum(counts[: threshold + 1])
    p = Fraction(2 * le, 2 ** len(ranks))
    return min(1.0, float(p))


# ---------------------------------------------------------------------------
# Nemenyi critical difference
# ---------------------------------------------------------------------------

# Two-tailed Nemenyi q values (studentized range / sqrt(2), infinite df),
# indexed by the number of models compared.
NEMENYI_Q = {
    0.05: {2: 1.9600, 3: 2.3437, 4: 2.5690, 5: 2.7278, 6: 2.8497, 7: 2.9483,
           8: 3.0309, 9: 3.1017, 10: 3.1637, 11: 3.2187, 12: 3.2680,
           13: 3.3127, 14: 3.3536, 15: 3.3912, 16: 3.4260, 17: 3.4584,
           18: 3.4887, 19: 3.5171, 20: 3.5438},
    0.10: {2: 1.6449, 3: 2.0523, 4: 2.2913, 5: 2.4595, 6: 2.5885, 7: 2.6927,
           8: 2.7799, 9: 2.8546, 10: 2.9199, 11: 2.9778, 12: 3.0297,
           13: 3.0767, 14: 3.1197, 15: 3.1592, 16: 3.1957, 17: 3.2297,
           18: 3.2615, 19: 3.2912, 20: 3.3192},
}


def nemenyi_cd(num_models: int, num_datasets: int, alpha: float = 0.05) -> float:
    """CD = q_alpha(k) * sqrt(k(k+1) / (6N)); mean-rank gaps above this are
    significant."""
    if alpha not in NEMENYI_Q:
        raise ValueError(f"alpha must be one of {sorted(NEMENYI_Q)}, got {alpha}")
    table = NEMENYI_Q[alpha]
    if num_models not in table:
        raise ValueError(f"q table covers k in [2, {max(table)}], got {num_models}")
    if num_datasets < 1:
        raise ValueError(f"num_datasets must be >= 1, got {num_datasets}")
    return table[num_models] * math.sqrt(
        num_models * (num_models + 1) / (6 * num_datasets)
    )


def cd_diagram_svg(mean_ranks: dict[str, float], cd: float) -> str:
    """Standalone SVG: a mean-rank axis with labeled model positions and a
    bar showing the critical difference."""
    k = len(mean_ranks)
    lo = math.floor(min(mean_ranks.values()))
    hi = math.ceil(max(mean_ranks.values()))
    if hi == lo:
        hi = lo + 1
    width, margin = 720, 60
    axis_y = 60
    scale = (width - 2 * margin) / (hi - lo)

    def x_of(rank: float) -> float:
        return margin + (rank - lo) * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{120 + 18 * k}" font-family="sans-serif" font-size="12">',
        f'<line x1="{margin}" y1="{axis_y}" x2="{width - margin}" y2="{axis_y}" '
        'stroke="black"/>',
    ]
    for tick in range(lo, hi + 1):
        x = x_of(tick)
        parts.append(f'<line x1="{x:.1f}" y1="{axis_y - 5}" x2="{x:.1f}" '
                     f'y2="{axis_y + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{axis_y - 10}" '
                     f'text-anchor="middle">{tick}</text>')
    parts.append(
        f'<line x1="{margin}" y1="{axis_y - 35}" x2="{margin + cd * scale:.1f}" '
        f'y2="{axis_y - 35}" stroke="black" stroke-width="3"/>'
    )
    parts.append(f'<text x="{margin}" y="{axis_y - 42}">CD = {cd:.3f}</text>')
    for i, (name, rank) in enumerate(sorted(mean_ranks.items(), key=lambda kv: kv[1])):
        x = x_of(rank)
        y = axis_y + 30 + 18 * i
        parts.append(f'<line x1="{x:.1f}" y1="{axis_y}" x2="{x:.1f}" y2="{y - 4}" '
                     'stroke="gray" stroke-dasharray="2,2"/>')
        parts.append(f'<text x="{x:.1f}" y="{y}" text-anchor="middle">'
                     f'{name} ({rank:.3f})</text>')
    parts.append("</svg>")
    return "\n".join(parts)
