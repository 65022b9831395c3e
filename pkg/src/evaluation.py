"""Score scaling, Pearson correlation and experiment reports."""

import csv
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Provenance, WordSample, sort_key
from .errors import DataValidationError, DegenerateCorrelationError, ScoreRangeError, ShapeMismatchError
from .scorer import ScorerModel, predict

logger = logging.getLogger(__name__)

MAX_HUMAN_SCORE = 10.0
PREDICTION_COLUMNS = ("utt_id", "word", "word_index", "target", "prediction")
SWEEP_COLUMNS = ("aug_size", "feature_set", "pcc")


def scale_human_score(raw: float) -> float:
    """Map a 0-10 rater score onto [0,1]."""
    raw = float(raw)
    if not 0.0 <= raw <= MAX_HUMAN_SCORE:
        raise ScoreRangeError(f"Human score {raw} outside [0, {MAX_HUMAN_SCORE:g}]")
    return raw / MAX_HUMAN_SCORE


def pearson_pcc(pred: Sequence[float], label: Sequence[float]) -> float:
    """Sample Pearson correlation in float64.

    Raises:
        ShapeMismatchError: lengths differ or fewer than two points.
        DegenerateCorrelationError: either vector is constant.
    """
    x = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(label, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"{x.size} predictions but {y.size} labels")
    if x.size < 2:
        raise ShapeMismatchError(f"Correlation needs at least 2 points, got {x.size}")
    if np.ptp(x) == 0:
        raise DegenerateCorrelationError("Predictions are constant; correlation is undefined")
    if np.ptp(y) == 0:
        raise DegenerateCorrelationError("Labels are constant; correlation is undefined")
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(xc @ yc / np.sqrt((xc @ xc) * (yc @ yc)))
    return min(max(r, -1.0), 1.0)


@dataclass(frozen=True)
class PredictionRow:
    utt_id: str
    word: str
    word_index: int
    target: float
    prediction: float


@dataclass(frozen=True)
class EvaluationResult:
    pcc: float
    rows: tuple[PredictionRow, ...]


def prediction_rows(model: ScorerModel, samples: Sequence[WordSample]) -> list[PredictionRow]:
    """Eval-mode predictions, sorted by (utt_id, word_index)."""
    if not samples:
        raise DataValidationError("Cannot evaluate on an empty test set")
    for s in samples:
        if s.provenance is not Provenance.HUMAN_LABELED:
            raise DataValidationError(
                f"{s.utt_id}:{s.word_index}: test samples must be human labeled, got {s.provenance.value}"
            )
    ordered = sorted(samples, key=sort_key)
    preds = predict(model, ordered)
    return [PredictionRow(s.utt_id, s.word, s.word_index, float(s.target), float(p))
            for s, p in zip(ordered, preds)]


def evaluate(model: ScorerModel, samples: Sequence[WordSample]) -> EvaluationResult:
    """PCC over all test words pooled, plus the per-word report."""
    rows = prediction_rows(model, samples)
    pcc = pearson_pcc([r.prediction for r in rows], [r.target for r in rows])
    logger.info("PCC %.4f over %d words", pcc, len(rows))
    return EvaluationResult(pcc, tuple(rows))


def write_predictions_report(rows: Iterable[PredictionRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for r in rows:
            writer.writerow([r.utt_id, r.word, r.word_index, repr(r.target), repr(r.prediction)])


def read_predictions_report(path) -> list[PredictionRow]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        return [PredictionRow(r["utt_id"], r["word"], int(r["word_index"]),
                              float(r["target"]), float(r["prediction"])) for r in reader]


@dataclass(frozen=True)
class SweepPoint:
    aug_size: int
    feature_set: str
    pcc: float


def sweep_report(results: Iterable[SweepPoint], path) -> list[SweepPoint]:
    """Write sweep results as CSV sorted by (aug_size, feature_set).

    A NaN pcc marks a degenerate model.
    """
    ordered = sorted(results, key=lambda r: (r.aug_size, r.feature_set))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in ordered:
            writer.writerow([r.aug_size, r.feature_set, repr(float(r.pcc))])
    return ordered


def sweep_table(points: Sequence[SweepPoint]) -> str:
    """Plain-text table: one row per size, one column per feature set."""
    feature_sets = sorted({p.feature_set for p in points})
    sizes = sorted({p.aug_size for p in points})
    lookup = {(p.aug_size, p.feature_set): p.pcc for p in points}
    lines = ["aug_size  " + "  ".join(f"{fs:>8}" for fs in feature_sets)]
    for size in sizes:
        cells = [lookup.get((size, fs)) for fs in feature_sets]
        lines.append(f"{size:>8}  " + "  ".join("       -" if c is None else f"{c:8.4f}" for c in cells))
    return "\n".join(lines)
