"""Batch evaluation metrics for explanation methods.

A perfect method adds features in an order that monotonically raises the
score of the explained class: Spearman correlation between addition index and
the descending rank of the after-addition scores is then exactly -1.
External methods join the comparison through plain-text ranking files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricsError(Exception):
    """Empty batches or malformed records."""


@dataclass(frozen=True)
class ExplanationRecord:
    """One explanation: how many features, what the masked image predicted,
    and the class score after each addition."""

    n_selected: int
    predicted_class: int
    t0: int
    score_trace: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "score_trace", tuple(float(s) for s in self.score_trace))
        if self.n_selected < 0:
            raise MetricsError("n_selected must be nonnegative")
        if self.n_selected >= 1 and len(self.score_trace) != self.n_selected:
            raise MetricsError(
                f"score trace length {len(self.score_trace)} != n_selected {self.n_selected}"
            )


@dataclass(frozen=True)
class ExplanationBatch:
    records: tuple[ExplanationRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)


def _require_nonempty(batch: ExplanationBatch) -> None:
    if len(batch) == 0:
        raise MetricsError("empty batch")


def pp_feature_count(batch: ExplanationBatch) -> float:
    """Mean number of selected features."""
    _require_nonempty(batch)
    return float(np.mean([r.n_selected for r in batch.records]))


def pp_accuracy(batch: ExplanationBatch) -> float:
    """Percent of records whose masked image kept the original class."""
    _require_nonempty(batch)
    hits = sum(1 for r in batch.records if r.predicted_class == r.t0)
    return 100.0 * hits / len(batch)


def _descending_ranks(scores: np.ndarray) -> np.ndarray:
    """Rank 1 = highest score; tied scores share their average rank."""
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(len(scores))
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pp_correlation(score_trace) -> float | None:
    """Spearman correlation of addition order vs. descending score ranks.

    Strictly increasing scores give exactly -1.0 (each added feature raised
    the class score).  Undefined -- returned as None -- for traces shorter
    than 2 or with all scores tied.
    """
    scores = np.asarray(score_trace, dtype=np.float64)
    if scores.ndim != 1 or len(scores) < 2:
        return None
    x = np.arange(1.0, len(scores) + 1.0)
    y = _descending_ranks(scores)
    xd = x - x.mean()
    yd = y - y.mean()
    denom = np.sqrt(np.sum(xd * xd) * np.sum(yd * yd))
    if denom == 0.0:
        return None
    return float(np.clip(np.sum(xd * yd) / denom, -1.0, 1.0))


def batch_correlation(batch: ExplanationBatch) -> float | None:
    """Mean per-record correlation over the records where it is defined."""
    _require_nonempty(batch)
    vals = [pp_correlation(r.score_trace) for r in batch.records]
    vals = [v for v in vals if v is not None]
    if not vals:
        return None
    return float(np.mean(vals))


def aggregate_report(batches: dict[str, ExplanationBatch]) -> list[dict]:
    """One row per method with the three batch metrics, in input order."""
    if not batches:
        raise MetricsError("no method batches given")
    rows = []
    for method, batch in batches.items():
        _require_nonempty(batch)
        rows.append(
            {
                "method": method,
                "pp_feature_count": pp_feature_count(batch),
                "pp_accuracy": pp_accuracy(batch),
                "pp_correlation": batch_correlation(batch),
            }
        )
    return rows


def parse_rankings(text: str) -> list[tuple[str, str, list[int]]]:
    """Parse external ranking lines: ``<image-id> <method> <id> <id> ...``.

    '#' starts a comment; blank lines are skipped.  The listed superpixel ids
    are the method's selection, in addition order.
    """
    out = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) < 3:
            raise MetricsError(f"ranking line {ln}: want '<image-id> <method> <id>...'")
        try:
            ids = [int(t) for t in toks[2:]]
        except ValueError:
            raise MetricsError(f"ranking line {ln}: superpixel ids must be integers") from None
        if len(set(ids)) != len(ids):
            raise MetricsError(f"ranking line {ln}: duplicate superpixel ids")
        out.append((toks[0], toks[1], ids))
    return out
