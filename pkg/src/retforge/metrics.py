"""Exhaustive retrieval evaluation over question/paragraph embeddings.

Distances are squared Euclidean (rank-equivalent to cosine for unit-norm
rows), computed in blocks with 64-bit accumulators and stored as float32.
Ranking metrics break ties deterministically: the lower paragraph column
index wins.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

DEFAULT_KS = (1, 2, 5, 10, 20, 50)
_DIST_BLOCK_ROWS = 256


@dataclass
class EvalReport:
    """Recall table, precision-recall sweep, and summary scores."""

    n_questions: int
    n_paragraphs: int
    recall_at: dict[int, tuple[int, float]]  # k -> (hit count, fraction)
    pr_curve: list[tuple[float, float]]  # (recall, precision) points
    average_precision: float
    auc: float | None = None

    def to_dict(self) -> dict:
        return {
            "n_questions": self.n_questions,
            "n_paragraphs": self.n_paragraphs,
            "recall_at": {
                str(k): {"count": c, "fraction": f} for k, (c, f) in self.recall_at.items()
            },
            "average_precision": self.average_precision,
            "auc": self.auc,
            "pr_curve": [[r, p] for r, p in self.pr_curve],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            n_questions=d["n_questions"],
            n_paragraphs=d["n_paragraphs"],
            recall_at={int(k): (v["count"], v["fraction"]) for k, v in d["recall_at"].items()},
            pr_curve=[(r, p) for r, p in d["pr_curve"]],
            average_precision=d["average_precision"],
            auc=d["auc"],
        )


def pairwise_distances(q: np.ndarray, p: np.ndarray, block_rows: int = _DIST_BLOCK_ROWS) -> np.ndarray:
    """Squared Euclidean distances d[i, j] = ||q_i - p_j||^2, float32.

    Computed block-wise over question rows; results are independent of the
    block size. Tiny negative values from cancellation are clamped to 0.
    """
    q = np.asarray(q)
    p = np.asarray(p)
    if q.ndim != 2 or p.ndim != 2:
        raise ValueError("inputs must be 2-axis matrices")
    if q.shape[0] == 0 or p.shape[0] == 0:
        raise ValueError("inputs must be non-empty")
    if q.shape[1] != p.shape[1]:
        raise ValueError(f"dimension mismatch: {q.shape[1]} vs {p.shape[1]}")
    p64 = p.astype(np.float64)
    p_sq = np.einsum("ij,ij->i", p64, p64)
    out = np.empty((q.shape[0], p.shape[0]), dtype=np.float32)
    for start in range(0, q.shape[0], block_rows):
        q64 = q[start : start + block_rows].astype(np.float64)
        q_sq = np.einsum("ij,ij->i", q64, q64)
        block = q_sq[:, None] + p_sq[None, :] - 2.0 * (q64 @ p64.T)
        np.maximum(block, 0.0, out=block)
        out[start : start + block_rows] = block.astype(np.float32)
    return out


def _truth_ranks(d: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """0-based rank of each row's true column under the lowest-index tie-break."""
    rows = np.arange(d.shape[0])
    true_d = d[rows, truth]
    smaller = (d < true_d[:, None]).sum(axis=1)
    tied_before = ((d == true_d[:, None]) & (np.arange(d.shape[1])[None, :] < truth[:, None])).sum(
        axis=1
    )
    return smaller + tied_before


def _check_truth(d: np.ndarray, truth: np.ndarray) -> np.ndarray:
    truth = np.asarray(truth)
    if truth.shape != (d.shape[0],):
        raise ValueError(f"need one true column per question, got {truth.shape}")
    if truth.min() < 0 or truth.max() >= d.shape[1]:
        raise ValueError("true column out of range")
    return truth.astype(np.int64)


def recall_at_k(
    d: np.ndarray, truth: np.ndarray, ks: list[int] | tuple[int, ...] = DEFAULT_KS
) -> dict[int, tuple[int, float]]:
    """Per k: how many questions have their true paragraph in the k nearest."""
    truth = _check_truth(d, truth)
    ks = list(ks)
    if any(k < 1 or k > d.shape[1] for k in ks):
        raise ValueError(f"every k must lie in [1, {d.shape[1]}]")
    ranks = _truth_ranks(d, truth)
    out = {}
    for k in ks:
        count = int((ranks < k).sum())
        out[k] = (count, count / d.shape[0])
    return out


def top_k_rows(d: np.ndarray, k: int) -> np.ndarray:
    """The k nearest paragraph columns per question, ascending by distance."""
    if k < 1 or k > d.shape[1]:
        raise ValueError(f"k must lie in [1, {d.shape[1]}]")
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def _flat_ranking(d: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All question-paragraph pairs as (distances, positive labels), sweep order."""
    labels = np.zeros(d.shape, dtype=bool)
    labels[np.arange(d.shape[0]), truth] = True
    flat_d = d.reshape(-1)
    order = np.argsort(flat_d, kind="stable")  # ties: row-major pair order
    return flat_d[order], labels.reshape(-1)[order]


def pr_curve_and_ap(
    d: np.ndarray, truth: np.ndarray
) -> tuple[list[tuple[float, float]], float]:
    """Precision-recall points at each positive-count change, plus AP.

    All pairs are swept in ascending distance order; AP is the step-wise
    (non-interpolated) sum of precision times recall increments.
    """
    truth = _check_truth(d, truth)
    _, pos = _flat_ranking(d, truth)
    n_pos = int(pos.sum())
    hits = np.cumsum(pos)
    positions = np.nonzero(pos)[0] + 1  # 1-based sweep position of each positive
    precisions = hits[positions - 1] / positions
    recalls = np.arange(1, n_pos + 1) / n_pos
    curve = list(zip(recalls.tolist(), precisions.tolist()))
    ap = float(precisions.sum() / n_pos)
    return curve, ap


def roc_auc(d: np.ndarray, truth: np.ndarray) -> float:
    """Probability a random positive pair is closer than a random negative.

    Equals the area under the ROC sweep with ties counted half.
    """
    truth = _check_truth(d, truth)
    labels = np.zeros(d.shape, dtype=bool)
    labels[np.arange(d.shape[0]), truth] = True
    flat_d = d.reshape(-1).astype(np.float64)
    flat_l = labels.reshape(-1)
    n_pos = int(flat_l.sum())
    n_neg = flat_l.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative pair")
    order = np.argsort(flat_d, kind="stable")
    sorted_d = flat_d[order]
    ranks = np.empty(flat_d.size, dtype=np.float64)
    # average ranks over tied groups (1-based)
    boundaries = np.nonzero(np.diff(sorted_d))[0] + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [flat_d.size]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    rank_sum_neg = float(ranks[~flat_l].sum())
    # U counts (pos closer than neg) + half-ties
    u = rank_sum_neg - n_neg * (n_neg + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate(
    q: np.ndarray,
    p: np.ndarray,
    truth: np.ndarray,
    ks: tuple[int, ...] = DEFAULT_KS,
    with_auc: bool = True,
) -> EvalReport:
    """Full report: recall table, P-R curve, AP, and (optionally) AUC."""
    d = pairwise_distances(q, p)
    curve, ap = pr_curve_and_ap(d, truth)
    return EvalReport(
        n_questions=q.shape[0],
        n_paragraphs=p.shape[0],
        recall_at=recall_at_k(d, truth, ks),
        pr_curve=curve,
        average_precision=ap,
        auc=roc_auc(d, truth) if with_auc and p.shape[0] > 1 else None,
    )


def save_report(report: EvalReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_report(path: str) -> EvalReport:
    with open(path, "r", encoding="utf-8") as f:
        return EvalReport.from_dict(json.load(f))


def save_pr_csv(report: EvalReport, path: str) -> None:
    """Two-column CSV of the precision-recall sweep, for plotting."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["recall", "precision"])
        for r, p in report.pr_curve:
            writer.writerow([repr(r), repr(p)])
