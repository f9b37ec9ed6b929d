"""Score metrics, identifiability score, degree of consistency, and the
instant-diagnosis speed benchmark."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import QMatrix, ResponseDataset, SignedResponseVector
from .errors import DataFormatError, MetricPreconditionError


@dataclass(frozen=True)
class EvalReport:
    """Accuracy, positive-class F1 and RMSE over one prediction set."""

    acc: float
    f1: float
    rmse: float
    n: int
    f1_degenerate: bool = False  # no positives predicted nor present; F1 pinned to 0

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "f1": self.f1,
            "rmse": self.rmse,
            "n": self.n,
            "f1_degenerate": self.f1_degenerate,
        }


def score_metrics(
    preds: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    threshold: float = 0.5,
) -> EvalReport:
    """ACC at ``threshold``, F1 on the positive class, RMSE on probabilities."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise DataFormatError("predictions and labels must be 1-d and equally long")
    if preds.size == 0:
        raise DataFormatError("cannot score an empty prediction set")
    hard = preds >= threshold
    truth = labels == 1
    acc = float((hard == truth).mean())
    tp = float((hard & truth).sum())
    fp = float((hard & ~truth).sum())
    fn = float((~hard & truth).sum())
    degenerate = tp + fp + fn == 0
    if tp == 0:
        f1 = 0.0
    else:
        f1 = 2 * tp / (2 * tp + fp + fn)
    rmse = float(np.sqrt(((preds - labels) ** 2).mean()))
    return EvalReport(acc=acc, f1=f1, rmse=rmse, n=int(preds.size), f1_degenerate=bool(degenerate))


def _as_trait_vector(trait) -> np.ndarray:
    arr = np.asarray(trait, dtype=np.float64)
    return arr[None] if arr.ndim == 0 else arr.ravel()


def ids(traits: Sequence, rows: Sequence[SignedResponseVector]) -> float:
    """Identifiability score over pairs of identical response rows.

    Averages 1 / (1 + manhattan(trait_i, trait_j))^2 over all ordered pairs
    i != j whose response vectors are exactly equal; 1.0 means every duplicate
    pair got identical traits. Scalar traits are treated as 1-vectors.
    """
    if len(traits) != len(rows):
        raise DataFormatError("traits and rows must be parallel lists")
    groups: dict[bytes, list[int]] = {}
    for idx, row in enumerate(rows):
        groups.setdefault(row.values.tobytes(), []).append(idx)
    total = 0.0
    n_pairs = 0
    for members in groups.values():
        if len(members) < 2:
            continue
        vecs = [_as_trait_vector(traits[i]) for i in members]
        for i in range(len(members)):
            for j in range(len(members)):
                if i == j:
                    continue
                dist = float(np.abs(vecs[i] - vecs[j]).sum())
                total += 1.0 / (1.0 + dist) ** 2
                n_pairs += 1
    if n_pairs == 0:
        raise MetricPreconditionError(
            "no duplicate response rows; run shadow augmentation first"
        )
    return total / n_pairs


def _doc_items(
    traits: Mapping[str, np.ndarray],
    test_responses: ResponseDataset,
    q_entries: np.ndarray,
) -> tuple[dict[str, float | None], float]:
    by_item: dict[str, list[tuple[str, int]]] = {iid: [] for iid in test_responses.item_index}
    for learner_id, iid, score in test_responses.triplets:
        by_item[iid].append((learner_id, score))
    per_item: dict[str, float | None] = {}
    valid: list[float] = []
    for item_id, j in test_responses.item_index.items():
        right: list[np.ndarray] = []
        wrong: list[np.ndarray] = []
        for learner_id, score in by_item[item_id]:
            if learner_id not in traits:
                raise MetricPreconditionError(f"no trait for learner {learner_id!r}")
            vec = _as_trait_vector(traits[learner_id])
            (right if score == 1 else wrong).append(vec)
        concepts = np.flatnonzero(q_entries[j])
        if not right or not wrong or concepts.size == 0:
            per_item[item_id] = None
            continue
        a = np.stack(right)[:, concepts]
        b = np.stack(wrong)[:, concepts]
        num = float((a[:, None, :] > b[None, :, :]).sum())
        denom = float((a[:, None, :] != b[None, :, :]).sum())
        if denom == 0:
            per_item[item_id] = None
            continue
        per_item[item_id] = num / denom
        valid.append(num / denom)
    if not valid:
        raise MetricPreconditionError("no item has comparable learner pairs for DOC")
    return per_item, float(np.mean(valid))


def doc(
    traits: Mapping[str, np.ndarray],
    test_responses: ResponseDataset,
    qmatrix: QMatrix,
) -> tuple[dict[str, float | None], float]:
    """Per-item degree of consistency and its mean over scoreable items.

    For each item, counts ordered learner pairs (one right, one wrong) whose
    trait ordering on the item's required concepts agrees with the score
    ordering, over pairs with unequal traits; 0/0 items are excluded.
    """
    q = qmatrix.aligned_to(test_responses)
    return _doc_items(traits, test_responses, q.entries)


def doc_scalar(
    abilities: Mapping[str, float],
    test_responses: ResponseDataset,
) -> tuple[dict[str, float | None], float]:
    """Degree of consistency for scalar-ability models (one concept, all items)."""
    traits = {lid: np.asarray([v], dtype=np.float64) for lid, v in abilities.items()}
    q_entries = np.ones((test_responses.n_items, 1), dtype=np.int8)
    return _doc_items(traits, test_responses, q_entries)


def speedup_benchmark(
    new_learners: Mapping[str, Sequence[tuple[str, int]]],
    diagnose_fn: Callable[[Sequence[tuple[str, int]]], object],
    retrain_fn: Callable[[], object],
    repeat: int = 1,
) -> dict:
    """Wall time of per-learner generative diagnosis vs one full retraining.

    Returns millisecond timings and their ratio (retrain / diagnose); with
    ``repeat`` > 1 the headline numbers are the median run and min/median/max
    ratios are included. ``n == 0`` is reported as skipped.
    """
    n = len(new_learners)
    if n == 0:
        return {"n": 0, "skipped": True}
    if repeat < 1:
        raise DataFormatError("repeat must be at least 1")
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for responses in new_learners.values():
            diagnose_fn(responses)
        t_gen = (time.perf_counter() - t0) * 1e3
        t0 = time.perf_counter()
        retrain_fn()
        t_trans = (time.perf_counter() - t0) * 1e3
        runs.append(
            {
                "t_generative_ms": t_gen,
                "t_transductive_ms": t_trans,
                "ratio": t_trans / t_gen if t_gen > 0 else float("inf"),
            }
        )
    ratios = sorted(r["ratio"] for r in runs)
    median_run = sorted(runs, key=lambda r: r["ratio"])[len(runs) // 2]
    out = {
        "n": n,
        "t_generative_ms": median_run["t_generative_ms"],
        "t_transductive_ms": median_run["t_transductive_ms"],
        "ratio": median_run["ratio"],
    }
    if repeat > 1:
        out["runs"] = runs
        out["ratio_min"] = ratios[0]
        out["ratio_median"] = float(statistics.median(ratios))
        out["ratio_max"] = ratios[-1]
    return out
