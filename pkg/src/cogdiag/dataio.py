"""File ingestion, dataset splitting, shadow augmentation and synthetic data.

File formats
------------
responses CSV:  header ``learner_id,item_id,score``, UTF-8, score in {0, 1}.
Q-matrix CSV:   header ``item_id,<label1>,...,<labelK>``, entries in {0, 1}.
new-learner CSV (diagnosis input): header ``item_id,score``.

All randomness uses numpy's PCG64 generator seeded explicitly, so every split,
synthetic draw and augmentation is reproducible bit-for-bit across platforms.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import QMatrix, ResponseDataset, Triplet
from .errors import DataFormatError

SHADOW_SUFFIX = "#shadow"


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class SplitConfig:
    """Triplet-level split fractions; train must be positive, others may be 0."""

    train_frac: float = 0.7
    valid_frac: float = 0.1
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.train_frac <= 0:
            raise DataFormatError("train fraction must be positive")
        if self.valid_frac < 0 or self.test_frac < 0:
            raise DataFormatError("split fractions must be nonnegative")
        total = self.train_frac + self.valid_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise DataFormatError(f"split fractions must sum to 1, got {total}")


@dataclass(frozen=True)
class UserSplit:
    """Learner-level split: held-out learners never appear in train.

    Each held-out learner's responses are divided into an evidence subset
    (input for diagnosis) and a target subset (reconstruction labels).
    Learners with fewer than 2 responses keep everything in evidence and are
    listed in ``degenerate_learners``.
    """

    train: ResponseDataset
    holdout_evidence: dict[str, tuple[tuple[str, int], ...]]
    holdout_target: dict[str, tuple[tuple[str, int], ...]]
    degenerate_learners: tuple[str, ...]


@dataclass(frozen=True)
class TrueParams:
    """Ground-truth generating parameters of a synthetic dataset."""

    theta_star: np.ndarray
    a_star: np.ndarray
    b_star: np.ndarray

    def __post_init__(self) -> None:
        if not (np.asarray(self.a_star) > 0).all():
            raise DataFormatError("true discriminations must be positive")


def load_responses(path: str | Path) -> ResponseDataset:
    """Read a responses CSV into a dataset; reject duplicates and bad scores."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"responses file not found: {path}")
    triplets: list[Triplet] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["learner_id", "item_id", "score"]:
            raise DataFormatError(f"{path}: expected header 'learner_id,item_id,score'")
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise DataFormatError(f"{path}:{row_no}: expected 3 columns, got {len(row)}")
            learner_id, item_id, raw_score = (c.strip() for c in row)
            if raw_score not in ("0", "1"):
                raise DataFormatError(f"{path}:{row_no}: score must be 0 or 1, got {raw_score!r}")
            triplets.append((learner_id, item_id, int(raw_score)))
    seen: set[tuple[str, str]] = set()
    for learner_id, item_id, _ in triplets:
        if (learner_id, item_id) in seen:
            raise DataFormatError(f"{path}: duplicate pair ({learner_id}, {item_id})")
        seen.add((learner_id, item_id))
    return ResponseDataset.from_triplets(triplets)


def save_responses(ds: ResponseDataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["learner_id", "item_id", "score"])
        for learner_id, item_id, score in ds.triplets:
            writer.writerow([learner_id, item_id, score])


def load_new_learner_responses(path: str | Path) -> list[tuple[str, int]]:
    """Read a new-learner CSV (header ``item_id,score``)."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"responses file not found: {path}")
    out: list[tuple[str, int]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["item_id", "score"]:
            raise DataFormatError(f"{path}: expected header 'item_id,score'")
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise DataFormatError(f"{path}:{row_no}: expected 2 columns, got {len(row)}")
            item_id, raw_score = (c.strip() for c in row)
            if raw_score not in ("0", "1"):
                raise DataFormatError(f"{path}:{row_no}: score must be 0 or 1, got {raw_score!r}")
            out.append((item_id, int(raw_score)))
    return out


def load_qmatrix(path: str | Path) -> QMatrix:
    """Read a Q-matrix CSV; entries must be binary and no row may be all zero."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"Q-matrix file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2 or header[0].strip() != "item_id":
            raise DataFormatError(f"{path}: expected header 'item_id,<label1>,...'")
        labels = tuple(h.strip() for h in header[1:])
        item_ids: list[str] = []
        rows: list[list[int]] = []
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(labels) + 1:
                raise DataFormatError(
                    f"{path}:{row_no}: expected {len(labels) + 1} columns, got {len(row)}"
                )
            item_ids.append(row[0].strip())
            entries = []
            for cell in row[1:]:
                cell = cell.strip()
                if cell not in ("0", "1"):
                    raise DataFormatError(f"{path}:{row_no}: entry must be 0 or 1, got {cell!r}")
                entries.append(int(cell))
            if sum(entries) == 0:
                raise DataFormatError(f"{path}:{row_no}: item {item_ids[-1]!r} requires no concept")
            rows.append(entries)
    if not rows:
        raise DataFormatError(f"{path}: Q-matrix has no items")
    return QMatrix(
        entries=np.asarray(rows, dtype=np.int8),
        knowledge_labels=labels,
        item_ids=tuple(item_ids),
    )


def save_qmatrix(q: QMatrix, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", *q.knowledge_labels])
        for r, item_id in enumerate(q.item_ids):
            writer.writerow([item_id, *(int(v) for v in q.entries[r])])


def split_random(
    ds: ResponseDataset, cfg: SplitConfig
) -> tuple[ResponseDataset, ResponseDataset, ResponseDataset]:
    """Partition triplets by a seeded shuffle into train/valid/test.

    Part sizes are round(frac * |D|) for valid and test; train takes the
    remainder. The same seed always produces the same partition.
    """
    n = len(ds.triplets)
    if n == 0:
        raise DataFormatError("cannot split an empty dataset")
    n_valid = int(round(cfg.valid_frac * n))
    n_test = int(round(cfg.test_frac * n))
    n_train = n - n_valid - n_test
    if n_train <= 0:
        raise DataFormatError("split leaves no training triplets")
    perm = _rng(cfg.seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    valid_idx = np.sort(perm[n_train : n_train + n_valid])
    test_idx = np.sort(perm[n_train + n_valid :])
    parts = []
    for idx in (train_idx, valid_idx, test_idx):
        parts.append(ResponseDataset.from_triplets(ds.triplets[k] for k in idx))
    return parts[0], parts[1], parts[2]


def split_by_user(
    ds: ResponseDataset, holdout_frac: float, evidence_frac: float, seed: int
) -> UserSplit:
    """Hold out whole learners; split each one's responses evidence/target.

    ceil(holdout_frac * N) learners are removed from train entirely. Within a
    held-out learner, round(evidence_frac * n) responses (clamped to keep both
    sides nonempty when n >= 2) become evidence; the rest become targets.
    """
    if not 0 < holdout_frac < 1:
        raise DataFormatError("holdout fraction must lie in (0, 1)")
    if not 0 < evidence_frac < 1:
        raise DataFormatError("evidence fraction must lie in (0, 1)")
    n_learners = ds.n_learners
    if n_learners < 2:
        raise DataFormatError("need at least 2 learners for a user split")
    rng = _rng(seed)
    n_hold = math.ceil(holdout_frac * n_learners)
    if n_hold >= n_learners:
        raise DataFormatError("holdout fraction leaves no training learners")
    held_idx = np.sort(rng.choice(n_learners, size=n_hold, replace=False))
    held_ids = {ds.learner_ids[i] for i in held_idx}

    train = ResponseDataset.from_triplets(t for t in ds.triplets if t[0] not in held_ids)

    evidence: dict[str, tuple[tuple[str, int], ...]] = {}
    target: dict[str, tuple[tuple[str, int], ...]] = {}
    degenerate: list[str] = []
    for i in held_idx:
        learner_id = ds.learner_ids[i]
        responses = [(item_id, score) for (s, item_id, score) in ds.triplets if s == learner_id]
        if len(responses) < 2:
            evidence[learner_id] = tuple(responses)
            target[learner_id] = ()
            degenerate.append(learner_id)
            continue
        perm = rng.permutation(len(responses))
        n_ev = int(round(evidence_frac * len(responses)))
        n_ev = min(max(n_ev, 1), len(responses) - 1)
        ev_idx = set(perm[:n_ev].tolist())
        evidence[learner_id] = tuple(r for k, r in enumerate(responses) if k in ev_idx)
        target[learner_id] = tuple(r for k, r in enumerate(responses) if k not in ev_idx)
    return UserSplit(
        train=train,
        holdout_evidence=evidence,
        holdout_target=target,
        degenerate_learners=tuple(degenerate),
    )


def _id_width(count: int) -> int:
    return max(4, len(str(count - 1)))


def synth_irt(
    n_learners: int, n_items: int, seed: int, density: float = 1.0
) -> tuple[ResponseDataset, TrueParams]:
    """Draw a synthetic dataset from a two-parameter logistic response process.

    Abilities and difficulties are standard normal, discriminations uniform on
    (0.5, 2.5); each pair is observed with probability ``density`` and its
    score is Bernoulli(sigmoid(a * (theta - b))). Fully determined by the seed.
    """
    if n_learners < 1 or n_items < 1:
        raise DataFormatError("need at least one learner and one item")
    if not 0 < density <= 1:
        raise DataFormatError("density must lie in (0, 1]")
    rng = _rng(seed)
    theta = rng.standard_normal(n_learners)
    b = rng.standard_normal(n_items)
    a = rng.uniform(0.5, 2.5, n_items)
    observed = rng.random((n_learners, n_items)) < density
    probs = 1.0 / (1.0 + np.exp(-a[None, :] * (theta[:, None] - b[None, :])))
    scores = rng.random((n_learners, n_items)) < probs

    lw, iw = _id_width(n_learners), _id_width(n_items)
    learner_ids = [f"s{i:0{lw}d}" for i in range(n_learners)]
    item_ids = [f"e{j:0{iw}d}" for j in range(n_items)]
    triplets: list[Triplet] = []
    for i in range(n_learners):
        for j in np.flatnonzero(observed[i]):
            triplets.append((learner_ids[i], item_ids[j], int(scores[i, j])))
    ds = ResponseDataset(
        triplets=tuple(triplets),
        learner_index={lid: i for i, lid in enumerate(learner_ids)},
        item_index={iid: j for j, iid in enumerate(item_ids)},
    )
    return ds, TrueParams(theta_star=theta, a_star=a, b_star=b)


def synth_qmatrix(
    item_ids: Sequence[str],
    n_concepts: int,
    seed: int,
    max_concepts_per_item: int = 3,
) -> QMatrix:
    """Random binary Q-matrix: each item requires 1..max_concepts_per_item concepts."""
    if n_concepts < 1:
        raise DataFormatError("need at least one concept")
    max_k = min(max_concepts_per_item, n_concepts)
    rng = _rng(seed)
    entries = np.zeros((len(item_ids), n_concepts), dtype=np.int8)
    for r in range(len(item_ids)):
        k = int(rng.integers(1, max_k + 1))
        cols = rng.choice(n_concepts, size=k, replace=False)
        entries[r, cols] = 1
    labels = tuple(f"k{c:02d}" for c in range(n_concepts))
    return QMatrix(entries=entries, knowledge_labels=labels, item_ids=tuple(item_ids))


def augment_shadow(ds: ResponseDataset, frac: float, seed: int) -> ResponseDataset:
    """Duplicate a seeded selection of learners (rows) and items (columns).

    Each shadow carries the original's responses verbatim under a fresh id
    (original id + ``#shadow``). Learners are duplicated first, then items, so
    a shadow item's column also covers the shadow learners; shadow rows and
    columns are therefore exact copies in the augmented matrix.
    """
    if not 0 < frac <= 1:
        raise DataFormatError("shadow fraction must lie in (0, 1]")
    rng = _rng(seed)
    n_s = math.ceil(frac * ds.n_learners)
    n_e = math.ceil(frac * ds.n_items)
    chosen_learners = np.sort(rng.choice(ds.n_learners, size=n_s, replace=False))
    chosen_items = np.sort(rng.choice(ds.n_items, size=n_e, replace=False))
    shadow_learner_ids = [ds.learner_ids[i] for i in chosen_learners]
    shadow_item_ids = [ds.item_ids[j] for j in chosen_items]

    triplets = list(ds.triplets)
    shadow_of = set(shadow_learner_ids)
    triplets += [
        (s + SHADOW_SUFFIX, e, y) for (s, e, y) in ds.triplets if s in shadow_of
    ]
    shadow_items = set(shadow_item_ids)
    triplets += [(s, e + SHADOW_SUFFIX, y) for (s, e, y) in triplets if e in shadow_items]

    learner_index = dict(ds.learner_index)
    for lid in shadow_learner_ids:
        learner_index[lid + SHADOW_SUFFIX] = len(learner_index)
    item_index = dict(ds.item_index)
    for iid in shadow_item_ids:
        item_index[iid + SHADOW_SUFFIX] = len(item_index)
    return ResponseDataset(
        triplets=tuple(triplets), learner_index=learner_index, item_index=item_index
    )


def extend_with_learners(
    ds: ResponseDataset, responses_by_learner: Mapping[str, Sequence[tuple[str, int]]]
) -> ResponseDataset:
    """Append new learners' responses (on existing items) to a dataset."""
    triplets = list(ds.triplets)
    for learner_id, responses in responses_by_learner.items():
        if learner_id in ds.learner_index:
            raise DataFormatError(f"learner {learner_id!r} already present")
        for item_id, score in responses:
            if item_id not in ds.item_index:
                raise DataFormatError(f"unknown item {item_id!r} for new learner {learner_id!r}")
            triplets.append((learner_id, item_id, int(score)))
    learner_index = dict(ds.learner_index)
    for learner_id in responses_by_learner:
        learner_index[learner_id] = len(learner_index)
    return ResponseDataset(
        triplets=tuple(triplets), learner_index=learner_index, item_index=dict(ds.item_index)
    )
