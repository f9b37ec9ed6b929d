"""Shared domain types: response datasets, signed response vectors, Q-matrices.

All types are immutable after construction and hold no I/O state, so they are
safe to share across threads. String learner/item IDs are mapped to dense
indices once, at construction; every numeric routine works on dense indices.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DataFormatError

# (learner_id, item_id, score) with score in {0, 1}
Triplet = tuple[str, str, int]


def _check_index_map(name: str, index: dict[str, int]) -> None:
    if sorted(index.values()) != list(range(len(index))):
        raise DataFormatError(f"{name} must map ids onto dense indices 0..{len(index) - 1}")


@dataclass(frozen=True)
class ResponseDataset:
    """Learner/item/score triplets plus dense index maps.

    The index maps may contain ids with no triplets (e.g. learners whose
    responses were all removed by a split); every triplet id must be indexed.
    """

    triplets: tuple[Triplet, ...]
    learner_index: dict[str, int]
    item_index: dict[str, int]

    def __post_init__(self) -> None:
        _check_index_map("learner_index", self.learner_index)
        _check_index_map("item_index", self.item_index)
        seen: set[tuple[str, str]] = set()
        for learner_id, item_id, score in self.triplets:
            if score not in (0, 1):
                raise DataFormatError(
                    f"score must be 0 or 1, got {score!r} for ({learner_id}, {item_id})"
                )
            if learner_id not in self.learner_index:
                raise DataFormatError(f"learner {learner_id!r} missing from learner_index")
            if item_id not in self.item_index:
                raise DataFormatError(f"item {item_id!r} missing from item_index")
            pair = (learner_id, item_id)
            if pair in seen:
                raise DataFormatError(f"duplicate response for pair {pair}")
            seen.add(pair)

    @classmethod
    def from_triplets(cls, triplets: Iterable[Triplet]) -> "ResponseDataset":
        """Build a dataset, assigning dense indices in first-appearance order."""
        triplets = tuple((str(s), str(e), int(y)) for s, e, y in triplets)
        learner_index: dict[str, int] = {}
        item_index: dict[str, int] = {}
        for learner_id, item_id, _ in triplets:
            if learner_id not in learner_index:
                learner_index[learner_id] = len(learner_index)
            if item_id not in item_index:
                item_index[item_id] = len(item_index)
        return cls(triplets=triplets, learner_index=learner_index, item_index=item_index)

    @property
    def n_learners(self) -> int:
        return len(self.learner_index)

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    @cached_property
    def learner_ids(self) -> tuple[str, ...]:
        """Learner ids ordered by dense index."""
        ids = [""] * self.n_learners
        for learner_id, idx in self.learner_index.items():
            ids[idx] = learner_id
        return tuple(ids)

    @cached_property
    def item_ids(self) -> tuple[str, ...]:
        ids = [""] * self.n_items
        for item_id, idx in self.item_index.items():
            ids[idx] = item_id
        return tuple(ids)

    @cached_property
    def index_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense (learner_idx, item_idx, score) arrays, one entry per triplet."""
        n = len(self.triplets)
        li = np.empty(n, dtype=np.int64)
        ji = np.empty(n, dtype=np.int64)
        y = np.empty(n, dtype=np.int8)
        for k, (learner_id, item_id, score) in enumerate(self.triplets):
            li[k] = self.learner_index[learner_id]
            ji[k] = self.item_index[item_id]
            y[k] = score
        return li, ji, y

    def triplets_of_learner(self, learner_id: str) -> list[Triplet]:
        return [t for t in self.triplets if t[0] == learner_id]


@dataclass(frozen=True, eq=False)
class SignedResponseVector:
    """Dense signed encoding of one learner row or one item column.

    Entries: +1 observed correct, -1 observed incorrect, 0 unobserved, so a
    missing response carries no signal (distinct from a wrong one).
    """

    values: np.ndarray
    observed_count: int

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.int8)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1:
            raise DataFormatError("signed response vector must be one-dimensional")
        if not np.isin(vals, (-1, 0, 1)).all():
            raise DataFormatError("signed response entries must be in {-1, 0, +1}")
        if self.observed_count != int(np.count_nonzero(vals)):
            raise DataFormatError("observed_count must equal the number of nonzero entries")

    @classmethod
    def from_values(cls, values: Sequence[int] | np.ndarray) -> "SignedResponseVector":
        vals = np.asarray(values, dtype=np.int8)
        return cls(values=vals, observed_count=int(np.count_nonzero(vals)))

    def same_responses(self, other: "SignedResponseVector") -> bool:
        return self.values.shape == other.values.shape and bool(
            np.array_equal(self.values, other.values)
        )


def signed_matrix(ds: ResponseDataset) -> np.ndarray:
    """Full (n_learners, n_items) signed response matrix, int8."""
    mat = np.zeros((ds.n_learners, ds.n_items), dtype=np.int8)
    li, ji, y = ds.index_arrays
    mat[li, ji] = 2 * y.astype(np.int8) - 1
    return mat


def build_vectors(
    ds: ResponseDataset,
) -> tuple[list[SignedResponseVector], list[SignedResponseVector]]:
    """Signed response vectors for every learner (rows) and item (columns).

    learner_vectors[i][j] == item_vectors[j][i] == 2*y_ij - 1 for observed
    pairs and 0 elsewhere; the triplet set is recoverable from the nonzero
    entries of either list.
    """
    mat = signed_matrix(ds)
    learner_vectors = [SignedResponseVector.from_values(mat[i, :]) for i in range(ds.n_learners)]
    item_vectors = [SignedResponseVector.from_values(mat[:, j]) for j in range(ds.n_items)]
    return learner_vectors, item_vectors


@dataclass(frozen=True)
class QMatrix:
    """Binary item-by-knowledge incidence matrix with concept labels.

    Rows follow ``item_ids``; every item must require at least one concept.
    """

    entries: np.ndarray
    knowledge_labels: tuple[str, ...]
    item_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.int8)
        object.__setattr__(self, "entries", entries)
        if entries.ndim != 2:
            raise DataFormatError("Q-matrix must be two-dimensional")
        if entries.shape != (len(self.item_ids), len(self.knowledge_labels)):
            raise DataFormatError("Q-matrix shape must match item_ids x knowledge_labels")
        if not np.isin(entries, (0, 1)).all():
            raise DataFormatError("Q-matrix entries must be binary")
        zero_rows = np.flatnonzero(entries.sum(axis=1) == 0)
        if zero_rows.size:
            bad = ", ".join(self.item_ids[r] for r in zero_rows[:5])
            raise DataFormatError(f"Q-matrix rows with no required concept: {bad}")

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_concepts(self) -> int:
        return len(self.knowledge_labels)

    def aligned_to(self, ds: ResponseDataset) -> "QMatrix":
        """Reorder rows to follow ``ds.item_index``; items of ``ds`` must all be present.

        Items listed in the Q-matrix but absent from the dataset are dropped.
        """
        row_of = {item_id: r for r, item_id in enumerate(self.item_ids)}
        missing = [item_id for item_id in ds.item_ids if item_id not in row_of]
        if missing:
            shown = ", ".join(missing[:5])
            raise DataFormatError(f"items missing from Q-matrix: {shown}")
        order = [row_of[item_id] for item_id in ds.item_ids]
        return QMatrix(
            entries=self.entries[order, :],
            knowledge_labels=self.knowledge_labels,
            item_ids=tuple(ds.item_ids),
        )
