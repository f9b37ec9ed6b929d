"""Generative neural cognitive diagnosis over knowledge-concept proficiencies.

Learner proficiencies are generated from signed response rows by two paths
blended with a mixing weight ``alpha``:

  implicit:  two non-negative dense layers (monotone by construction),
  explicit:  sigmoid(row @ Q / sqrt(K)), a parameter-free per-concept
             correct-rate squash through the Q-matrix.

Item features come from a three-layer dense branch over signed columns. The
response reconstruction head masks proficiencies and item features with the
item's Q-matrix row, aggregates each to a dense representation, and feeds the
difference through a non-negative stack, so predictions are monotone in every
unmasked proficiency component and exactly invariant to masked ones.

All trait generation is a pure function of the response vector: equal rows
yield bitwise-equal proficiencies, and an all-zero row (an empty learner) maps
to one fixed point shared by every empty learner.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import QMatrix, ResponseDataset, SignedResponseVector, signed_matrix
from .errors import DataFormatError, TrainingDivergedError, UndiagnosableError
from .nnkernel import (
    DenseLayer,
    LayerGrads,
    backward,
    forward,
    init_layer,
    layers_from_dict,
    layers_to_dict,
    sgd_step,
    sigmoid,
)

FORMAT_VERSION = 1
PROB_EPS = 1e-7


@dataclass(frozen=True)
class GncdmDims:
    """Hidden sizes: learner branch, item branch, head, and the aggregated width."""

    learner_hidden: int = 256
    item_hidden: int = 256
    head_hidden: int = 128
    agg_dim: int = 32

    def to_dict(self) -> dict:
        return {
            "learner_hidden": self.learner_hidden,
            "item_hidden": self.item_hidden,
            "head_hidden": self.head_hidden,
            "agg_dim": self.agg_dim,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GncdmDims":
        return cls(**{k: int(v) for k, v in data.items()})


@dataclass
class GncdmModel:
    """Trained network weights plus the attached, index-aligned Q-matrix."""

    learner_branch: list[DenseLayer]  # M -> H1 -> K, nonneg, sigmoid
    item_branch: list[DenseLayer]  # N -> H2 -> H2 -> K, sigmoid
    theta_agg: DenseLayer  # K -> Da, nonneg, sigmoid
    psi_agg: DenseLayer  # K -> Da, sigmoid
    head: list[DenseLayer]  # Da -> H3 -> H3 -> 1, nonneg, sigmoid
    alpha: float
    qmatrix: QMatrix  # rows follow item_index order
    dims: GncdmDims
    learner_index: dict[str, int]
    item_index: dict[str, int]

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise DataFormatError("mixing weight alpha must lie in [0, 1]")
        if self.qmatrix.n_items != len(self.item_index):
            raise DataFormatError("Q-matrix rows must match the item index")

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    @property
    def n_learners(self) -> int:
        return len(self.learner_index)

    @property
    def n_concepts(self) -> int:
        return self.qmatrix.n_concepts


def _init_model(
    n_learners: int,
    n_items: int,
    qmatrix: QMatrix,
    alpha: float,
    dims: GncdmDims,
    learner_index: dict[str, int],
    item_index: dict[str, int],
    seed: int,
) -> GncdmModel:
    # layer construction order is fixed so a seed fully determines the init
    rng = np.random.Generator(np.random.PCG64(seed))
    k = qmatrix.n_concepts
    # learner branch is fully sigmoid; elsewhere hidden/aggregation layers are
    # linear with a sigmoid output, which keeps the monotone structure but
    # lets plain gradient descent train the stack
    learner_branch = [
        init_layer(n_items, dims.learner_hidden, rng, nonneg=True),
        init_layer(dims.learner_hidden, k, rng, nonneg=True),
    ]
    item_branch = [
        init_layer(n_learners, dims.item_hidden, rng, activation="identity"),
        init_layer(dims.item_hidden, dims.item_hidden, rng, activation="identity"),
        init_layer(dims.item_hidden, k, rng),
    ]
    theta_agg = init_layer(k, dims.agg_dim, rng, nonneg=True, activation="identity")
    psi_agg = init_layer(k, dims.agg_dim, rng, activation="identity")
    head = [
        init_layer(dims.agg_dim, dims.head_hidden, rng, nonneg=True, activation="identity"),
        init_layer(dims.head_hidden, dims.head_hidden, rng, nonneg=True, activation="identity"),
        init_layer(dims.head_hidden, 1, rng, nonneg=True),
    ]
    return GncdmModel(
        learner_branch=learner_branch,
        item_branch=item_branch,
        theta_agg=theta_agg,
        psi_agg=psi_agg,
        head=head,
        alpha=alpha,
        qmatrix=qmatrix,
        dims=dims,
        learner_index=dict(learner_index),
        item_index=dict(item_index),
    )


def gncdm_theta_exp(y_s: SignedResponseVector | np.ndarray, q: QMatrix) -> np.ndarray:
    """Parameter-free proficiency path: sigmoid(signed_row @ Q / sqrt(K))."""
    rows = y_s.values if isinstance(y_s, SignedResponseVector) else np.asarray(y_s)
    rows = rows.astype(np.float64)
    if rows.shape[-1] != q.n_items:
        raise DataFormatError(
            f"row has {rows.shape[-1]} entries, Q-matrix has {q.n_items} items"
        )
    return sigmoid(rows @ q.entries.astype(np.float64) / np.sqrt(q.n_concepts))


def _gdf_learner_rows(model: GncdmModel, rows: np.ndarray) -> np.ndarray:
    imp, _ = forward(model.learner_branch, rows)
    exp_ = gncdm_theta_exp(rows, model.qmatrix)
    return (1.0 - model.alpha) * imp + model.alpha * exp_


def gncdm_gdf_learner(model: GncdmModel, y_s: SignedResponseVector) -> np.ndarray:
    """Generate a proficiency vector in (0,1)^K from a learner's signed row."""
    vals = y_s.values.astype(np.float64)
    if vals.shape[0] != model.n_items:
        raise DataFormatError(
            f"response vector has {vals.shape[0]} entries, model has {model.n_items} items"
        )
    return _gdf_learner_rows(model, vals[None, :])[0]


def gncdm_gdf_item(model: GncdmModel, y_e: SignedResponseVector) -> np.ndarray:
    """Generate an item feature vector in (0,1)^K from its signed column."""
    vals = y_e.values.astype(np.float64)
    if vals.shape[0] != model.n_learners:
        raise DataFormatError(
            f"column has {vals.shape[0]} entries, model has {model.n_learners} learners"
        )
    psi, _ = forward(model.item_branch, vals[None, :])
    return psi[0]


def _irf_rows(
    model: GncdmModel, theta: np.ndarray, psi: np.ndarray, q_rows: np.ndarray
) -> np.ndarray:
    masked_theta = theta * q_rows
    masked_psi = psi * q_rows
    theta_dense, _ = forward([model.theta_agg], masked_theta)
    psi_dense, _ = forward([model.psi_agg], masked_psi)
    yh, _ = forward(model.head, theta_dense - psi_dense)
    return yh[:, 0]


def gncdm_irf(
    model: GncdmModel, theta: np.ndarray, psi: np.ndarray, item_row: np.ndarray
) -> float:
    """Correct-response probability from masked, aggregated representations."""
    theta = np.asarray(theta, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    q_row = np.asarray(item_row, dtype=np.float64)
    if theta.shape != (model.n_concepts,) or psi.shape != (model.n_concepts,):
        raise DataFormatError("theta and psi must be K-vectors")
    if q_row.sum() == 0:
        raise DataFormatError("item requires no concept")
    return float(_irf_rows(model, theta[None, :], psi[None, :], q_row[None, :])[0])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _batch_loss_and_grads(
    model: GncdmModel,
    rows: np.ndarray,
    cols: np.ndarray,
    inv_l: np.ndarray,
    inv_i: np.ndarray,
    q_rows: np.ndarray,
    y: np.ndarray,
) -> tuple[float, dict]:
    """Mean cross-entropy over a batch and exact gradients for every layer.

    ``rows``/``cols`` hold the signed vectors of the batch's unique learners
    and items; ``inv_l``/``inv_i`` map each triplet to its row/column.
    """
    imp, tape_l = forward(model.learner_branch, rows)
    exp_ = gncdm_theta_exp(rows, model.qmatrix)
    theta_u = (1.0 - model.alpha) * imp + model.alpha * exp_
    psi_u, tape_i = forward(model.item_branch, cols)

    theta = theta_u[inv_l]
    psi = psi_u[inv_i]
    theta_dense, tape_ta = forward([model.theta_agg], theta * q_rows)
    psi_dense, tape_pa = forward([model.psi_agg], psi * q_rows)
    yh_col, tape_h = forward(model.head, theta_dense - psi_dense)
    yh = yh_col[:, 0]

    yc = np.clip(yh, PROB_EPS, 1.0 - PROB_EPS)
    loss = float(-(y * np.log(yc) + (1.0 - y) * np.log(1.0 - yc)).mean())

    d_yh = ((yc - y) / (yc * (1.0 - yc)) / y.size)[:, None]
    grads_h, d_u = backward(tape_h, d_yh)
    grads_ta, d_xt = backward(tape_ta, d_u)
    grads_pa, d_xp = backward(tape_pa, -d_u)

    d_theta_u = np.zeros_like(theta_u)
    np.add.at(d_theta_u, inv_l, d_xt * q_rows)
    d_psi_u = np.zeros_like(psi_u)
    np.add.at(d_psi_u, inv_i, d_xp * q_rows)

    grads_l, _ = backward(tape_l, (1.0 - model.alpha) * d_theta_u)
    grads_i, _ = backward(tape_i, d_psi_u)
    return loss, {
        "learner_branch": grads_l,
        "item_branch": grads_i,
        "theta_agg": grads_ta[0],
        "psi_agg": grads_pa[0],
        "head": grads_h,
    }


def _apply_grads(model: GncdmModel, grads: dict, lr: float) -> None:
    for layer, g in zip(model.learner_branch, grads["learner_branch"]):
        sgd_step(layer, g, lr)
    for layer, g in zip(model.item_branch, grads["item_branch"]):
        sgd_step(layer, g, lr)
    sgd_step(model.theta_agg, grads["theta_agg"], lr)
    sgd_step(model.psi_agg, grads["psi_agg"], lr)
    for layer, g in zip(model.head, grads["head"]):
        sgd_step(layer, g, lr)


def _full_loss(
    model: GncdmModel,
    smat: np.ndarray,
    li: np.ndarray,
    ji: np.ndarray,
    y: np.ndarray,
) -> float:
    theta = _gdf_learner_rows(model, smat)
    psi, _ = forward(model.item_branch, smat.T.copy())
    q_rows = model.qmatrix.entries.astype(np.float64)[ji]
    yh = _irf_rows(model, theta[li], psi[ji], q_rows)
    yc = np.clip(yh, PROB_EPS, 1.0 - PROB_EPS)
    return float(-(y * np.log(yc) + (1.0 - y) * np.log(1.0 - yc)).mean())


def gncdm_train(
    train: ResponseDataset,
    qmatrix: QMatrix,
    alpha: float = 0.5,
    dims: GncdmDims | None = None,
    lr: float = 0.1,
    epochs: int = 30,
    seed: int = 0,
    batch_size: int = 256,
    on_epoch: Callable[[int, float], None] | None = None,
) -> GncdmModel:
    """Train all network parameters by mini-batch gradient descent.

    Per batch: build the signed rows/columns of the batch's learners/items,
    generate traits, reconstruct scores, step every layer, and project the
    non-negative ones. ``epochs=0`` returns the seeded initialization.
    """
    if not train.triplets:
        raise DataFormatError("training dataset is empty")
    if not 0.0 <= alpha <= 1.0:
        raise DataFormatError("mixing weight alpha must lie in [0, 1]")
    dims = dims or GncdmDims()
    q = qmatrix.aligned_to(train)
    model = _init_model(
        train.n_learners,
        train.n_items,
        q,
        alpha,
        dims,
        train.learner_index,
        train.item_index,
        seed,
    )
    smat = signed_matrix(train).astype(np.float64)
    smat_t = smat.T.copy()
    li, ji, y8 = train.index_arrays
    y = y8.astype(np.float64)
    q_ent = q.entries.astype(np.float64)

    rng = np.random.Generator(np.random.PCG64(seed + 1))  # batch order stream
    if on_epoch is not None:
        on_epoch(0, _full_loss(model, smat, li, ji, y))
    n = li.size
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            ul, inv_l = np.unique(li[batch], return_inverse=True)
            ui, inv_i = np.unique(ji[batch], return_inverse=True)
            loss, grads = _batch_loss_and_grads(
                model,
                smat[ul, :],
                smat_t[ui, :],
                inv_l,
                inv_i,
                q_ent[ji[batch]],
                y[batch],
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            _apply_grads(model, grads, lr)
        if on_epoch is not None:
            on_epoch(epoch, _full_loss(model, smat, li, ji, y))
    return model


# ---------------------------------------------------------------------------
# diagnosis, evaluation helpers, reports
# ---------------------------------------------------------------------------


def _evidence_rows(model: GncdmModel, evidence: ResponseDataset) -> tuple[np.ndarray, int]:
    """Signed rows of ``evidence`` learners over the model's item space.

    Entries on items the model does not know are dropped; returns the rows and
    the dropped-entry count.
    """
    rows = np.zeros((evidence.n_learners, model.n_items))
    li, ji, y = evidence.index_arrays
    item_map = np.array(
        [model.item_index.get(item_id, -1) for item_id in evidence.item_ids], dtype=np.int64
    )
    keep = item_map[ji] >= 0
    rows[li[keep], item_map[ji[keep]]] = 2.0 * y[keep] - 1.0
    return rows, int((~keep).sum())


def generate_learner_traits(model: GncdmModel, evidence: ResponseDataset) -> np.ndarray:
    """Proficiency matrix (one row per evidence learner) generated from evidence rows."""
    rows, _ = _evidence_rows(model, evidence)
    return _gdf_learner_rows(model, rows)


def generate_item_traits(model: GncdmModel, evidence: ResponseDataset) -> np.ndarray:
    """Item feature matrix generated from evidence columns over known learners."""
    cols = np.zeros((evidence.n_items, model.n_learners))
    li, ji, y = evidence.index_arrays
    learner_map = np.array(
        [model.learner_index.get(lid, -1) for lid in evidence.learner_ids], dtype=np.int64
    )
    keep = learner_map[li] >= 0
    cols[ji[keep], learner_map[li[keep]]] = 2.0 * y[keep] - 1.0
    psi, _ = forward(model.item_branch, cols)
    return psi


def predict_rows(
    model: GncdmModel, theta: np.ndarray, psi: np.ndarray, q_rows: np.ndarray
) -> np.ndarray:
    """Batch response predictions for aligned (theta, psi, q) rows."""
    return _irf_rows(model, theta, psi, q_rows)


def gncdm_diagnose_new(
    model: GncdmModel, responses: Sequence[tuple[str, int]]
) -> tuple[np.ndarray, int, int]:
    """Instant diagnosis of a new learner; returns (theta, n_used, n_skipped)."""
    vec = np.zeros(model.n_items, dtype=np.int8)
    used = 0
    skipped = 0
    for item_id, score in responses:
        j = model.item_index.get(str(item_id))
        if j is None:
            skipped += 1
        else:
            vec[j] = 2 * int(score) - 1
            used += 1
    if used == 0:
        raise UndiagnosableError(
            "no known items in evidence: " + ", ".join(str(e) for e, _ in responses)
        )
    theta = gncdm_gdf_learner(model, SignedResponseVector.from_values(vec))
    return theta, used, skipped


def gncdm_report(
    model: GncdmModel,
    responses: Sequence[tuple[str, int]],
    qmatrix: QMatrix | None = None,
) -> dict:
    """Per-concept report: proficiencies plus observed correct rates.

    A concept required by no answered item gets a null correct rate.
    """
    q = qmatrix if qmatrix is not None else model.qmatrix
    theta, used, skipped = gncdm_diagnose_new(model, responses)
    hits = np.zeros(q.n_concepts)
    counts = np.zeros(q.n_concepts)
    for item_id, score in responses:
        j = model.item_index.get(str(item_id))
        if j is None:
            continue
        req = q.entries[j].astype(bool)
        counts[req] += 1
        hits[req] += int(score)
    rates = [
        (float(hits[k] / counts[k]) if counts[k] > 0 else None) for k in range(q.n_concepts)
    ]
    return {
        "theta": [float(v) for v in theta],
        "knowledge_labels": list(q.knowledge_labels),
        "knowledge_correct_rates": rates,
        "n_evidence": used,
        "skipped_unknown_items": skipped,
    }


def save_gncdm(model: GncdmModel, path: str | Path) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "gncdm",
        "alpha": model.alpha,
        "dims": model.dims.to_dict(),
        "learner_branch": layers_to_dict(model.learner_branch),
        "item_branch": layers_to_dict(model.item_branch),
        "theta_agg": layers_to_dict([model.theta_agg]),
        "psi_agg": layers_to_dict([model.psi_agg]),
        "head": layers_to_dict(model.head),
        "qmatrix": {
            "entries": model.qmatrix.entries.tolist(),
            "knowledge_labels": list(model.qmatrix.knowledge_labels),
            "item_ids": list(model.qmatrix.item_ids),
        },
        "learner_index": model.learner_index,
        "item_index": model.item_index,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_gncdm(path: str | Path) -> GncdmModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("kind") != "gncdm" or data.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(f"{path} is not a version-{FORMAT_VERSION} gncdm model file")
    qm = data["qmatrix"]
    return GncdmModel(
        learner_branch=layers_from_dict(data["learner_branch"]),
        item_branch=layers_from_dict(data["item_branch"]),
        theta_agg=layers_from_dict(data["theta_agg"])[0],
        psi_agg=layers_from_dict(data["psi_agg"])[0],
        head=layers_from_dict(data["head"]),
        alpha=float(data["alpha"]),
        qmatrix=QMatrix(
            entries=np.asarray(qm["entries"], dtype=np.int8),
            knowledge_labels=tuple(qm["knowledge_labels"]),
            item_ids=tuple(qm["item_ids"]),
        ),
        dims=GncdmDims.from_dict(data["dims"]),
        learner_index={k: int(v) for k, v in data["learner_index"].items()},
        item_index={k: int(v) for k, v in data["item_index"].items()},
    )
