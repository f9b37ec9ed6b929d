"""Transductive baselines: per-learner parameters fit by gradient descent.

These models optimize one trait vector per training learner, so a new learner
requires a full refit (`retrain_for_new_learners`); they exist for the
score-prediction and diagnosis-speed comparisons against the generative
models. Positivity of the logistic discrimination uses an absolute-value
reparameterization; the concept-level model keeps its interaction stack
non-negative, matching the generative head's monotonicity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .core import QMatrix, ResponseDataset
from .errors import DataFormatError, TrainingDivergedError
from .nnkernel import (
    DenseLayer,
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
class TransductiveIrtModel:
    """One scalar ability per learner, (discrimination, difficulty) per item."""

    ability: np.ndarray
    disc_raw: np.ndarray  # discrimination = |disc_raw|
    difficulty: np.ndarray
    learner_index: dict[str, int]
    item_index: dict[str, int]

    @property
    def discrimination(self) -> np.ndarray:
        return np.abs(self.disc_raw)


def irt_predict(model: TransductiveIrtModel, learner_idx: int, item_idx: int) -> float:
    if not 0 <= learner_idx < model.ability.size:
        raise DataFormatError(f"learner index {learner_idx} out of range")
    if not 0 <= item_idx < model.difficulty.size:
        raise DataFormatError(f"item index {item_idx} out of range")
    a = float(np.abs(model.disc_raw[item_idx]))
    if a <= 0:
        raise DataFormatError(f"item {item_idx} has non-positive discrimination")
    z = a * (model.ability[learner_idx] - model.difficulty[item_idx])
    return float(sigmoid(z))


def irt_predict_rows(
    model: TransductiveIrtModel, li: np.ndarray, ji: np.ndarray
) -> np.ndarray:
    z = np.abs(model.disc_raw[ji]) * (model.ability[li] - model.difficulty[ji])
    return sigmoid(z)


def _mean_nll(yh: np.ndarray, y: np.ndarray) -> float:
    yc = np.clip(yh, PROB_EPS, 1.0 - PROB_EPS)
    return float(-(y * np.log(yc) + (1.0 - y) * np.log(1.0 - yc)).mean())


def irt_fit(
    train: ResponseDataset,
    lr: float = 1.0,
    epochs: int = 30,
    seed: int = 0,
    batch_size: int = 256,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TransductiveIrtModel:
    """Fit abilities/difficulties/discriminations by seeded mini-batch descent.

    ``epochs=0`` returns the initialization. ``on_epoch`` receives the full
    training loss at epoch 0 and after each epoch.
    """
    if not train.triplets:
        raise DataFormatError("training dataset is empty")
    n_learners, n_items = train.n_learners, train.n_items
    li, ji, y8 = train.index_arrays
    y = y8.astype(np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = 0.1 * rng.standard_normal(n_learners)
    b = 0.1 * rng.standard_normal(n_items)
    a_raw = np.ones(n_items)

    def full_loss() -> float:
        return _mean_nll(sigmoid(np.abs(a_raw[ji]) * (theta[li] - b[ji])), y)

    if on_epoch is not None:
        on_epoch(0, full_loss())
    n = li.size
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            bl, bj, by = li[batch], ji[batch], y[batch]
            a = np.abs(a_raw[bj])
            z = a * (theta[bl] - b[bj])
            yh = sigmoid(z)
            if not np.isfinite(yh).all():
                raise TrainingDivergedError(f"non-finite prediction at epoch {epoch}")
            g = (yh - by) / batch.size
            sign = np.where(a_raw[bj] >= 0, 1.0, -1.0)
            d_theta = np.bincount(bl, weights=g * a, minlength=n_learners)
            d_b = np.bincount(bj, weights=-g * a, minlength=n_items)
            d_a_raw = np.bincount(bj, weights=g * (theta[bl] - b[bj]) * sign, minlength=n_items)
            theta -= lr * d_theta
            b -= lr * d_b
            a_raw -= lr * d_a_raw
        if on_epoch is not None:
            on_epoch(epoch, full_loss())
    return TransductiveIrtModel(
        ability=theta,
        disc_raw=a_raw,
        difficulty=b,
        learner_index=dict(train.learner_index),
        item_index=dict(train.item_index),
    )


@dataclass
class TransductiveNcdmModel:
    """Concept-level mastery per learner with a non-negative interaction stack."""

    mastery_raw: np.ndarray  # (N, K); mastery = sigmoid(mastery_raw)
    diff_raw: np.ndarray  # (M, K)
    disc_raw: np.ndarray  # (M,); discrimination = sigmoid(disc_raw)
    interaction: list[DenseLayer]  # K -> H -> H -> 1, nonneg, sigmoid
    qmatrix: QMatrix
    learner_index: dict[str, int]
    item_index: dict[str, int]

    @property
    def mastery(self) -> np.ndarray:
        return sigmoid(self.mastery_raw)


def ncdm_predict_rows(
    model: TransductiveNcdmModel, li: np.ndarray, ji: np.ndarray
) -> np.ndarray:
    theta = sigmoid(model.mastery_raw[li])
    diff = sigmoid(model.diff_raw[ji])
    disc = sigmoid(model.disc_raw[ji])
    q = model.qmatrix.entries.astype(np.float64)[ji]
    x = disc[:, None] * (theta - diff) * q
    yh, _ = forward(model.interaction, x)
    return yh[:, 0]


def ncdm_predict(model: TransductiveNcdmModel, learner_idx: int, item_idx: int) -> float:
    if not 0 <= learner_idx < model.mastery_raw.shape[0]:
        raise DataFormatError(f"learner index {learner_idx} out of range")
    if not 0 <= item_idx < model.diff_raw.shape[0]:
        raise DataFormatError(f"item index {item_idx} out of range")
    return float(
        ncdm_predict_rows(
            model, np.array([learner_idx]), np.array([item_idx])
        )[0]
    )


def ncdm_fit(
    train: ResponseDataset,
    qmatrix: QMatrix,
    lr: float = 0.1,
    epochs: int = 30,
    seed: int = 0,
    batch_size: int = 256,
    head_hidden: int = 128,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TransductiveNcdmModel:
    """Fit mastery/difficulty/discrimination embeddings plus the interaction stack."""
    if not train.triplets:
        raise DataFormatError("training dataset is empty")
    q = qmatrix.aligned_to(train)
    n_learners, n_items, k = train.n_learners, train.n_items, q.n_concepts
    li, ji, y8 = train.index_arrays
    y = y8.astype(np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    mastery_raw = 0.1 * rng.standard_normal((n_learners, k))
    diff_raw = 0.1 * rng.standard_normal((n_items, k))
    disc_raw = np.zeros(n_items)
    # hidden layers are linear (sigmoid output only) so plain gradient descent
    # can move the stack; non-negative weights keep it monotone in mastery
    interaction = [
        init_layer(k, head_hidden, rng, nonneg=True, activation="identity"),
        init_layer(head_hidden, head_hidden, rng, nonneg=True, activation="identity"),
        init_layer(head_hidden, 1, rng, nonneg=True),
    ]
    q_ent = q.entries.astype(np.float64)

    model = TransductiveNcdmModel(
        mastery_raw=mastery_raw,
        diff_raw=diff_raw,
        disc_raw=disc_raw,
        interaction=interaction,
        qmatrix=q,
        learner_index=dict(train.learner_index),
        item_index=dict(train.item_index),
    )

    def full_loss() -> float:
        return _mean_nll(ncdm_predict_rows(model, li, ji), y)

    if on_epoch is not None:
        on_epoch(0, full_loss())
    n = li.size
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            bl, bj, by = li[batch], ji[batch], y[batch]
            theta = sigmoid(mastery_raw[bl])
            diff = sigmoid(diff_raw[bj])
            disc = sigmoid(disc_raw[bj])
            q_rows = q_ent[bj]
            x = disc[:, None] * (theta - diff) * q_rows
            yh_col, tape = forward(interaction, x)
            yh = yh_col[:, 0]
            yc = np.clip(yh, PROB_EPS, 1.0 - PROB_EPS)
            loss = _mean_nll(yh, by)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            d_yh = ((yc - by) / (yc * (1.0 - yc)) / by.size)[:, None]
            grads, dx = backward(tape, d_yh)
            d_theta = dx * disc[:, None] * q_rows
            d_diff = -d_theta
            d_disc = (dx * (theta - diff) * q_rows).sum(axis=1)
            np.add.at(mastery_raw, bl, d_theta * theta * (1.0 - theta) * -lr)
            np.add.at(diff_raw, bj, d_diff * diff * (1.0 - diff) * -lr)
            np.add.at(disc_raw, bj, d_disc * disc * (1.0 - disc) * -lr)
            for layer, g in zip(interaction, grads):
                sgd_step(layer, g, lr)
        if on_epoch is not None:
            on_epoch(epoch, full_loss())
    return model


def retrain_for_new_learners(
    kind: str,
    ds: ResponseDataset,
    qmatrix: QMatrix | None = None,
    lr: float | None = None,
    epochs: int = 30,
    seed: int = 0,
    batch_size: int = 256,
):
    """Full refit from scratch on a dataset already extended with new learners."""
    if kind == "irt":
        return irt_fit(ds, lr=1.0 if lr is None else lr, epochs=epochs, seed=seed, batch_size=batch_size)
    if kind == "ncdm":
        if qmatrix is None:
            raise DataFormatError("ncdm retraining requires a Q-matrix")
        return ncdm_fit(
            ds, qmatrix, lr=0.1 if lr is None else lr, epochs=epochs, seed=seed, batch_size=batch_size
        )
    raise DataFormatError(f"unknown transductive model kind {kind!r}")


def save_irt(model: TransductiveIrtModel, path: str | Path) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "irt",
        "theta": model.ability.tolist(),
        "disc_raw": model.disc_raw.tolist(),
        "difficulty": model.difficulty.tolist(),
        "learner_index": model.learner_index,
        "item_index": model.item_index,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_irt(path: str | Path) -> TransductiveIrtModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("kind") != "irt" or data.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(f"{path} is not a version-{FORMAT_VERSION} irt model file")
    return TransductiveIrtModel(
        ability=np.asarray(data["theta"], dtype=np.float64),
        disc_raw=np.asarray(data["disc_raw"], dtype=np.float64),
        difficulty=np.asarray(data["difficulty"], dtype=np.float64),
        learner_index={k: int(v) for k, v in data["learner_index"].items()},
        item_index={k: int(v) for k, v in data["item_index"].items()},
    )


def save_ncdm(model: TransductiveNcdmModel, path: str | Path) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "ncdm",
        "mastery_raw": model.mastery_raw.tolist(),
        "diff_raw": model.diff_raw.tolist(),
        "disc_raw": model.disc_raw.tolist(),
        "interaction": layers_to_dict(model.interaction),
        "qmatrix": {
            "entries": model.qmatrix.entries.tolist(),
            "knowledge_labels": list(model.qmatrix.knowledge_labels),
            "item_ids": list(model.qmatrix.item_ids),
        },
        "learner_index": model.learner_index,
        "item_index": model.item_index,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_ncdm(path: str | Path) -> TransductiveNcdmModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("kind") != "ncdm" or data.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(f"{path} is not a version-{FORMAT_VERSION} ncdm model file")
    qm = data["qmatrix"]
    return TransductiveNcdmModel(
        mastery_raw=np.asarray(data["mastery_raw"], dtype=np.float64),
        diff_raw=np.asarray(data["diff_raw"], dtype=np.float64),
        disc_raw=np.asarray(data["disc_raw"], dtype=np.float64),
        interaction=layers_from_dict(data["interaction"]),
        qmatrix=QMatrix(
            entries=np.asarray(qm["entries"], dtype=np.int8),
            knowledge_labels=tuple(qm["knowledge_labels"]),
            item_ids=tuple(qm["item_ids"]),
        ),
        learner_index={k: int(v) for k, v in data["learner_index"].items()},
        item_index={k: int(v) for k, v in data["item_index"].items()},
    )
