"""Generative item response theory with a scalar ability per learner.

Instead of optimizing one ability per learner, the model trains proxy vectors
(a proxy ability per learner, a proxy discrimination and proxy difficulty per
item) and *generates* traits as pure functions of signed response vectors:

    theta_i = mean_j [ wb_j + scale * r_ij / wa_j ]            over observed j
    a_j     = mean_i | scale * r_ij / (wt_i - mean(wb)) |      over observed i
    b_j     = mean_i [ wt_i - scale * r_ij / mean(wa) ]        over observed i

with r_ij = 2*y_ij - 1 for observed responses. The counterpart proxies inside
the item formulas enter as population means, so every generated trait is a
pure function of its response vector: equal evidence always yields equal
traits, and a new learner is diagnosed without touching any parameter.

Proxy parameters live in fixed open intervals; the signed-response scale must
lie in the feasible interval derived from those bounds, which guarantees that
every generated ability stays inside the configured target range and that an
all-correct matrix yields ability above every difficulty.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import ResponseDataset, SignedResponseVector
from .errors import (
    DataFormatError,
    InfeasibleHyperparameterError,
    TrainingDivergedError,
    UndiagnosableError,
)

FORMAT_VERSION = 1
BOUND_MARGIN = 1e-6  # keeps proxies strictly inside their open intervals
DENOM_FLOOR = 1e-6  # |wt_i - wb_j| is clamped here to keep a_j finite


@dataclass(frozen=True)
class GirtBounds:
    """Open intervals for the proxy parameters and the target ability range.

    proxy_low/proxy_high bound both proxy abilities and proxy difficulties;
    disc_low/disc_high bound proxy discriminations; ability_low/ability_high
    is the range every generated ability must fall into.
    """

    proxy_low: float = -1.0
    proxy_high: float = 1.0
    disc_low: float = 0.5
    disc_high: float = 1.0
    ability_low: float = -4.0
    ability_high: float = 4.0

    def __post_init__(self) -> None:
        if not self.proxy_low < self.proxy_high:
            raise DataFormatError("proxy interval is empty")
        if not 0 < self.disc_low < self.disc_high:
            raise DataFormatError("discrimination interval must satisfy 0 < low < high")
        if not (self.ability_low < self.proxy_low and self.ability_high > self.proxy_high):
            raise DataFormatError("target ability range must strictly contain the proxy interval")

    def to_dict(self) -> dict:
        return {
            "proxy_low": self.proxy_low,
            "proxy_high": self.proxy_high,
            "disc_low": self.disc_low,
            "disc_high": self.disc_high,
            "ability_low": self.ability_low,
            "ability_high": self.ability_high,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GirtBounds":
        return cls(**{k: float(v) for k, v in data.items()})


def feasible_scale_interval(bounds: GirtBounds) -> tuple[float, float]:
    """Feasible half-open interval (lo, hi] for the signed-response scale.

    The upper bound keeps every generated ability inside the target range; the
    lower bound makes an all-correct response matrix yield ability strictly
    above every generated difficulty.
    """
    lo = 0.5 * bounds.disc_high * (bounds.proxy_high - bounds.proxy_low)
    hi = min(
        bounds.disc_low * (bounds.ability_high - bounds.proxy_high),
        bounds.disc_low * (bounds.proxy_low - bounds.ability_low),
    )
    if lo >= hi:
        raise InfeasibleHyperparameterError(
            f"bounds admit no feasible scale: lower bound {lo} >= upper bound {hi}"
        )
    return lo, hi


def check_scale(scale: float, bounds: GirtBounds) -> None:
    lo, hi = feasible_scale_interval(bounds)
    if not lo < scale <= hi:
        raise InfeasibleHyperparameterError(
            f"scale {scale} outside the feasible interval ({lo}, {hi}]"
        )


def girt_irf(theta, a, b):
    """Correct-response probability sigmoid(a * (theta - b)); a must be positive."""
    a_arr = np.asarray(a, dtype=np.float64)
    if (a_arr <= 0).any():
        raise DataFormatError("discrimination must be positive")
    z = a_arr * (np.asarray(theta, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GirtModel:
    """Trained proxy parameters; immutable, generation is a pure function."""

    proxy_ability: np.ndarray  # per training learner, in (proxy_low, proxy_high)
    proxy_disc: np.ndarray  # per item, in (disc_low, disc_high)
    proxy_diff: np.ndarray  # per item, in (proxy_low, proxy_high)
    scale: float
    bounds: GirtBounds
    learner_index: dict[str, int]
    item_index: dict[str, int]
    cohort_thetas: np.ndarray  # abilities generated from the training rows

    def __post_init__(self) -> None:
        check_scale(self.scale, self.bounds)
        b = self.bounds
        if not (
            (self.proxy_ability > b.proxy_low).all()
            and (self.proxy_ability < b.proxy_high).all()
            and (self.proxy_diff > b.proxy_low).all()
            and (self.proxy_diff < b.proxy_high).all()
            and (self.proxy_disc > b.disc_low).all()
            and (self.proxy_disc < b.disc_high).all()
        ):
            raise DataFormatError("proxy parameters outside their bound intervals")

    @property
    def n_items(self) -> int:
        return len(self.item_index)


def girt_gdf_learner(model: GirtModel, y_s: SignedResponseVector) -> float:
    """Generate a scalar ability from a learner's signed response vector."""
    vals = y_s.values
    if vals.shape[0] != model.n_items:
        raise DataFormatError(
            f"response vector has {vals.shape[0]} entries, model has {model.n_items} items"
        )
    obs = np.flatnonzero(vals)
    if obs.size == 0:
        raise UndiagnosableError("no responses for learner")
    r = vals[obs].astype(np.float64)
    contrib = model.proxy_diff[obs] + model.scale * r / model.proxy_disc[obs]
    return float(contrib.mean())


def girt_gdf_item(model: GirtModel, y_e: SignedResponseVector) -> tuple[float, float]:
    """Generate (discrimination, difficulty) for an item from its signed column.

    The counterpart difficulty/discrimination entering the inverse-response
    formulas are the means of the proxy vectors, so the result is a pure
    function of the column: identical columns always yield identical traits.
    Near-zero ability-difficulty gaps are clamped in magnitude so the
    discrimination stays finite.
    """
    vals = y_e.values
    if vals.shape[0] != len(model.learner_index):
        raise DataFormatError(
            f"column has {vals.shape[0]} entries, model has {len(model.learner_index)} learners"
        )
    obs = np.flatnonzero(vals)
    if obs.size == 0:
        raise UndiagnosableError("no responses for item")
    r = vals[obs].astype(np.float64)
    gap = model.proxy_ability[obs] - model.proxy_diff.mean()
    gap = np.where(gap >= 0, np.maximum(gap, DENOM_FLOOR), np.minimum(gap, -DENOM_FLOOR))
    a = float(np.abs(model.scale * r / gap).mean())
    b = float((model.proxy_ability[obs] - model.scale * r / model.proxy_disc.mean()).mean())
    return a, b


# ---------------------------------------------------------------------------
# vectorized generation and training
# ---------------------------------------------------------------------------


def _generate_all(
    wt: np.ndarray,
    wa: np.ndarray,
    wb: np.ndarray,
    scale: float,
    li: np.ndarray,
    ji: np.ndarray,
    r: np.ndarray,
    n_learners: int,
    n_items: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Generate (theta, a, b) for all learners/items from observation arrays.

    Learners or items without observations get NaN; callers decide fallbacks.
    Returns (theta, a, b, obs_per_learner, obs_per_item).
    """
    z_s = np.bincount(li, minlength=n_learners).astype(np.float64)
    z_e = np.bincount(ji, minlength=n_items).astype(np.float64)
    theta_sum = np.bincount(li, weights=wb[ji] + scale * r / wa[ji], minlength=n_learners)
    with np.errstate(invalid="ignore"):
        theta = theta_sum / z_s
    gap = wt[li] - wb.mean()
    gap_c = np.where(gap >= 0, np.maximum(gap, DENOM_FLOOR), np.minimum(gap, -DENOM_FLOOR))
    a_sum = np.bincount(ji, weights=scale / np.abs(gap_c), minlength=n_items)
    b_sum = np.bincount(ji, weights=wt[li] - scale * r / wa.mean(), minlength=n_items)
    with np.errstate(invalid="ignore"):
        a = a_sum / z_e
        b = b_sum / z_e
    return theta, a, b, z_s, z_e


def _batch_loss_and_grads(
    wt: np.ndarray,
    wa: np.ndarray,
    wb: np.ndarray,
    scale: float,
    li: np.ndarray,
    ji: np.ndarray,
    r: np.ndarray,
    y: np.ndarray,
    batch: np.ndarray,
    n_learners: int,
    n_items: int,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Mean negative log-likelihood over ``batch`` triplets and its proxy gradients.

    Traits are regenerated from the full observation arrays at the current
    proxies; the batch only selects which reconstruction terms enter the loss.
    """
    theta, a, b, z_s, z_e = _generate_all(wt, wa, wb, scale, li, ji, r, n_learners, n_items)
    bl, bj, by = li[batch], ji[batch], y[batch]
    z = a[bj] * (theta[bl] - b[bj])
    yh = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    yc = np.clip(yh, 1e-7, 1.0 - 1e-7)
    loss = float(-(by * np.log(yc) + (1.0 - by) * np.log(1.0 - yc)).mean())

    g = (yh - by) / batch.size  # d(mean NLL)/dz for a logistic output
    d_theta = np.bincount(bl, weights=g * a[bj], minlength=n_learners)
    d_a = np.bincount(bj, weights=g * (theta[bl] - b[bj]), minlength=n_items)
    d_b = np.bincount(bj, weights=-g * a[bj], minlength=n_items)

    # push trait gradients onto the proxies through the generation formulas;
    # the item formulas use mean proxies, whose gradient spreads over all slots
    coef_theta = d_theta[li] / z_s[li]
    inv_wa_sq = 1.0 / (wa[ji] * wa[ji])
    g_wb = np.bincount(ji, weights=coef_theta, minlength=n_items)
    g_wa = np.bincount(ji, weights=coef_theta * (-scale * r * inv_wa_sq), minlength=n_items)

    gap = wt[li] - wb.mean()
    inside = np.abs(gap) > DENOM_FLOOR
    sign = np.where(gap >= 0, 1.0, -1.0)
    gap_sq = np.where(inside, gap * gap, 1.0)  # clamped region has zero derivative
    d_abs = np.where(inside, -scale * sign / gap_sq, 0.0)
    w_a = d_a[ji] / z_e[ji]
    g_wt = np.bincount(li, weights=w_a * d_abs, minlength=n_learners)
    g_wb += float((-w_a * d_abs).sum()) / n_items

    w_b = d_b[ji] / z_e[ji]
    g_wt += np.bincount(li, weights=w_b, minlength=n_learners)
    wam = wa.mean()
    g_wa += float((w_b * scale * r).sum()) / (wam * wam) / n_items
    return loss, g_wt, g_wa, g_wb


def _full_loss(
    wt, wa, wb, scale, li, ji, r, y, n_learners, n_items
) -> float:
    theta, a, b, _, _ = _generate_all(wt, wa, wb, scale, li, ji, r, n_learners, n_items)
    z = a[ji] * (theta[li] - b[ji])
    yh = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    yc = np.clip(yh, 1e-7, 1.0 - 1e-7)
    return float(-(y * np.log(yc) + (1.0 - y) * np.log(1.0 - yc)).mean())


def girt_train(
    train: ResponseDataset,
    bounds: GirtBounds | None = None,
    scale: float = 1.25,
    lr: float = 0.01,
    epochs: int = 20,
    seed: int = 0,
    batch_size: int = 256,
    on_epoch: Callable[[int, float], None] | None = None,
) -> GirtModel:
    """Fit the proxy parameters by mini-batch gradient descent on the NLL.

    Proxies start uniform inside their bound intervals and are clamped back
    after every step, so the scale feasibility guarantees hold throughout.
    ``epochs=0`` returns the seeded initialization (the untrained variant).
    ``on_epoch(epoch, loss)`` receives the full-train loss at epoch 0 (before
    any update) and after each epoch.
    """
    bounds = bounds or GirtBounds()
    check_scale(scale, bounds)
    if not train.triplets:
        raise DataFormatError("training dataset is empty")
    n_learners, n_items = train.n_learners, train.n_items
    li, ji, y8 = train.index_arrays
    y = y8.astype(np.float64)
    r = 2.0 * y - 1.0

    rng = np.random.Generator(np.random.PCG64(seed))
    wt = rng.uniform(bounds.proxy_low, bounds.proxy_high, n_learners)
    wb = rng.uniform(bounds.proxy_low, bounds.proxy_high, n_items)
    wa = rng.uniform(bounds.disc_low, bounds.disc_high, n_items)

    lo_p, hi_p = bounds.proxy_low + BOUND_MARGIN, bounds.proxy_high - BOUND_MARGIN
    lo_a, hi_a = bounds.disc_low + BOUND_MARGIN, bounds.disc_high - BOUND_MARGIN
    np.clip(wt, lo_p, hi_p, out=wt)
    np.clip(wb, lo_p, hi_p, out=wb)
    np.clip(wa, lo_a, hi_a, out=wa)

    if on_epoch is not None:
        on_epoch(0, _full_loss(wt, wa, wb, scale, li, ji, r, y, n_learners, n_items))
    n = li.size
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            loss, g_wt, g_wa, g_wb = _batch_loss_and_grads(
                wt, wa, wb, scale, li, ji, r, y, batch, n_learners, n_items
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            wt -= lr * g_wt
            wa -= lr * g_wa
            wb -= lr * g_wb
            np.clip(wt, lo_p, hi_p, out=wt)
            np.clip(wb, lo_p, hi_p, out=wb)
            np.clip(wa, lo_a, hi_a, out=wa)
        if on_epoch is not None:
            on_epoch(epoch, _full_loss(wt, wa, wb, scale, li, ji, r, y, n_learners, n_items))

    theta, _, _, z_s, _ = _generate_all(wt, wa, wb, scale, li, ji, r, n_learners, n_items)
    theta = np.where(z_s > 0, theta, wb.mean())
    return GirtModel(
        proxy_ability=wt,
        proxy_disc=wa,
        proxy_diff=wb,
        scale=scale,
        bounds=bounds,
        learner_index=dict(train.learner_index),
        item_index=dict(train.item_index),
        cohort_thetas=theta,
    )


def generate_for_dataset(
    model: GirtModel, evidence: ResponseDataset
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Generate traits for every learner and item of ``evidence`` via the model.

    Evidence entries on items the model does not know are dropped for ability
    generation; entries from learners the model does not know are dropped for
    item-trait generation. Learners without usable evidence fall back to the
    mean proxy difficulty; items fall back to discrimination 1.0 and the mean
    proxy ability. Returns (theta, a, b, n_fallbacks) indexed by ``evidence``'s
    own dense indices.
    """
    theta = np.full(evidence.n_learners, model.proxy_diff.mean())
    a = np.ones(evidence.n_items)
    b = np.full(evidence.n_items, model.proxy_ability.mean())

    li_e, ji_e, y = evidence.index_arrays
    r = 2.0 * y.astype(np.float64) - 1.0
    item_map = np.array(
        [model.item_index.get(item_id, -1) for item_id in evidence.item_ids], dtype=np.int64
    )
    learner_map = np.array(
        [model.learner_index.get(lid, -1) for lid in evidence.learner_ids], dtype=np.int64
    )

    # abilities: evidence rows mapped onto the model's item proxies
    keep = item_map[ji_e] >= 0
    li_k, jm_k, r_k = li_e[keep], item_map[ji_e[keep]], r[keep]
    z_s = np.bincount(li_k, minlength=evidence.n_learners).astype(np.float64)
    t_sum = np.bincount(
        li_k,
        weights=model.proxy_diff[jm_k] + model.scale * r_k / model.proxy_disc[jm_k],
        minlength=evidence.n_learners,
    )
    has_row = z_s > 0
    theta[has_row] = t_sum[has_row] / z_s[has_row]

    # item traits: evidence columns mapped onto the model's learner proxies
    keep = learner_map[li_e] >= 0
    lm_k, ji_k, r_k = learner_map[li_e[keep]], ji_e[keep], r[keep]
    z_e = np.bincount(ji_k, minlength=evidence.n_items).astype(np.float64)
    gap = model.proxy_ability[lm_k] - model.proxy_diff.mean()
    gap = np.where(gap >= 0, np.maximum(gap, DENOM_FLOOR), np.minimum(gap, -DENOM_FLOOR))
    a_sum = np.bincount(ji_k, weights=model.scale / np.abs(gap), minlength=evidence.n_items)
    b_sum = np.bincount(
        ji_k,
        weights=model.proxy_ability[lm_k] - model.scale * r_k / model.proxy_disc.mean(),
        minlength=evidence.n_items,
    )
    has_col = z_e > 0
    a[has_col] = a_sum[has_col] / z_e[has_col]
    b[has_col] = b_sum[has_col] / z_e[has_col]
    n_fallbacks = int((~has_row).sum() + (~has_col).sum())
    return theta, a, b, n_fallbacks


def girt_diagnose_new(
    model: GirtModel, responses: Sequence[tuple[str, int]]
) -> tuple[float, int, int]:
    """Instant diagnosis of a new learner; returns (theta, n_used, n_skipped).

    Responses on unknown items are skipped; if every item is unknown the
    learner cannot be diagnosed. The model is never mutated.
    """
    known: list[tuple[int, int]] = []
    skipped = 0
    for item_id, score in responses:
        j = model.item_index.get(str(item_id))
        if j is None:
            skipped += 1
        else:
            known.append((j, int(score)))
    if not known:
        raise UndiagnosableError(
            "no known items in evidence: " + ", ".join(str(e) for e, _ in responses)
        )
    vec = np.zeros(model.n_items, dtype=np.int8)
    for j, score in known:
        vec[j] = 2 * score - 1
    theta = girt_gdf_learner(model, SignedResponseVector.from_values(vec))
    return theta, len(known), skipped


def girt_report(model: GirtModel, cohort_thetas: np.ndarray, theta: float) -> dict:
    """Cohort-relative report: ability, strict-percentile, and CDF points."""
    cohort = np.asarray(cohort_thetas, dtype=np.float64)
    if cohort.size == 0:
        raise DataFormatError("cohort is empty")
    percentile = float((cohort < theta).mean())
    values = np.sort(np.unique(cohort))
    cdf = np.searchsorted(np.sort(cohort), values, side="right") / cohort.size
    return {
        "theta": float(theta),
        "percentile": percentile,
        "cdf_points": [[float(v), float(c)] for v, c in zip(values, cdf)],
    }


def save_girt(model: GirtModel, path: str | Path) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "girt",
        "omega_theta": model.proxy_ability.tolist(),
        "omega_a": model.proxy_disc.tolist(),
        "omega_b": model.proxy_diff.tolist(),
        "lambda": model.scale,
        "bounds": model.bounds.to_dict(),
        "learner_index": model.learner_index,
        "item_index": model.item_index,
        "cohort_thetas": model.cohort_thetas.tolist(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_girt(path: str | Path) -> GirtModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("kind") != "girt" or data.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(f"{path} is not a version-{FORMAT_VERSION} girt model file")
    return GirtModel(
        proxy_ability=np.asarray(data["omega_theta"], dtype=np.float64),
        proxy_disc=np.asarray(data["omega_a"], dtype=np.float64),
        proxy_diff=np.asarray(data["omega_b"], dtype=np.float64),
        scale=float(data["lambda"]),
        bounds=GirtBounds.from_dict(data["bounds"]),
        learner_index={k: int(v) for k, v in data["learner_index"].items()},
        item_index={k: int(v) for k, v in data["item_index"].items()},
        cohort_thetas=np.asarray(data["cohort_thetas"], dtype=np.float64),
    )
