"""Orchestration for the service endpoints and the CLI: synthetic data
generation, training runs, instant diagnosis, evaluation and benchmarking.

Every function takes file paths plus plain options and returns a JSON-ready
dict; reports are written with sorted keys so identical inputs produce
byte-identical files (timings excluded).
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import baselines, dataio, girt, gncdm, metrics
from .core import ResponseDataset, build_vectors
from .errors import CogdiagError, DataFormatError
from .metrics import score_metrics
from .nnkernel import sigmoid

REPORT_VERSION = 1

DEFAULT_LR = {"girt": 0.01, "gncdm": 0.1, "irt": 1.0, "ncdm": 0.1}
DEFAULT_EPOCHS = {"girt": 20, "gncdm": 30, "irt": 30, "ncdm": 30}
MODEL_KINDS = ("girt", "gncdm", "irt", "ncdm")
GENERATIVE_KINDS = ("girt", "gncdm")


def write_json(payload: dict, path: str | Path) -> None:
    try:
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc}") from exc


def load_model(path: str | Path):
    """Load any model file; returns (kind, model)."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"model file not found: {path}")
    try:
        kind = json.loads(path.read_text(encoding="utf-8")).get("kind")
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read model file {path}: {exc}") from exc
    loaders = {
        "girt": girt.load_girt,
        "gncdm": gncdm.load_gncdm,
        "irt": baselines.load_irt,
        "ncdm": baselines.load_ncdm,
    }
    if kind not in loaders:
        raise DataFormatError(f"{path}: unknown model kind {kind!r}")
    return kind, loaders[kind](path)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def run_synth(
    learners: int,
    items: int,
    seed: int,
    out: str,
    density: float = 1.0,
    params_out: str | None = None,
    qmatrix_out: str | None = None,
    concepts: int = 8,
) -> dict:
    ds, true_params = dataio.synth_irt(learners, items, seed=seed, density=density)
    try:
        dataio.save_responses(ds, out)
    except OSError as exc:
        raise DataFormatError(f"cannot write {out}: {exc}") from exc
    result = {"out": out, "rows": len(ds.triplets), "learners": learners, "items": items}
    if params_out:
        write_json(
            {
                "format_version": REPORT_VERSION,
                "theta_star": true_params.theta_star.tolist(),
                "a_star": true_params.a_star.tolist(),
                "b_star": true_params.b_star.tolist(),
                "learner_ids": list(ds.learner_ids),
                "item_ids": list(ds.item_ids),
            },
            params_out,
        )
        result["params_out"] = params_out
    if qmatrix_out:
        q = dataio.synth_qmatrix(ds.item_ids, concepts, seed=seed)
        try:
            dataio.save_qmatrix(q, qmatrix_out)
        except OSError as exc:
            raise DataFormatError(f"cannot write {qmatrix_out}: {exc}") from exc
        result["qmatrix_out"] = qmatrix_out
    return result


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _training_partition(
    ds: ResponseDataset,
    split: str | None,
    ratios: Sequence[float],
    split_seed: int,
    holdout_frac: float,
    evidence_frac: float,
) -> ResponseDataset:
    if split in (None, "none"):
        return ds
    if split == "random":
        cfg = dataio.SplitConfig(ratios[0], ratios[1], ratios[2], seed=split_seed)
        train, _, _ = dataio.split_random(ds, cfg)
        return train
    if split == "user":
        return dataio.split_by_user(ds, holdout_frac, evidence_frac, split_seed).train
    raise DataFormatError(f"unknown split kind {split!r}")


def run_train(
    model: str,
    responses: str,
    out: str,
    qmatrix: str | None = None,
    log_out: str | None = None,
    lr: float | None = None,
    epochs: int | None = None,
    batch_size: int = 256,
    seed: int = 0,
    alpha: float = 0.5,
    scale: float = 1.25,
    bounds: Mapping[str, float] | None = None,
    dims: Mapping[str, int] | None = None,
    split: str | None = None,
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    split_seed: int = 0,
    holdout_frac: float = 0.2,
    evidence_frac: float = 0.8,
) -> dict:
    if model not in MODEL_KINDS:
        raise DataFormatError(f"unknown model kind {model!r}")
    ds = dataio.load_responses(responses)
    train = _training_partition(ds, split, ratios, split_seed, holdout_frac, evidence_frac)
    lr = DEFAULT_LR[model] if lr is None else lr
    epochs = DEFAULT_EPOCHS[model] if epochs is None else epochs
    history: list[tuple[int, float]] = []

    def record(epoch: int, loss: float) -> None:
        history.append((epoch, loss))

    if model == "girt":
        girt_bounds = girt.GirtBounds(**dict(bounds)) if bounds else girt.GirtBounds()
        fitted = girt.girt_train(
            train,
            bounds=girt_bounds,
            scale=scale,
            lr=lr,
            epochs=epochs,
            seed=seed,
            batch_size=batch_size,
            on_epoch=record,
        )
        girt.save_girt(fitted, out)
    elif model == "gncdm":
        if not qmatrix:
            raise DataFormatError("gncdm training requires a Q-matrix")
        q = dataio.load_qmatrix(qmatrix)
        gdims = gncdm.GncdmDims(**dict(dims)) if dims else gncdm.GncdmDims()
        fitted = gncdm.gncdm_train(
            train,
            q,
            alpha=alpha,
            dims=gdims,
            lr=lr,
            epochs=epochs,
            seed=seed,
            batch_size=batch_size,
            on_epoch=record,
        )
        gncdm.save_gncdm(fitted, out)
    elif model == "irt":
        fitted = baselines.irt_fit(
            train, lr=lr, epochs=epochs, seed=seed, batch_size=batch_size, on_epoch=record
        )
        baselines.save_irt(fitted, out)
    else:
        if not qmatrix:
            raise DataFormatError("ncdm training requires a Q-matrix")
        q = dataio.load_qmatrix(qmatrix)
        fitted = baselines.ncdm_fit(
            train, q, lr=lr, epochs=epochs, seed=seed, batch_size=batch_size, on_epoch=record
        )
        baselines.save_ncdm(fitted, out)

    if log_out:
        try:
            with Path(log_out).open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["epoch", "loss"])
                for epoch, loss in history:
                    writer.writerow([epoch, repr(loss)])
        except OSError as exc:
            raise DataFormatError(f"cannot write {log_out}: {exc}") from exc
    return {
        "out": out,
        "model": model,
        "epochs": epochs,
        "train_triplets": len(train.triplets),
        "initial_loss": history[0][1] if history else None,
        "final_loss": history[-1][1] if history else None,
        "log_out": log_out,
    }


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def run_diagnose(
    model_path: str,
    responses: Sequence[tuple[str, int]],
    out: str | None = None,
) -> dict:
    kind, model = load_model(model_path)
    if kind == "girt":
        theta, used, skipped = girt.girt_diagnose_new(model, responses)
        report = girt.girt_report(model, model.cohort_thetas, theta)
        report.update(
            {
                "format_version": REPORT_VERSION,
                "model_kind": "girt",
                "n_evidence": used,
                "skipped_unknown_items": skipped,
            }
        )
    elif kind == "gncdm":
        report = gncdm.gncdm_report(model, responses)
        report.update({"format_version": REPORT_VERSION, "model_kind": "gncdm"})
    else:
        raise DataFormatError(
            f"{kind} is a transductive model; instant diagnosis needs a generative model"
        )
    if out:
        write_json(report, out)
    return report


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _girt_traits_for(model, evidence_ds):
    theta, a, b, _ = girt.generate_for_dataset(model, evidence_ds)
    theta_by = {lid: theta[i] for lid, i in evidence_ds.learner_index.items()}
    item_by = {iid: (a[j], b[j]) for iid, j in evidence_ds.item_index.items()}
    return theta_by, item_by


def _predictions_random(kind, model, evidence_ds, eval_ds, threshold):
    """Predict eval triplets from evidence-generated (or trained) traits."""
    li, ji, y = eval_ds.index_arrays
    preds = np.full(li.size, np.nan)
    if kind == "girt":
        theta_by, item_by = _girt_traits_for(model, evidence_ds)
        for k in range(li.size):
            lid, iid = eval_ds.learner_ids[li[k]], eval_ds.item_ids[ji[k]]
            if lid in theta_by and iid in item_by:
                a, b = item_by[iid]
                preds[k] = girt.girt_irf(theta_by[lid], a, b)
    elif kind == "gncdm":
        theta = gncdm.generate_learner_traits(model, evidence_ds)
        psi = gncdm.generate_item_traits(model, evidence_ds)
        item_model = np.array(
            [model.item_index.get(iid, -1) for iid in eval_ds.item_ids], dtype=np.int64
        )
        learner_ev = {lid: i for lid, i in evidence_ds.learner_index.items()}
        item_ev = {iid: j for iid, j in evidence_ds.item_index.items()}
        rows_l, rows_p, rows_q, keep_idx = [], [], [], []
        q_ent = model.qmatrix.entries.astype(np.float64)
        for k in range(li.size):
            lid, iid = eval_ds.learner_ids[li[k]], eval_ds.item_ids[ji[k]]
            jm = item_model[ji[k]]
            if lid in learner_ev and iid in item_ev and jm >= 0:
                rows_l.append(theta[learner_ev[lid]])
                rows_p.append(psi[item_ev[iid]])
                rows_q.append(q_ent[jm])
                keep_idx.append(k)
        if keep_idx:
            yh = gncdm.predict_rows(
                model, np.stack(rows_l), np.stack(rows_p), np.stack(rows_q)
            )
            preds[np.asarray(keep_idx)] = yh
    elif kind in ("irt", "ncdm"):
        lmap = np.array(
            [model.learner_index.get(lid, -1) for lid in eval_ds.learner_ids], dtype=np.int64
        )
        imap = np.array(
            [model.item_index.get(iid, -1) for iid in eval_ds.item_ids], dtype=np.int64
        )
        keep = (lmap[li] >= 0) & (imap[ji] >= 0)
        if keep.any():
            if kind == "irt":
                preds[keep] = baselines.irt_predict_rows(model, lmap[li[keep]], imap[ji[keep]])
            else:
                preds[keep] = baselines.ncdm_predict_rows(model, lmap[li[keep]], imap[ji[keep]])
    else:
        raise DataFormatError(f"unknown model kind {kind!r}")
    keep = ~np.isnan(preds)
    return preds[keep], y[keep].astype(np.float64), int((~keep).sum())


def _learner_traits_by_id(kind, model, evidence_ds) -> dict[str, np.ndarray]:
    """Per-learner trait vectors for DOC, generated from (or trained on) evidence."""
    if kind == "girt":
        theta, _, _, _ = girt.generate_for_dataset(model, evidence_ds)
        return {lid: np.asarray([theta[i]]) for lid, i in evidence_ds.learner_index.items()}
    if kind == "gncdm":
        theta = gncdm.generate_learner_traits(model, evidence_ds)
        return {lid: theta[i] for lid, i in evidence_ds.learner_index.items()}
    if kind == "irt":
        return {lid: np.asarray([model.ability[i]]) for lid, i in model.learner_index.items()}
    if kind == "ncdm":
        mastery = model.mastery
        return {lid: mastery[i] for lid, i in model.learner_index.items()}
    raise DataFormatError(f"unknown model kind {kind!r}")


def _restrict_to_traits(ds: ResponseDataset, traits: Mapping[str, np.ndarray]) -> ResponseDataset:
    kept = tuple(t for t in ds.triplets if t[0] in traits)
    if not kept:
        raise DataFormatError("no scoreable responses: traits cover no learner")
    return ResponseDataset.from_triplets(kept)


def _doc_section(kind, model, train_ds, test_ds) -> dict:
    """DOC with traits generated from train evidence and from test evidence.

    Transductive models have one fixed trait set (from training), so only the
    train-side entry is present.
    """
    out = {}
    if kind in GENERATIVE_KINDS:
        variants = {
            "theta_from_train": _learner_traits_by_id(kind, model, train_ds),
            "theta_from_test": _learner_traits_by_id(kind, model, test_ds),
        }
    else:
        variants = {"theta_from_train": _learner_traits_by_id(kind, model, train_ds)}
    for name, traits in variants.items():
        scored = _restrict_to_traits(test_ds, traits)
        if kind in ("girt", "irt"):
            abilities = {lid: float(v[0]) for lid, v in traits.items()}
            per_item, mean = metrics.doc_scalar(abilities, scored)
        else:
            per_item, mean = metrics.doc(traits, scored, model.qmatrix)
        out[name] = {"mean": mean, "per_item": per_item, "n_responses": len(scored.triplets)}
    return out


def _ids_section(kind, model, base_ds, augment_frac, seed, lr, epochs, batch_size) -> dict:
    """IDS over duplicate rows/columns, after optional shadow augmentation.

    Generative models diagnose the (augmented) data directly; transductive
    models are refit on it, since their traits exist only for trained entities.
    """
    ds = base_ds
    if augment_frac:
        ds = dataio.augment_shadow(ds, augment_frac, seed=seed)
    learner_vectors, item_vectors = build_vectors(ds)
    info: dict = {"augment": augment_frac, "n_learners": ds.n_learners, "n_items": ds.n_items}
    if kind == "girt":
        theta_arr, a_arr, b_arr, _ = girt.generate_for_dataset(model, ds)
        theta = [float(theta_arr[i]) for i in range(ds.n_learners)]
        psi = [np.asarray([a_arr[j], b_arr[j]]) for j in range(ds.n_items)]
    elif kind == "gncdm":
        rows, _ = gncdm._evidence_rows(model, ds)
        theta_mat = gncdm._gdf_learner_rows(model, rows)
        theta = [theta_mat[i] for i in range(ds.n_learners)]
        psi_mat = gncdm.generate_item_traits(model, ds)
        psi = [psi_mat[j] for j in range(ds.n_items)]
    else:
        lr = DEFAULT_LR[kind] if lr is None else lr
        refit = baselines.retrain_for_new_learners(
            kind,
            ds,
            qmatrix=getattr(model, "qmatrix", None),
            lr=lr,
            epochs=epochs,
            seed=seed,
            batch_size=batch_size,
        )
        if kind == "irt":
            theta = [float(refit.ability[i]) for i in range(ds.n_learners)]
            psi = [
                np.asarray([abs(refit.disc_raw[j]), refit.difficulty[j]])
                for j in range(ds.n_items)
            ]
        else:
            mastery = refit.mastery
            theta = [mastery[i] for i in range(ds.n_learners)]
            diff = sigmoid(refit.diff_raw)
            disc = sigmoid(refit.disc_raw)
            psi = [np.append(diff[j], disc[j]) for j in range(ds.n_items)]
        info["refit_epochs"] = epochs
    info["theta"] = metrics.ids(theta, learner_vectors)
    info["psi"] = metrics.ids(psi, item_vectors)
    return info


def run_evaluate(
    model_path: str,
    responses: str,
    qmatrix: str | None = None,
    split: str = "random",
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    split_seed: int = 0,
    holdout_frac: float = 0.2,
    evidence_frac: float = 0.8,
    threshold: float = 0.5,
    with_ids: bool = False,
    augment: float | None = None,
    with_doc: bool = False,
    lr: float | None = None,
    epochs: int = 30,
    batch_size: int = 256,
    out: str | None = None,
) -> dict:
    kind, model = load_model(model_path)
    ds = dataio.load_responses(responses)
    report: dict = {
        "format_version": REPORT_VERSION,
        "model_kind": kind,
        "split": {"kind": split, "seed": split_seed},
    }
    if split == "random":
        cfg = dataio.SplitConfig(ratios[0], ratios[1], ratios[2], seed=split_seed)
        train, valid, test = dataio.split_random(ds, cfg)
        report["split"]["ratios"] = list(ratios)
        preds, labels, skipped = _predictions_random(kind, model, train, test, threshold)
        if preds.size == 0:
            raise DataFormatError("no scoreable test responses for this model")
        report.update(score_metrics(preds, labels, threshold).to_dict())
        report["skipped_pairs"] = skipped
        if with_doc:
            report["doc"] = _doc_section(kind, model, train, test)
    elif split == "user":
        if kind not in GENERATIVE_KINDS:
            raise DataFormatError(
                "user-split evaluation needs a generative model; "
                f"{kind} cannot score held-out learners"
            )
        user_split = dataio.split_by_user(ds, holdout_frac, evidence_frac, split_seed)
        train = user_split.train
        report["split"].update(
            {"holdout_frac": holdout_frac, "evidence_frac": evidence_frac}
        )
        preds_list: list[float] = []
        labels_list: list[float] = []
        skipped = 0
        if kind == "girt":
            _, item_by = _girt_traits_for(model, train)
        else:
            psi = gncdm.generate_item_traits(model, train)
            item_ev = train.item_index
            q_ent = model.qmatrix.entries.astype(np.float64)
        for lid, evidence in user_split.holdout_evidence.items():
            targets = user_split.holdout_target.get(lid, ())
            if not targets:
                continue
            try:
                if kind == "girt":
                    theta, _, _ = girt.girt_diagnose_new(model, evidence)
                else:
                    theta, _, _ = gncdm.gncdm_diagnose_new(model, evidence)
            except CogdiagError:
                skipped += len(targets)
                continue
            for item_id, score in targets:
                if kind == "girt":
                    if item_id not in item_by:
                        skipped += 1
                        continue
                    a, b = item_by[item_id]
                    preds_list.append(float(girt.girt_irf(theta, a, b)))
                else:
                    jm = model.item_index.get(item_id)
                    if jm is None or item_id not in item_ev:
                        skipped += 1
                        continue
                    yh = gncdm.predict_rows(
                        model,
                        theta[None, :],
                        psi[item_ev[item_id]][None, :],
                        q_ent[jm][None, :],
                    )
                    preds_list.append(float(yh[0]))
                labels_list.append(float(score))
        if not preds_list:
            raise DataFormatError("no scoreable target responses in the user split")
        report.update(
            score_metrics(np.asarray(preds_list), np.asarray(labels_list), threshold).to_dict()
        )
        report["skipped_pairs"] = skipped
        report["degenerate_learners"] = len(user_split.degenerate_learners)
        if with_doc:
            target_triplets = [
                (lid, item_id, score)
                for lid, targets in user_split.holdout_target.items()
                for item_id, score in targets
            ]
            if target_triplets:
                target_ds = ResponseDataset.from_triplets(target_triplets)
                evidence_triplets = [
                    (lid, item_id, score)
                    for lid, ev in user_split.holdout_evidence.items()
                    for item_id, score in ev
                ]
                evidence_ds = ResponseDataset.from_triplets(evidence_triplets)
                report["doc"] = _doc_section(kind, model, evidence_ds, target_ds)
    else:
        raise DataFormatError(f"unknown split kind {split!r}")

    if with_ids:
        base = train
        report["ids"] = _ids_section(
            kind, model, base, augment, split_seed, lr, epochs, batch_size
        )
    if out:
        write_json(report, out)
    return report


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def run_bench(
    model_path: str,
    baseline: str,
    responses: str,
    qmatrix: str | None = None,
    new_learners: int = 100,
    lr: float | None = None,
    epochs: int = 30,
    batch_size: int = 256,
    seed: int = 0,
    repeat: int = 1,
    out: str | None = None,
) -> dict:
    if new_learners < 1:
        raise DataFormatError("new learner count must be at least 1")
    if baseline not in ("irt", "ncdm"):
        raise DataFormatError(f"unknown baseline kind {baseline!r}")
    kind, model = load_model(model_path)
    if kind not in GENERATIVE_KINDS:
        raise DataFormatError("benchmark needs a generative model to diagnose with")
    ds = dataio.load_responses(responses)
    if new_learners > ds.n_learners:
        raise DataFormatError(
            f"dataset has {ds.n_learners} learners, cannot pick {new_learners}"
        )
    q = dataio.load_qmatrix(qmatrix) if qmatrix else None
    if baseline == "ncdm" and q is None:
        raise DataFormatError("ncdm baseline requires a Q-matrix")
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = rng.choice(ds.n_learners, size=new_learners, replace=False)
    chosen_ids = {ds.learner_ids[i] for i in chosen}
    new_responses: dict[str, list[tuple[str, int]]] = {lid: [] for lid in chosen_ids}
    for lid, iid, score in ds.triplets:
        if lid in chosen_ids:
            new_responses[lid].append((iid, score))
    new_responses = {lid: resp for lid, resp in new_responses.items() if resp}

    if kind == "girt":
        diagnose_fn = lambda resp: girt.girt_diagnose_new(model, resp)  # noqa: E731
    else:
        diagnose_fn = lambda resp: gncdm.gncdm_diagnose_new(model, resp)  # noqa: E731

    def retrain_fn():
        return baselines.retrain_for_new_learners(
            baseline, ds, qmatrix=q, lr=lr, epochs=epochs, seed=seed, batch_size=batch_size
        )

    result = metrics.speedup_benchmark(new_responses, diagnose_fn, retrain_fn, repeat=repeat)
    result.update(
        {
            "format_version": REPORT_VERSION,
            "model_kind": kind,
            "baseline": baseline,
            "retrain_epochs": epochs,
        }
    )
    if out:
        write_json(result, out)
    return result
