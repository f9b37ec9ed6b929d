"""Thin command-line client for the diagnosis service.

Commands map one-to-one onto service endpoints. By default the service app
runs in-process; ``--server http://host:port`` sends the same requests to a
running instance instead. A ``--config file.json`` may supply any flag value
(keyed by the flag's long name with dashes as underscores); explicit flags
win over the config file.

Exit codes: 0 ok, 2 usage or IO error, 3 infeasible hyperparameters,
4 undiagnosable input, 5 unmet metric precondition.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

import httpx

PROG = "cogdiag"


def _parse_floats(text: str, n: int, what: str) -> tuple[float, ...]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"{what} needs {n} comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad {what}: {exc}") from exc


def _ratios(text: str) -> tuple[float, ...]:
    return _parse_floats(text, 3, "ratios")


def _bounds(text: str) -> tuple[float, ...]:
    return _parse_floats(text, 6, "bounds")


def _dims(text: str) -> tuple[int, ...]:
    vals = _parse_floats(text, 4, "dims")
    return tuple(int(v) for v in vals)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Cognitive diagnosis: train models, diagnose new learners "
        "instantly, evaluate, and benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--server", help="base URL of a running service (default: in-process)")
        p.add_argument("--config", help="JSON file supplying default flag values")

    p = sub.add_parser("synth", help="generate a synthetic dataset with known parameters")
    common(p)
    p.add_argument("--learners", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--params-out")
    p.add_argument("--qmatrix-out")
    p.add_argument("--concepts", type=int)

    p = sub.add_parser("train", help="train a model and write the model file")
    common(p)
    p.add_argument("--model", choices=["girt", "gncdm", "irt", "ncdm"])
    p.add_argument("--responses")
    p.add_argument("--qmatrix")
    p.add_argument("--out")
    p.add_argument("--log-out")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--scale", type=float, help="signed-response scale (girt)")
    p.add_argument(
        "--bounds",
        type=_bounds,
        help="girt bounds: proxy_low,proxy_high,disc_low,disc_high,ability_low,ability_high",
    )
    p.add_argument(
        "--dims", type=_dims, help="gncdm sizes: learner_hidden,item_hidden,head_hidden,agg_dim"
    )
    p.add_argument("--split", choices=["none", "random", "user"])
    p.add_argument("--ratios", type=_ratios)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--holdout", type=float)
    p.add_argument("--evidence", type=float)

    p = sub.add_parser("diagnose", help="instant diagnosis of a new learner")
    common(p)
    p.add_argument("--model")
    p.add_argument("--responses", help="CSV with header item_id,score")
    p.add_argument("--out")

    p = sub.add_parser("evaluate", help="score metrics (plus optional IDS/DOC) on a split")
    common(p)
    p.add_argument("--model")
    p.add_argument("--responses")
    p.add_argument("--qmatrix")
    p.add_argument("--split", choices=["random", "user"])
    p.add_argument("--ratios", type=_ratios)
    p.add_argument("--seed", type=int, dest="split_seed")
    p.add_argument("--holdout", type=float)
    p.add_argument("--evidence", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--ids", action="store_true", default=None)
    p.add_argument("--augment", type=float)
    p.add_argument("--doc", action="store_true", default=None)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--out")

    p = sub.add_parser("bench", help="diagnosis wall time vs full retraining")
    common(p)
    p.add_argument("--model")
    p.add_argument("--baseline", choices=["irt", "ncdm"])
    p.add_argument("--responses")
    p.add_argument("--qmatrix")
    p.add_argument("--new-learners", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--repeat", type=int)
    p.add_argument("--out")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _merge_config(args: argparse.Namespace) -> dict[str, Any]:
    """Flag values with config-file fallbacks; explicit flags win."""
    values = vars(args).copy()
    config_path = values.pop("config", None)
    if config_path:
        try:
            config = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"{PROG}: cannot read config {config_path}: {exc}", file=sys.stderr)
            raise SystemExit(2)
        if not isinstance(config, dict):
            print(f"{PROG}: config must be a JSON object", file=sys.stderr)
            raise SystemExit(2)
        for key, val in config.items():
            key = key.replace("-", "_")
            if values.get(key) is None:
                values[key] = val
    return values


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # starlette warns on import under some builds
        from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app())


def _post(client: httpx.Client, endpoint: str, body: dict) -> dict:
    try:
        resp = client.post(endpoint, json=body)
    except httpx.HTTPError as exc:
        print(f"{PROG}: request failed: {exc}", file=sys.stderr)
        raise SystemExit(1)
    if resp.status_code == 200:
        return resp.json()
    if resp.status_code == 422:
        print(f"{PROG}: invalid request: {resp.text}", file=sys.stderr)
        raise SystemExit(2)
    try:
        payload = resp.json()
    except json.JSONDecodeError:
        payload = {}
    message = payload.get("message", resp.text)
    print(f"{PROG}: {message}", file=sys.stderr)
    raise SystemExit(int(payload.get("exit_code", 1)))


def _drop_none(body: dict) -> dict:
    return {k: v for k, v in body.items() if v is not None}


def _write_report(report: dict, out: str | None) -> None:
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if out:
        try:
            Path(out).write_text(text, encoding="utf-8")
        except OSError as exc:
            print(f"{PROG}: cannot write {out}: {exc}", file=sys.stderr)
            raise SystemExit(2)
    else:
        print(text, end="")


def cmd_synth(values: dict) -> int:
    if not values.get("out"):
        print(f"{PROG} synth: --out is required", file=sys.stderr)
        return 2
    body = _drop_none(
        {
            "learners": values.get("learners"),
            "items": values.get("items"),
            "density": values.get("density"),
            "seed": values.get("seed", 0) or 0,
            "out": values["out"],
            "params_out": values.get("params_out"),
            "qmatrix_out": values.get("qmatrix_out"),
            "concepts": values.get("concepts"),
        }
    )
    with _client(values.get("server")) as client:
        result = _post(client, "/synth", body)
    print(f"wrote {result['rows']} responses to {result['out']}")
    return 0


def cmd_train(values: dict) -> int:
    for flag in ("model", "responses", "out"):
        if not values.get(flag):
            print(f"{PROG} train: --{flag} is required", file=sys.stderr)
            return 2
    body = _drop_none(
        {
            "model": values["model"],
            "responses": values["responses"],
            "qmatrix": values.get("qmatrix"),
            "out": values["out"],
            "log_out": values.get("log_out"),
            "lr": values.get("lr"),
            "epochs": values.get("epochs"),
            "batch_size": values.get("batch_size"),
            "seed": values.get("seed"),
            "alpha": values.get("alpha"),
            "scale": values.get("scale"),
        }
    )
    if values.get("bounds") is not None:
        low, high, dlow, dhigh, alow, ahigh = values["bounds"]
        body["bounds"] = {
            "proxy_low": low,
            "proxy_high": high,
            "disc_low": dlow,
            "disc_high": dhigh,
            "ability_low": alow,
            "ability_high": ahigh,
        }
    if values.get("dims") is not None:
        lh, ih, hh, agg = values["dims"]
        body["dims"] = {
            "learner_hidden": lh,
            "item_hidden": ih,
            "head_hidden": hh,
            "agg_dim": agg,
        }
    if values.get("split") and values["split"] != "none":
        body["split"] = _drop_none(
            {
                "kind": values["split"],
                "ratios": list(values["ratios"]) if values.get("ratios") else None,
                "seed": values.get("split_seed"),
                "holdout_frac": values.get("holdout"),
                "evidence_frac": values.get("evidence"),
            }
        )
    with _client(values.get("server")) as client:
        result = _post(client, "/train", body)
    loss = result.get("final_loss")
    loss_text = f", final loss {loss:.6f}" if loss is not None else ""
    print(f"trained {result['model']} on {result['train_triplets']} responses{loss_text}; "
          f"model written to {result['out']}")
    return 0


def cmd_diagnose(values: dict) -> int:
    for flag in ("model", "responses"):
        if not values.get(flag):
            print(f"{PROG} diagnose: --{flag} is required", file=sys.stderr)
            return 2
    from .dataio import load_new_learner_responses
    from .errors import CogdiagError

    try:
        responses = load_new_learner_responses(values["responses"])
    except CogdiagError as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return exc.exit_code
    body = {
        "model_path": values["model"],
        "responses": [{"item_id": item_id, "score": score} for item_id, score in responses],
    }
    with _client(values.get("server")) as client:
        report = _post(client, "/diagnose", body)
    _write_report(report, values.get("out"))
    return 0


def cmd_evaluate(values: dict) -> int:
    for flag in ("model", "responses"):
        if not values.get(flag):
            print(f"{PROG} evaluate: --{flag} is required", file=sys.stderr)
            return 2
    body = _drop_none(
        {
            "model_path": values["model"],
            "responses": values["responses"],
            "qmatrix": values.get("qmatrix"),
            "split": values.get("split"),
            "ratios": list(values["ratios"]) if values.get("ratios") else None,
            "split_seed": values.get("split_seed"),
            "holdout_frac": values.get("holdout"),
            "evidence_frac": values.get("evidence"),
            "threshold": values.get("threshold"),
            "ids": values.get("ids"),
            "augment": values.get("augment"),
            "doc": values.get("doc"),
            "lr": values.get("lr"),
            "epochs": values.get("epochs"),
            "batch_size": values.get("batch_size"),
        }
    )
    with _client(values.get("server")) as client:
        report = _post(client, "/evaluate", body)
    _write_report(report, values.get("out"))
    return 0


def cmd_bench(values: dict) -> int:
    for flag in ("model", "baseline", "responses", "new_learners"):
        if values.get(flag) is None:
            print(f"{PROG} bench: --{flag.replace('_', '-')} is required", file=sys.stderr)
            return 2
    body = _drop_none(
        {
            "model_path": values["model"],
            "baseline": values["baseline"],
            "responses": values["responses"],
            "qmatrix": values.get("qmatrix"),
            "new_learners": values.get("new_learners"),
            "lr": values.get("lr"),
            "epochs": values.get("epochs"),
            "batch_size": values.get("batch_size"),
            "seed": values.get("seed"),
            "repeat": values.get("repeat"),
        }
    )
    with _client(values.get("server")) as client:
        report = _post(client, "/bench", body)
    _write_report(report, values.get("out"))
    return 0


def cmd_serve(values: dict) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=values["host"], port=values["port"])
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve":
        return cmd_serve(vars(args))
    values = _merge_config(args)
    handlers = {
        "synth": cmd_synth,
        "train": cmd_train,
        "diagnose": cmd_diagnose,
        "evaluate": cmd_evaluate,
        "bench": cmd_bench,
    }
    return handlers[args.command](values)


if __name__ == "__main__":
    sys.exit(main())
