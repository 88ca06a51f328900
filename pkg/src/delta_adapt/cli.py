"""``delta-adapt`` command line: fit, adapt, select, calibrate, evaluate, stream.

Exit codes: 0 ok, 2 config, 3 data, 4 io, 5 checkpoint integrity.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import forecaster as fc
from .adapters import AdapterNet, CompositeAdapter
from .calibrators import (ConfigError, ConformalCalibrator, QuantileCalibrator, calibration_metadata,
                          conformal_calibrate, conformal_interval, fit_conformal_scale, quantile_fan,
                          write_interval_csv)
from .data import DataError, SyntheticSpec, generate, load_csv, make_windows, write_csv
from .metrics import display_pct, improvement, interval_metrics, point_metrics
from .selector import MaskNet, Selector, SelectorLossWeights, rank_features, write_feature_report
from .training import (InstrumentedStream, TrainConfig, UnfrozenBackbone, forecast_array, run_online,
                       train_batch)

EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_CHECKPOINT = 2, 3, 4, 5
FORMS = {"add": "additive", "mul": "multiplicative", "exp": "exp"}


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


# ---------------------------------------------------------------- plumbing


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _outdir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
        probe = p / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write to output directory {p}: {e}") from e
    return p


def _write_json(path: Path, doc: dict, canonical: bool) -> None:
    doc = dict(doc)
    if not canonical:
        doc["created"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _save_checkpoint(out: Path, name: str, text: str, manifest: dict) -> Path:
    path = out / f"{name}.json"
    path.write_text(text)
    manifest = dict(manifest, artifact=name, file=path.name, sha256=_sha256(path))
    (out / f"{name}.manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _load_checkpoint(path) -> tuple[str, dict]:
    """Checkpoint text plus its manifest, after verifying the recorded file hash."""
    path = Path(path)
    man_path = path.with_name(path.stem + ".manifest.json")
    if not path.is_file() or not man_path.is_file():
        raise CliError(EXIT_CHECKPOINT, f"missing checkpoint or manifest for {path}")
    manifest = json.loads(man_path.read_text())
    if manifest.get("sha256") != _sha256(path):
        raise CliError(EXIT_CHECKPOINT, f"checksum mismatch for {path}")
    return path.read_text(), manifest


def _load_backbone(path) -> tuple[fc.ForecasterSpec, dict]:
    text, manifest = _load_checkpoint(path)
    try:
        spec = fc.from_json(text)
    except (ValueError, KeyError) as e:
        raise CliError(EXIT_CHECKPOINT, f"corrupt backbone checkpoint {path}: {e}") from e
    if spec.checksum() != manifest.get("param_checksum"):
        raise CliError(EXIT_CHECKPOINT, f"backbone parameters do not match manifest for {path}")
    return spec, manifest


def _check_upstream(manifest: dict, spec: fc.ForecasterSpec, what: str) -> None:
    if manifest.get("backbone_checksum") != spec.checksum():
        raise CliError(EXIT_CHECKPOINT, f"{what} was trained against a different backbone")


def _names(s: str | None) -> list[str] | None:
    return None if s in (None, "") else [c.strip() for c in s.split(",")]


def _floats(s: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in s.split(","))
    except ValueError as e:
        raise CliError(EXIT_CONFIG, f"cannot parse number list {s!r}") from e


def _windows(data: str, manifest: dict):
    frame = load_csv(data)
    ws = make_windows(frame, manifest["L"], manifest["H"], targets=manifest["targets"],
                      splits=tuple(manifest["splits"]), inputs=manifest["inputs"])
    return frame, ws


def _seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get("DELTA_ADAPT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as e:
        raise CliError(EXIT_CONFIG, f"DELTA_ADAPT_SEED must be an integer, got {env!r}") from e


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def _train_cfg(args, **over) -> TrainConfig:
    kw = dict(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
              early_stop_patience=args.patience, seed=args.seed, loss=getattr(args, "loss", "mse"))
    kw.update(over)
    return TrainConfig(**kw)


def _predict_chunks(model, spec, X, jobs: int) -> np.ndarray:
    """Forecasts over windows, optionally split across threads; order is preserved."""
    if jobs <= 1 or len(X) < 2 * jobs:
        return forecast_array(model, spec, X)
    chunks = np.array_split(np.arange(len(X)), jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(lambda idx: forecast_array(model, spec, X[idx]), chunks))
    return np.concatenate(parts, axis=0)


def _build_adapter(args, spec: fc.ForecasterSpec):
    if not 0.0 < args.delta <= 1.0:
        raise CliError(EXIT_CONFIG, f"--delta must lie in (0, 1], got {args.delta}")
    form = FORMS[args.form]
    L, d, H, m = spec.L, spec.d, spec.H, spec.m
    if args.placement == "both":
        return CompositeAdapter.build(L, d, H, m, args.delta, form, form, args.hidden, gate=args.gate,
                                      seed=args.seed)
    placement = "input" if args.placement == "in" else "output"
    return AdapterNet(placement, form, L, d, H, m, args.delta, args.hidden, seed=args.seed)


def _load_adapter(path, spec):
    text, manifest = _load_checkpoint(path)
    _check_upstream(manifest, spec, "adapter")
    doc = json.loads(text)
    return (CompositeAdapter.from_json(text) if doc.get("composite") else AdapterNet.from_json(text)), manifest


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    try:
        params = json.loads(args.params) if args.params else {}
    except json.JSONDecodeError as e:
        raise CliError(EXIT_CONFIG, f"--params is not valid JSON: {e}") from e
    frame, meta = generate(SyntheticSpec(args.kind, params, args.seed), args.T)
    out = Path(args.out)
    _outdir(out.parent if str(out.parent) else Path("."))
    write_csv(frame, out)
    out.with_suffix(".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    print(f"wrote {frame.T} rows x {frame.d} columns to {out}")
    return 0


def cmd_fit_backbone(args) -> int:
    out = _outdir(args.out)
    frame = load_csv(args.data)
    targets = _names(args.targets) or [frame.names[-1]]
    inputs = _names(args.inputs) or list(frame.names)
    splits = _floats(args.splits)
    ws = make_windows(frame, args.L, args.H, targets=targets, splits=splits, inputs=inputs)
    X, Y = ws.split("train")
    if len(X) == 0:
        raise CliError(EXIT_DATA, "the train split holds no complete window")
    spec = fc.fit_backbone(args.kind, X, Y, ridge=args.ridge, hidden=args.hidden, epochs=args.epochs,
                           seed=args.seed, period=args.period,
                           target_cols=tuple(inputs.index(t) for t in targets if t in inputs))
    manifest = {"kind": args.kind, "data": str(args.data), "L": args.L, "H": args.H,
                "targets": targets, "inputs": inputs, "splits": list(splits),
                "scaler": ws.scaler.to_dict(), "param_checksum": spec.checksum(),
                "config": _resolved(args)}
    _save_checkpoint(out, "backbone", fc.to_json(spec), manifest)
    report = {"train": point_metrics(forecast_array(None, spec, X), Y).to_dict()}
    Xt, Yt = ws.split("test")
    if len(Xt):
        report["test"] = point_metrics(forecast_array(None, spec, Xt), Yt).to_dict()
    _write_json(out / "report.json", report, args.canonical)
    _write_json(out / "run_config.json", _resolved(args), True)
    print(f"backbone {args.kind} checksum {spec.checksum()}")
    return 0


def _online_fit(model, spec, ws, frame, args):
    """One predict-then-update pass over the train block (used by ``train --online``)."""
    lo, hi = ws.row_ranges["train"]
    Z = ws.scaler.transform(frame.values)[lo:hi]
    cfg = _train_cfg(args, mode="online")
    in_idx = list(ws.input_cols)
    tg_idx = list(ws.target_cols)
    res = run_online(model, spec, InstrumentedStream(Z), cfg, in_idx, tg_idx)
    return res.trace, res.attestation


def cmd_train(args) -> int:
    if not 0.0 < args.delta <= 1.0:
        raise CliError(EXIT_CONFIG, f"--delta must lie in (0, 1], got {args.delta}")
    spec, bman = _load_backbone(args.backbone)
    out = _outdir(args.out)
    frame, ws = _windows(args.data or bman["data"], bman)
    model = _build_adapter(args, spec)
    joint = args.placement == "both"
    footer = None
    if args.online:
        trace, footer = _online_fit(model, spec, ws, frame, args)
    else:
        X, Y = ws.split("train")
        Xv, Yv = ws.split("val")
        _, trace = train_batch(model, spec, X, Y, _train_cfg(args, joint=joint, diagnostics=args.diagnostics),
                               Xv, Yv)
    trace.write_csv(out / "trace.csv", canonical=args.canonical, footer=footer)
    Xt, Yt = ws.split("test")
    frozen = point_metrics(forecast_array(None, spec, Xt), Yt)
    adapted = improvement(point_metrics(forecast_array(model, spec, Xt), Yt), frozen)
    _save_checkpoint(out, "adapter", model.to_json(),
                     {"backbone_checksum": spec.checksum(), "placement": args.placement,
                      "form": args.form, "delta": args.delta, "joint": joint, "config": _resolved(args)})
    report = {"frozen": frozen.to_dict(), "adapted": adapted.to_dict(), "placement": args.placement,
              "form": args.form, "delta": args.delta, "joint": joint, "online": args.online,
              "best_epoch": trace.best_epoch}
    if trace.descent:
        report["descent_batches"] = len(trace.descent)
    _write_json(out / "report.json", report, args.canonical)
    _write_json(out / "run_config.json", _resolved(args), True)
    print(f"frozen   mse={frozen.mse:.6g} mae={frozen.mae:.6g}")
    print(f"adapted  mse={adapted.mse:.6g} mae={adapted.mae:.6g} "
          f"improvement mse={display_pct(adapted.mse_improvement)} mae={display_pct(adapted.mae_improvement)}")
    return 0


def cmd_select(args) -> int:
    if not 0.0 < args.pinball_level < 1.0:
        raise CliError(EXIT_CONFIG, f"--pinball-level must lie in (0, 1), got {args.pinball_level}")
    spec, bman = _load_backbone(args.backbone)
    out = _outdir(args.out)
    _, ws = _windows(args.data or bman["data"], bman)
    X, Y = ws.split("train")
    Xv, Yv = ws.split("val")
    weights = SelectorLossWeights(l1=args.l1, ent=args.ent, tv=args.tv, bud=args.bud if args.budget else 0.0,
                                  group=args.group, kappa=args.budget or 1.0)
    sel = Selector(MaskNet(spec.L, spec.d, hidden=args.hidden, hardening=args.hardening, seed=args.seed),
                   weights, loss=args.loss, tau=args.pinball_level)
    # the selector carries its own prediction loss; the driver's loss field is unused
    _, trace = train_batch(sel, spec, X, Y, _train_cfg(args, loss="mse"), Xv, Yv)
    trace.write_csv(out / "trace.csv", canonical=args.canonical)
    ranking = rank_features(sel.net, Xv if len(Xv) else X)
    write_feature_report(ranking, out / "feature_report.csv", args.budget, bman["inputs"])
    _save_checkpoint(out, "selector", sel.net.to_json(),
                     {"backbone_checksum": spec.checksum(), "weights": weights.__dict__,
                      "config": _resolved(args)})
    selected = sorted({bman["inputs"][j] for t, j, imp in ranking.entries if imp > 0.5})
    report = {"mask_ratio": ranking.mask_ratio, "kappa": args.budget, "selected": selected,
              "column_importance": dict(zip(bman["inputs"], ranking.column_importance.tolist())),
              "untrained": ranking.untrained}
    _write_json(out / "report.json", report, args.canonical)
    _write_json(out / "run_config.json", _resolved(args), True)
    print(f"mask_ratio={ranking.mask_ratio:.4f} selected={','.join(selected)}")
    return 0


def cmd_calibrate(args) -> int:
    spec, bman = _load_backbone(args.backbone)
    out = _outdir(args.out)
    _, ws = _windows(args.data or bman["data"], bman)
    X, Y = ws.split("train")
    Xv, Yv = ws.split("val")
    Xc, Yc = ws.split("cal")
    Xt, Yt = ws.split("test")
    cfg = _train_cfg(args)
    P_test = forecast_array(None, spec, Xt)
    if args.method == "conformal":
        cc = ConformalCalibrator(spec.L, spec.d, spec.H, spec.m, alpha=args.alpha, mode=args.mode,
                                 lam_w=args.lam_w, scale_loss=args.scale_loss, seed=args.seed)
        fit_conformal_scale(cc, spec, X, Y, cfg)
        conformal_calibrate(cc, spec, Xc, Yc)
        iv = conformal_interval(cc, Xt, P_test)
        model_text = cc.to_json()
        report = calibration_metadata(cc, args.seed)
    else:
        qc = QuantileCalibrator(spec.L, spec.d, spec.H, spec.m, levels=_floats(args.levels), seed=args.seed)
        train_batch(qc, spec, X, Y, cfg, Xv, Yv)
        iv = quantile_fan(qc, Xt, P_test)
        model_text = qc.to_json()
        report = {"levels": list(qc.levels), "n_cal": 0, "kappa": None,
                  "nominal_coverage": qc.levels[-1] - qc.levels[0]}
    cover = interval_metrics(iv.lower, iv.upper, Yt, P_test)
    report.update(method=args.method, picp=cover.picp, mean_width=cover.mean_width,
                  width=iv.width_stats(), n_test=int(len(Xt)))
    write_interval_csv(iv, out / "intervals.csv")
    _save_checkpoint(out, "calibrator", model_text,
                     {"backbone_checksum": spec.checksum(), "method": args.method, "config": _resolved(args)})
    _write_json(out / "report.json", report, args.canonical)
    _write_json(out / "run_config.json", _resolved(args), True)
    print(f"{args.method}: picp={cover.picp:.4f} mean_width={cover.mean_width:.4f}")
    return 0


def cmd_eval(args) -> int:
    spec, bman = _load_backbone(args.backbone)
    out = _outdir(args.out)
    _, ws = _windows(args.data or bman["data"], bman)
    X, Y = ws.split(args.split)
    if len(X) == 0:
        raise CliError(EXIT_DATA, f"split {args.split!r} holds no complete window")
    frozen = point_metrics(_predict_chunks(None, spec, X, args.jobs), Y)
    report = {"split": args.split, "frozen": frozen.to_dict()}
    if args.adapter:
        model, _ = _load_adapter(args.adapter, spec)
        report["adapted"] = improvement(point_metrics(_predict_chunks(model, spec, X, args.jobs), Y),
                                        frozen).to_dict()
    _write_json(out / "metrics.json", report, args.canonical)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_online(args) -> int:
    spec, bman = _load_backbone(args.backbone)
    out = _outdir(args.out)
    frame, ws = _windows(args.data or bman["data"], bman)
    Z = ws.scaler.transform(frame.values)[args.start:]
    need = args.steps + spec.L + spec.H - 1
    if len(Z) < need:
        raise CliError(EXIT_DATA, f"--steps {args.steps} needs {need} rows from --start, have {len(Z)}")
    if args.unfreeze:
        # fine-tuning baseline: the backbone itself is updated, outside every guarantee
        model = UnfrozenBackbone(spec)
    elif args.adapter:
        model, _ = _load_adapter(args.adapter, spec)
    else:
        model = _build_adapter(args, spec)
    cfg = _train_cfg(args, mode="online")
    cols = dict(input_cols=list(ws.input_cols), target_cols=list(ws.target_cols))
    t0 = time.perf_counter()
    res = run_online(model, spec, InstrumentedStream(Z[:need]), cfg, steps=args.steps, **cols)
    wall = time.perf_counter() - t0
    frozen = run_online(None, spec, InstrumentedStream(Z[:need]), cfg, steps=args.steps, **cols)
    res.trace.write_csv(out / "online_trace.csv", canonical=args.canonical, footer=res.attestation)
    report = {"steps": int(len(res.steps)), "leakage_free": res.leakage_free,
              "attestation": res.attestation, "unfreeze": args.unfreeze,
              "cumulative_mse": res.cumulative_mse(), "frozen_cumulative_mse": frozen.cumulative_mse()}
    if not args.canonical:
        report["wall_seconds"] = round(wall, 3)
    if args.unfreeze:
        (out / "backbone_unfrozen.json").write_text(fc.to_json(model.freeze()))
    _write_json(out / "report.json", report, args.canonical)
    _write_json(out / "run_config.json", _resolved(args), True)
    print(res.attestation)
    print(f"cumulative mse online={report['cumulative_mse']:.6g} frozen={report['frozen_cumulative_mse']:.6g}")
    return 0 if res.leakage_free else 1


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--config", help="JSON file of option values; explicit flags win")
    p.add_argument("--seed", type=int, default=None, help="default: $DELTA_ADAPT_SEED or 0")
    p.add_argument("--out", default=out_default)
    p.add_argument("--canonical", action="store_true", help="omit timestamps so reports are byte-stable")


def _training(p: argparse.ArgumentParser, epochs: int = 20) -> None:
    p.add_argument("--backbone", required=True, help="backbone.json written by fit-backbone")
    p.add_argument("--data", help="CSV; defaults to the file recorded in the backbone manifest")
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--patience", type=int, default=5)


def _adapter_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--placement", choices=("in", "out", "both"), default="out")
    p.add_argument("--form", choices=tuple(FORMS), default="add")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--gate", action="store_true", help="per-horizon gate on the input-side contribution")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="delta-adapt", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic series as CSV")
    p.add_argument("--kind", required=True, choices=("bias", "ar_drift", "regime_shift", "planted_features",
                                                     "heteroscedastic", "exchangeable_gaussian"))
    p.add_argument("--T", type=int, default=2000)
    p.add_argument("--params", default="", help="generator parameters as a JSON object")
    _common(p, "data.csv")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit-backbone", help="fit and freeze a built-in forecaster")
    p.add_argument("--kind", choices=("linear_ar", "tiny_mlp", "seasonal_naive"), default="linear_ar")
    p.add_argument("--data", required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--H", type=int, required=True)
    p.add_argument("--targets", help="comma-separated target columns (default: last column)")
    p.add_argument("--inputs", help="comma-separated input columns (default: all)")
    p.add_argument("--splits", default="0.6,0.1,0.1,0.2", help="train,val,cal,test fractions")
    p.add_argument("--ridge", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--period", type=int, default=None)
    _common(p, "runs/backbone")
    p.set_defaults(func=cmd_fit_backbone)

    p = sub.add_parser("train", help="train an input, output or joint adapter")
    _training(p)
    _adapter_flags(p)
    p.add_argument("--loss", choices=("mse", "mae"), default="mse")
    p.add_argument("--online", action="store_true", help="one streaming pass over the train block")
    p.add_argument("--diagnostics", action="store_true", help="record per-batch descent witnesses")
    _common(p, "runs/adapter")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select", help="learn a sparse input mask and rank covariates")
    _training(p, epochs=30)
    p.add_argument("--budget", type=float, default=None, help="keep-rate budget kappa in (0, 1]")
    p.add_argument("--loss", choices=("mse", "mae", "pinball"), default="mse")
    p.add_argument("--pinball-level", type=float, default=0.5, help="quantile level of the pinball loss")
    p.add_argument("--bud", type=float, default=1.0, help="weight of the budget hinge")
    p.add_argument("--l1", type=float, default=1e-3)
    p.add_argument("--ent", type=float, default=1e-3)
    p.add_argument("--tv", type=float, default=1e-4)
    p.add_argument("--group", type=float, default=0.0)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--hardening", choices=("soft", "threshold", "straight_through"), default="soft")
    _common(p, "runs/selector")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("calibrate", help="fit a quantile fan or a conformal band")
    _training(p)
    p.add_argument("--method", choices=("conformal", "quantile"), default="conformal")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--mode", choices=("per_horizon", "joint"), default="per_horizon")
    p.add_argument("--lam-w", type=float, default=0.1)
    p.add_argument("--scale-loss", choices=("ratio", "nll"), default="ratio")
    p.add_argument("--levels", default="0.05,0.1,0.25,0.5,0.75,0.9,0.95")
    _common(p, "runs/calibrator")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="score the frozen (and optionally adapted) forecaster")
    p.add_argument("--backbone", required=True)
    p.add_argument("--data")
    p.add_argument("--adapter")
    p.add_argument("--split", choices=("train", "val", "cal", "test"), default="test")
    p.add_argument("--jobs", type=int, default=1, help="threads for evaluation only")
    _common(p, "runs/eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("online", help="leakage-probed predict-then-update stream")
    _training(p)
    _adapter_flags(p)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--start", type=int, default=0, help="first stream row")
    p.add_argument("--adapter", help="warm-start from a trained adapter checkpoint")
    p.add_argument("--unfreeze", action="store_true",
                   help="update the backbone itself (fine-tuning baseline, no guarantees)")
    _common(p, "runs/online")
    p.set_defaults(func=cmd_online)
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = ap.parse_args(argv)
    if not args.config:
        return args
    try:
        doc = json.loads(Path(args.config).read_text())
    except OSError as e:
        raise CliError(EXIT_CONFIG, f"cannot read config {args.config}: {e}") from e
    except json.JSONDecodeError as e:
        raise CliError(EXIT_CONFIG, f"config {args.config} is not valid JSON: {e}") from e
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    unknown = sorted(set(doc) - set(vars(args)))
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown config keys for {args.command}: {', '.join(unknown)}")
    subs = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
    sub = copy.deepcopy(subs.choices[args.command])
    sub.set_defaults(**doc)
    return sub.parse_args(argv[argv.index(args.command) + 1:], namespace=argparse.Namespace(command=args.command))


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(ap, argv)
        args.seed = _seed(args)
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
