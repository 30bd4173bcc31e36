"""Command-line entry point: ``groupclip <subcommand>``.

Exit codes: 0 success, 1 a verification suite failed, 2 invalid input,
3 a training run diverged.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .accountant import (DEFAULT_ALPHAS, CalibrationError, PrivacyLedger, calibrate_sigma,
                         epsilon_curve)
from .clipping import PlanError, parse_plan_spec
from .config import ConfigError, RunConfig
from .engine import Network, forward, load_arch
from .memory import CONVENTIONS, SearchSizeError, analytic_peaks, boundary_sweep, plan_search
from .schedule import FLOAT_BYTES, RunError, train
from .tensor import RngState
from .theory import fit_loglog_slope
from .verify import FAST_SUITES, SUITES

SCHEMA = 1
OUTPUT_ENV = "GROUPCLIP_OUTPUT_DIR"
DEFAULT_OUTPUT = "groupclip-runs"


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _emit(text: str, out: str | None) -> None:
    if out:
        _write(Path(out), text)
    else:
        sys.stdout.write(text)


def _accuracy(net: Network, X, Y) -> float:
    out = forward(net, X, Y).output
    return float(np.mean(np.argmax(out, axis=-1) == np.asarray(Y)))


# train

def cmd_train(args) -> int:
    try:
        cfg = RunConfig.load(args.config)
        data = cfg.dataset()
        arch = cfg.architecture(data)
        plans = cfg.grouping_plans(arch)
        X, Y = data
        n = len(X)
        if cfg.batch_size > n:
            raise ConfigError(f"batch_size: {cfg.batch_size} exceeds dataset size {n}")
        try:
            forward(Network.init(arch, RngState(0)), X[:1], None if Y is None else Y[:1])
        except ValueError as exc:
            raise ConfigError(f"arch: incompatible with the data ({exc})") from exc
    except ConfigError as exc:
        raise InputError(str(exc)) from exc
    steps = cfg.steps if cfg.steps is not None else cfg.epochs * (n // cfg.batch_size)
    try:
        if cfg.target_eps is not None:
            sigma = calibrate_sigma(cfg.target_eps, cfg.delta, steps)
        else:
            sigma = cfg.sigma
    except CalibrationError as exc:
        raise InputError(f"target_eps: {exc}") from exc
    epsilon = None
    if sigma > 0:
        epsilon = min(e for _, e in epsilon_curve(PrivacyLedger(sigma, steps, cfg.delta)))
    out_dir = Path(args.out or cfg.output_dir or os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))
    classify = arch.loss == "softmax-cross-entropy"
    runs = []
    for label, plan in plans:
        for seed in cfg.seeds:
            net = Network.init(arch, RngState(seed))
            try:
                traj = train(net, data, plan, cfg.clip_config, sigma, cfg.optimizer,
                             epochs=cfg.epochs, lr=cfg.lr, rng=RngState(seed),
                             batch_size=cfg.batch_size,
                             virtual_batch_size=cfg.virtual_batch_size,
                             weight_decay=cfg.weight_decay, steps=steps,
                             grad_norm=cfg.grad_norm)
            except RunError as exc:
                print(f"error: run {label} seed {seed} diverged at step {exc.step}: {exc}",
                      file=sys.stderr)
                return 3
            name = f"{label}_seed{seed}.csv"
            _write(out_dir / name, traj.to_csv())
            last = traj.records[-1]
            run = {"plan": label, "style": plan.style, "M": plan.M,
                   "groups": [list(g) for g in plan.groups], "seed": seed, "csv": name,
                   "final_loss": last.loss, "min_grad_norm": float(traj.grad_norms.min()),
                   "final_grad_norm": last.grad_norm, "max_peak_bytes": last.max_peak_bytes,
                   "group_peaks_bytes": last.group_peaks}
            if classify:
                run["final_accuracy"] = _accuracy(net, X, Y)
            runs.append(run)
    summary = {"schema": SCHEMA, "kind": "train", "config": cfg.to_dict(), "steps": steps,
               "sigma_dp": sigma, "delta": cfg.delta, "epsilon": epsilon, "runs": runs}
    _write(out_dir / "summary.json", _dump(summary))
    print(f"wrote {len(runs)} trajectories and summary.json to {out_dir}")
    return 0


# profile

def cmd_profile(args) -> int:
    try:
        arch = load_arch(args.arch)
    except FileNotFoundError as exc:
        raise InputError(f"no such architecture file: {args.arch}") from exc
    except (ValueError, KeyError) as exc:
        raise InputError(f"{args.arch}: {exc}") from exc
    B = args.batch
    if B < 1:
        raise InputError("--batch must be positive")

    def row(p, rep, **extra):
        return {**extra, "style": p.style, "M": p.M,
                "groups": [list(g) for g in p.groups],
                "peaks": [float(p) for p in rep.per_group_peaks],
                "peaks_bytes": [p * FLOAT_BYTES for p in rep.per_group_peaks],
                "max_peak": float(rep.max_peak), "max_peak_bytes": rep.max_peak * FLOAT_BYTES,
                "argmax": rep.argmax}

    doc = {"schema": SCHEMA, "kind": "profile", "batch_size": B,
           "convention": args.convention, "float_bytes": FLOAT_BYTES, "plans": []}
    specs = args.plan or ([] if args.sweep or args.search else ["all-layer"])
    try:
        for spec in specs:
            plan = parse_plan_spec(spec, arch.num_layers)
            doc["plans"].append(row(plan, analytic_peaks(arch, plan, B, args.convention),
                                    plan=spec))
        if args.sweep:
            doc["sweep"] = [{"boundary": k, "max_peak": float(rep.max_peak),
                             "max_peak_bytes": rep.max_peak * FLOAT_BYTES,
                             "peaks": [float(p) for p in rep.per_group_peaks]}
                            for k, rep in boundary_sweep(arch, B, args.convention)]
        if args.search:
            found = plan_search(arch, B, args.search, args.max_groups, args.convention)
            doc["search"] = {"mode": args.search,
                             "ranked": [row(p, r) for p, r in found[:args.top]]}
    except (PlanError, SearchSizeError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    if args.csv:
        if "sweep" not in doc:
            raise InputError("--csv needs --sweep")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["boundary", "max_peak", "max_peak_bytes"])
        for r in doc["sweep"]:
            w.writerow([r["boundary"], repr(r["max_peak"]), r["max_peak_bytes"]])
        _write(Path(args.csv), buf.getvalue())
    _emit(_dump(doc), args.out)
    return 0


# verify

def cmd_verify(args) -> int:
    names = []
    for s in args.suites or ["all"]:
        names.extend(FAST_SUITES if s == "all" else [s])
    names = list(dict.fromkeys(names))
    results = []
    for name in names:
        kwargs = {}
        if args.trials is not None:
            kwargs["trials"] = args.trials
        if args.seed is not None:
            kwargs["seed"] = args.seed
        if name == "fact1" and args.layers is not None:
            if not 1 <= args.layers:
                raise InputError("--layers must be positive")
            kwargs["layers"] = args.layers
        if name == "lemma" and args.samples is not None:
            kwargs["samples"] = args.samples
        if name == "convergence" and args.steps is not None:
            kwargs["steps"] = args.steps
        res = SUITES[name](**kwargs)
        results.append(res)
        print(f"{'PASS' if res.passed else 'FAIL'} {res.name}: {res.summary}")
        for line in res.lines:
            if line != res.summary:
                print(f"    {line}")
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} suites passed")
    if args.out:
        _write(Path(args.out), _dump({"schema": SCHEMA, "kind": "verify",
                                      "suites": [r.to_dict() for r in results]}))
    return 0 if passed == len(results) else 1


# plotdata

def _load_summary(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise InputError(f"no such summary: {path}") from exc
    if not text.strip():
        raise InputError(f"{path}: empty summary")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or not doc:
        raise InputError(f"{path}: empty summary")
    return doc


def _convergence_data(doc: dict) -> dict | None:
    if doc.get("kind") == "verify":
        for s in doc.get("suites", []):
            if s.get("name") == "convergence":
                return s.get("data")
        return None
    if doc.get("kind") == "convergence":
        return doc
    return None


def _metric_rows(doc: dict, metrics) -> list[tuple]:
    rows = []
    if doc.get("kind") == "train":
        for r in doc.get("runs", []):
            for m in metrics:
                if m in r:
                    rows.append((r["M"], r["plan"], r["seed"], m, r[m]))
    else:
        data = _convergence_data(doc)
        for r in (data or {}).get("trend", {}).get("runs", []):
            for m in metrics:
                if m in r:
                    rows.append((r["M"], r["label"], r["seed"], m, r[m]))
    return sorted(rows, key=lambda t: (t[0], t[1], t[2], t[3]))


def cmd_plotdata(args) -> int:
    doc = _load_summary(args.summary)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if args.kind == "convergence":
        data = _convergence_data(doc)
        rate = (data or {}).get("rate")
        if not rate or not rate.get("T_values"):
            raise InputError(f"{args.summary}: no convergence data")
        w.writerow(["T", "seed", "min_grad_norm"])
        for T in rate["T_values"]:
            for seed, v in enumerate(rate["min_grad_norms"][str(T)]):
                w.writerow([T, seed, repr(v)])
        slope = fit_loglog_slope(rate["T_values"], rate["medians"])
        buf.write(f"# fitted_slope={slope!r}\n")
    else:
        metrics = (["max_peak_bytes"] if args.kind == "peak-vs-M"
                   else ["final_accuracy", "final_loss", "min_grad_norm"])
        rows = _metric_rows(doc, metrics)
        if not rows:
            raise InputError(f"{args.summary}: empty summary")
        w.writerow(["M", "plan", "seed", "metric", "value"])
        for M, plan, seed, metric, value in rows:
            w.writerow([M, plan, seed, metric, repr(value) if isinstance(value, float)
                        else value])
    _emit(buf.getvalue(), args.out)
    return 0


# privacy accounting

def _alphas(text: str | None):
    if text is None:
        return DEFAULT_ALPHAS
    try:
        alphas = tuple(float(a) for a in text.split(",") if a.strip())
    except ValueError as exc:
        raise InputError(f"--alphas: {exc}") from exc
    if not alphas or any(not a > 1 for a in alphas):
        raise InputError("--alphas: need a non-empty list of orders above 1")
    return alphas


def _merge_json(args, keys) -> None:
    if not args.input:
        return
    try:
        doc = json.loads(Path(args.input).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"--input: {exc}") from exc
    for k in keys:
        if getattr(args, k) is None and k in doc:
            v = doc[k]
            setattr(args, k, ",".join(map(str, v)) if k == "alphas" and isinstance(v, list)
                    else v)
    missing = [k for k in keys if k != "alphas" and getattr(args, k) is None]
    if missing:
        raise InputError(f"missing {missing}")


def cmd_account(args) -> int:
    _merge_json(args, ["sigma", "steps", "delta", "alphas"])
    if None in (args.sigma, args.steps, args.delta):
        raise InputError("account needs --sigma, --steps and --delta")
    try:
        ledger = PrivacyLedger(float(args.sigma), int(args.steps), float(args.delta),
                               alphas=_alphas(args.alphas))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    alpha, eps = min(epsilon_curve(ledger), key=lambda t: t[1])
    if args.json:
        _emit(_dump({"schema": SCHEMA, "kind": "account", "sigma": ledger.sigma,
                     "steps": ledger.steps, "delta": ledger.delta, "epsilon": eps,
                     "alpha": alpha}), None)
    else:
        print(repr(eps))
    return 0


def cmd_calibrate(args) -> int:
    _merge_json(args, ["eps", "steps", "delta", "alphas"])
    if None in (args.eps, args.steps, args.delta):
        raise InputError("calibrate needs --eps, --steps and --delta")
    alphas = _alphas(args.alphas)
    try:
        sigma = calibrate_sigma(float(args.eps), float(args.delta), int(args.steps), alphas)
        eps = min(e for _, e in epsilon_curve(
            PrivacyLedger(sigma, int(args.steps), float(args.delta), alphas=alphas)))
    except (CalibrationError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    if args.json:
        _emit(_dump({"schema": SCHEMA, "kind": "calibrate", "target_eps": float(args.eps),
                     "steps": int(args.steps), "delta": float(args.delta), "sigma": sigma,
                     "epsilon": eps}), None)
    else:
        print(repr(sigma))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="groupclip",
                                 description="Group-wise clipping for private training.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train every (plan, seed) of a run config")
    p.add_argument("config", help="JSON run configuration")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or "
                                 f"{DEFAULT_OUTPUT})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("profile", help="analytic memory peaks of grouping plans")
    p.add_argument("arch", help="architecture JSON file")
    p.add_argument("--plan", action="append",
                   help="plan spec such as all-layer, uniform:3 or non-uniform:6 (repeatable)")
    p.add_argument("--batch", "-B", type=int, default=1)
    p.add_argument("--sweep", action="store_true", help="two-group boundary sweep")
    p.add_argument("--search", choices=["two-group-sweep", "exhaustive", "balanced-greedy"])
    p.add_argument("--max-groups", type=int)
    p.add_argument("--top", type=int, default=10, help="plans to report from --search")
    p.add_argument("--convention", choices=CONVENTIONS, default="ledger")
    p.add_argument("--csv", help="also write the sweep as CSV")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("verify", help="run self-check suites")
    p.add_argument("suites", nargs="*", choices=["all", *SUITES], metavar="SUITE",
                   help=f"one or more of: all, {', '.join(SUITES)}")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--layers", type=int, help="fixed layer count for fact1")
    p.add_argument("--samples", type=int, help="Monte Carlo draws per lower-bound configuration")
    p.add_argument("--steps", type=int, help="private steps for convergence")
    p.add_argument("--out", help="write a JSON report")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plotdata", help="tidy CSV from a summary for external plotting")
    p.add_argument("summary", help="train summary.json or verify report")
    p.add_argument("--kind", required=True,
                   choices=["accuracy-vs-M", "peak-vs-M", "convergence"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("account", help="epsilon of repeated Gaussian steps")
    p.add_argument("--sigma", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--alphas", help="comma-separated RDP orders")
    p.add_argument("--input", help="JSON document with the same fields")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_account)

    p = sub.add_parser("calibrate", help="noise multiplier for a target epsilon")
    p.add_argument("--eps", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--alphas", help="comma-separated RDP orders")
    p.add_argument("--input", help="JSON document with the same fields")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_calibrate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
