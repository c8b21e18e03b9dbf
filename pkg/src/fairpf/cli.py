"""Command-line driver: simulate, gen, sweep, frontier, fit, extrapolate, audit, verify.

Every artifact lands in one output directory and records the SHA-256 of the
files it was built from, so a stale upstream file is caught before it is
consumed again.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import audit as audit_mod
from .closed_form import DomainError, ShapeConstants, default_delta_grid, sweep_shape
from .dgp import DgpConfig, GenerationError, generate, load_external, save_dataset
from .fitting import FitError, FitProblem, extrapolate, fit, load_fit, observations_from_curves, save_fit
from .frontier import FrontierError, budget_envelope, cells, frontier_points, lower_convex_hull, read_curve, write_curve
from .nn_core import MlpArchitecture
from .theory import run_suite
from .training import SweepConfig, default_lambda_grid, read_points, run_sweep

log = logging.getLogger("fairpf")

CONFIG_SCHEMA = {
    "seed": None,
    "output_dir": None,
    "dgp": {"n_samples", "x_dim", "pi", "zeta", "g_seed", "data_seed", "mode", "path"},
    "sweep": {"architectures", "lambda_grid", "n_lambdas", "seeds", "epochs", "batch_size", "lr", "train_sizes", "workers", "checkpoints"},
    "frontier": {"average_seeds"},
    "fit": {"mode", "fixed", "n_starts", "seed", "decoupled", "cells"},
    "audit": {"loss", "delta", "n_plus", "d_plus", "label"},
}
PATH_KEYS = {("dgp", "path")}

DATASET = "dataset.csv"
DATASET_META = "dataset.json"
POINTS = "points.csv"
FRONTIER_DIR = "frontiers"
FIT = "fit.json"
AUDIT = "audit.txt"


class ConfigError(ValueError):
    pass


class StaleInputError(RuntimeError):
    pass


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_config(path) -> dict:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for key, val in doc.items():
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{path}: unknown key {key!r}")
        allowed = CONFIG_SCHEMA[key]
        if allowed is None:
            continue
        if not isinstance(val, dict):
            raise ConfigError(f"{path}: section {key!r} must be a mapping")
        bad = set(val) - allowed
        if bad:
            raise ConfigError(f"{path}: unknown key(s) in [{key}]: {', '.join(sorted(bad))}")
    base = path.parent
    for sec, key in PATH_KEYS:
        if key in doc.get(sec, {}):
            doc[sec][key] = str((base / doc[sec][key]).resolve())
    if "output_dir" in doc:
        doc["output_dir"] = str((base / doc["output_dir"]).resolve())
    return doc


def _get(args, cfg, section, key, default=None, flag=None):
    v = getattr(args, flag or key, None)
    if v is not None:
        return v
    v = cfg.get(section, {}).get(key)
    return default if v is None else v


def _floats(text):
    if text is None or isinstance(text, list):
        return text
    return [float(t) for t in str(text).split(",") if t.strip()]


def _ints(text):
    if text is None or isinstance(text, list):
        return text
    return [int(t) for t in str(text).split(",") if t.strip()]


def _rel(path, base) -> str:
    return os.path.relpath(Path(path).resolve(), Path(base).resolve())


def check_upstream(upstream: list[tuple[str, str]], base, force: bool) -> None:
    """Refuse to continue if a recorded input changed since it was consumed."""
    for rel, digest in upstream:
        p = Path(base) / rel
        if not p.exists():
            log.warning("upstream file %s is gone; provenance cannot be re-checked", p)
            continue
        now = file_digest(p)
        if now != digest:
            msg = f"{p} changed since it was used (recorded {digest[:12]}, now {now[:12]}); rerun the upstream step or pass --force"
            if not force:
                raise StaleInputError(msg)
            log.warning("%s", msg)


def _require(path, what):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing {what}: {path} (run the upstream subcommand first)")


# ---------------------------------------------------------------- simulate

def cmd_simulate(args, cfg, out: Path) -> int:
    base = {"c": args.c, "c_prime": args.c_prime, "c_double_prime": args.c_double_prime, "b": args.b}
    sweeps = [(k, _floats(v)) for k, v in (("c", args.sweep_c), ("c_prime", args.sweep_c_prime), ("c_double_prime", args.sweep_c_double_prime)) if v]
    settings = [(None, None, base)]
    if sweeps:
        settings = [(k, v, {**base, k: v}) for k, vals in sweeps for v in vals]
    # validate everything before writing anything
    plans = []
    for k, v, params in settings:
        try:
            consts = ShapeConstants(**params)
            grid = default_delta_grid(consts.c_double_prime, args.grid_points)
        except (ValueError, DomainError) as exc:
            raise ConfigError(f"invalid shape constants {params}: {exc}") from None
        plans.append((k, v, consts, grid))
    out.mkdir(parents=True, exist_ok=True)
    for k, v, consts, grid in plans:
        exact, env = sweep_shape(grid, consts)
        stem = "shape" if k is None else f"shape_{k}_{v!r}"
        write_curve(exact, out / f"{stem}_exact.csv")
        write_curve(env, out / f"{stem}_envelope.csv")
        print(f"wrote {stem}_exact.csv {stem}_envelope.csv")
    return 0


# ---------------------------------------------------------------- gen

def _dgp_config(args, cfg) -> DgpConfig:
    seed = cfg.get("seed", 0)
    try:
        return DgpConfig(
            n_samples=int(_get(args, cfg, "dgp", "n_samples", 10_000)),
            x_dim=int(_get(args, cfg, "dgp", "x_dim", 20)),
            pi=float(_get(args, cfg, "dgp", "pi", 0.2)),
            zeta=float(_get(args, cfg, "dgp", "zeta", 0.5)),
            g_seed=int(_get(args, cfg, "dgp", "g_seed", seed)),
            data_seed=int(_get(args, cfg, "dgp", "data_seed", seed)),
            mode=_get(args, cfg, "dgp", "mode", "projected"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_gen(args, cfg, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    path = _get(args, cfg, "dgp", "path", flag="input")
    if path:
        data = load_external(path, data_seed=int(_get(args, cfg, "dgp", "data_seed", cfg.get("seed", 0))))
        meta = {"kind": "external", "source": str(Path(path).name), "source_digest": file_digest(path), "data_seed": data.seed}
    else:
        config = _dgp_config(args, cfg)
        data = generate(config)
        meta = {"kind": "synthetic", "config": asdict(config)}
    save_dataset(data, out / DATASET)
    meta["digest"] = file_digest(out / DATASET)
    meta["sizes"] = {s: int(data.indices(s).size) for s in ("train", "val", "test")}
    (out / DATASET_META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"dataset {len(data)} rows -> {out / DATASET} sha256={meta['digest']}")
    return 0


def load_dataset_artifact(out: Path):
    """Dataset file plus its sidecar, restoring synthetic provenance."""
    path = out / DATASET
    _require(path, "dataset")
    meta_path = out / DATASET_META
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    if meta.get("digest") and meta["digest"] != file_digest(path):
        raise StaleInputError(f"{path} does not match the digest recorded in {meta_path}; regenerate it")
    if meta.get("kind") == "synthetic":
        config = DgpConfig(**meta["config"])
        data = load_external(path, data_seed=config.data_seed)
        data.provenance = {"kind": "synthetic", "config": meta["config"]}
    else:
        data = load_external(path, data_seed=int(meta.get("data_seed", 0)))
    return data


# ---------------------------------------------------------------- sweep

def _architectures(args, cfg, x_dim):
    archs = args.arch or cfg.get("sweep", {}).get("architectures") or [[80, 80], [160, 160], [320, 320], [640, 640]]
    out = []
    for a in archs:
        sizes = _ints(a) if isinstance(a, str) else [int(v) for v in a]
        out.append(MlpArchitecture(x_dim, tuple(sizes)))
    return out


def cmd_sweep(args, cfg, out: Path) -> int:
    data = load_dataset_artifact(out)
    data_digest = file_digest(out / DATASET)
    points_path = out / POINTS
    if points_path.exists():
        meta = _comment_meta(points_path)
        if meta.get("dataset_digest") not in (None, data_digest) and not args.force:
            raise StaleInputError(f"{points_path} was produced from a different dataset; delete it or pass --force")
    grid = _floats(_get(args, cfg, "sweep", "lambda_grid", flag="lambdas"))
    if grid is None:
        grid = default_lambda_grid(int(_get(args, cfg, "sweep", "n_lambdas", 100)))
    sizes = _ints(_get(args, cfg, "sweep", "train_sizes")) or [None]
    try:
        config = SweepConfig(
            architectures=_architectures(args, cfg, data.x_dim),
            lambda_grid=grid,
            seeds=_ints(_get(args, cfg, "sweep", "seeds", [0, 1, 2])),
            epochs=int(_get(args, cfg, "sweep", "epochs", 30)),
            batch_size=int(_get(args, cfg, "sweep", "batch_size", 256)),
            lr=float(_get(args, cfg, "sweep", "lr", 0.001)),
            train_sizes=sizes,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ckpt = out / "checkpoints" if _get(args, cfg, "sweep", "checkpoints", False) else None
    result = run_sweep(
        config, data, points_path, ckpt,
        workers=_get(args, cfg, "sweep", "workers", None),
        header_meta={"dataset": DATASET, "dataset_digest": data_digest},
    )
    print(f"sweep: {result.n_trained} trained, {result.n_skipped} already present, {len(result.failures)} failed")
    for key, msg in result.failures:
        print(f"  failed {key}: {msg}")
    return 1 if result.failures else 0


def _comment_meta(path) -> dict:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
    return meta


# ---------------------------------------------------------------- frontier

def cmd_frontier(args, cfg, out: Path) -> int:
    points_path = out / POINTS
    _require(points_path, "sweep results")
    meta = _comment_meta(points_path)
    if "dataset_digest" in meta:
        check_upstream([(meta.get("dataset", DATASET), meta["dataset_digest"])], out, args.force)
    points = read_points(points_path)
    avg = bool(_get(args, cfg, "frontier", "average_seeds", False))
    fdir = out / FRONTIER_DIR
    fdir.mkdir(parents=True, exist_ok=True)
    digest = file_digest(points_path)
    for n, d in cells(points):
        pts = frontier_points(points, n, d, average_seeds=avg)
        src = {"n_params": n, "d_train": d, "seed_averaged": avg}
        hull = lower_convex_hull(pts, src)
        env = budget_envelope(hull)
        extra = {"points": _rel(points_path, fdir), "points_digest": digest}
        write_curve(hull, fdir / f"frontier_{n}_{d}_exact.csv", extra)
        write_curve(env, fdir / f"frontier_{n}_{d}_envelope.csv", extra)
        print(f"N={n} D={d}: {len(pts)} points, {len(hull)} hull vertices, min loss {env.losses.min():.6f}")
    return 0


# ---------------------------------------------------------------- fit

def _fixed(args, cfg) -> dict:
    fixed = dict(cfg.get("fit", {}).get("fixed", {"c3": 0.5, "c4": 0.5}))
    for item in args.pin or []:
        k, _, v = item.partition("=")
        fixed[k.strip().lower()] = float(v)
    for k in args.free or []:
        fixed.pop(k.strip().lower(), None)
    return {k.lower(): float(v) for k, v in fixed.items()}


def cmd_fit(args, cfg, out: Path) -> int:
    if args.frontier:
        paths = [Path(p) for p in args.frontier]
    else:
        paths = [Path(p) for p in sorted(glob.glob(str(out / FRONTIER_DIR / "frontier_*_exact.csv")))]
        want = _get(args, cfg, "fit", "cells")
        if want:
            want = {str(c) for c in (want if isinstance(want, list) else str(want).split(","))}
            paths = [p for p in paths if "{}:{}".format(*p.stem.split("_")[1:3]) in want]
    if not paths:
        raise FileNotFoundError(f"no frontier files to fit (looked in {out / FRONTIER_DIR})")
    curves, inputs = [], []
    for p in paths:
        curve, meta = read_curve(p)
        if "points_digest" in meta:
            check_upstream([(meta["points"], meta["points_digest"])], p.parent, args.force)
        curves.append(curve)
        inputs.append({"path": _rel(p, out), "digest": file_digest(p)})
    try:
        problem = FitProblem(
            observations_from_curves(curves),
            fixed=_fixed(args, cfg),
            mode=_get(args, cfg, "fit", "mode", "least_squares"),
            n_starts=int(_get(args, cfg, "fit", "n_starts", 32)),
            seed=int(_get(args, cfg, "fit", "seed", cfg.get("seed", 0))),
            decoupled=bool(_get(args, cfg, "fit", "decoupled", False)),
        )
    except FitError as exc:
        raise ConfigError(str(exc)) from None
    result = fit(problem)
    extra = {"inputs": inputs}
    meta_path = out / DATASET_META
    if meta_path.exists():
        dmeta = json.loads(meta_path.read_text())
        if dmeta.get("kind") == "synthetic":
            # the group rate is the natural reference for C5; shown, never enforced
            extra["pi_reference"] = dmeta["config"]["pi"]
    save_fit(result, out / FIT, extra)
    print(result.summary_line())
    return 0


def _load_fit_checked(out: Path, force: bool):
    path = out / FIT
    _require(path, "fit result")
    result, doc = load_fit(path)
    check_upstream([(i["path"], i["digest"]) for i in doc.get("inputs", [])], out, force)
    return result, file_digest(path)


# ---------------------------------------------------------------- extrapolate

def cmd_extrapolate(args, cfg, out: Path) -> int:
    result, fit_digest = _load_fit_checked(out, args.force)
    n_plus = int(_get(args, cfg, "audit", "n_plus"))
    d_plus = int(_get(args, cfg, "audit", "d_plus"))
    exact, env = extrapolate(result.constants, n_plus, d_plus)
    extra = {"fit": FIT, "fit_digest": fit_digest, "fit_mode": result.mode}
    stem = f"extrapolated_{n_plus}_{d_plus}"
    write_curve(exact, out / f"{stem}_exact.csv", extra)
    write_curve(env, out / f"{stem}_envelope.csv", extra)
    print(f"N+={n_plus} D+={d_plus}: envelope minimum {env.losses.min():.6f} at delta {env.deltas[np.argmin(exact.losses)]:.4f}")
    return 0


# ---------------------------------------------------------------- audit

def cmd_audit(args, cfg, out: Path) -> int:
    result, fit_digest = _load_fit_checked(out, args.force)
    try:
        contested = audit_mod.ContestedModel(
            loss=float(_get(args, cfg, "audit", "loss")),
            delta=float(_get(args, cfg, "audit", "delta")),
            n_plus=int(_get(args, cfg, "audit", "n_plus")),
            d_plus=int(_get(args, cfg, "audit", "d_plus")),
            label=str(_get(args, cfg, "audit", "label", "contested")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"audit needs loss, delta, n_plus and d_plus: {exc}") from None
    report = audit_mod.delta_distance(contested, result.constants)
    report.provenance.update({"fit": FIT, "fit_digest": fit_digest})
    (out / AUDIT).write_text(report.to_text())
    print(report.summary_line())
    return 0


# ---------------------------------------------------------------- verify

def cmd_verify(args, cfg, out: Path) -> int:
    lines = run_suite(args.instances, int(cfg.get("seed", 0)) if args.seed is None else args.seed)
    for line in lines:
        print(line)
    return 0 if all(line.passed for line in lines) else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "gen": cmd_gen,
    "sweep": cmd_sweep,
    "frontier": cmd_frontier,
    "fit": cmd_fit,
    "extrapolate": cmd_extrapolate,
    "audit": cmd_audit,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fairpf", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--out", help="output directory (default: config output_dir or ./fairpf_out)")
    ap.add_argument("--force", action="store_true", help="continue even if an upstream artifact changed")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="closed-form frontier curves for given shape constants")
    p.add_argument("--c", type=float, default=0.2)
    p.add_argument("--c-prime", type=float, default=0.5)
    p.add_argument("--c-double-prime", type=float, default=0.8)
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--sweep-c")
    p.add_argument("--sweep-c-prime")
    p.add_argument("--sweep-c-double-prime")
    p.add_argument("--grid-points", type=int, default=512)

    p = sub.add_parser("gen", help="generate (or import) the dataset")
    for name, typ in (("n-samples", int), ("x-dim", int), ("pi", float), ("zeta", float), ("g-seed", int), ("data-seed", int)):
        p.add_argument(f"--{name}", type=typ)
    p.add_argument("--mode", choices=("independent", "projected"))
    p.add_argument("--input", help="external CSV instead of the synthetic generator")

    p = sub.add_parser("sweep", help="train the (architecture, lambda, seed) grid")
    p.add_argument("--arch", action="append", help="hidden sizes, e.g. 80,80 (repeatable)")
    p.add_argument("--lambdas", help="comma-separated lambda values")
    p.add_argument("--n-lambdas", type=int)
    p.add_argument("--seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--train-sizes", help="comma-separated training-set sizes (nested prefixes)")
    p.add_argument("--workers", type=int)
    p.add_argument("--checkpoints", action="store_true", default=None)

    p = sub.add_parser("frontier", help="lower convex hull and budget envelope per (N, D)")
    p.add_argument("--average-seeds", action="store_true", default=None)

    p = sub.add_parser("fit", help="fit C1..C7 to the frontier vertices")
    p.add_argument("--frontier", action="append", help="frontier file(s); default: all in the output dir")
    p.add_argument("--cells", help="restrict to N:D cells, comma-separated")
    p.add_argument("--mode", choices=("least_squares", "lower_bound"))
    p.add_argument("--pin", action="append", help="pin a constant, e.g. c3=0.7")
    p.add_argument("--free", action="append", help="unpin a constant, e.g. c3")
    p.add_argument("--n-starts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--decoupled", action="store_true", default=None)

    for name, helptext in (("extrapolate", "frontier at the contested model's scale"), ("audit", "delta-distance of a contested model")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--n-plus", type=int)
        p.add_argument("--d-plus", type=int)
        if name == "audit":
            p.add_argument("--loss", type=float)
            p.add_argument("--delta", type=float)
            p.add_argument("--label")

    p = sub.add_parser("verify", help="run the theory oracle suite")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else {}
        out = Path(args.out or cfg.get("output_dir") or "fairpf_out")
        return COMMANDS[args.command](args, cfg, out)
    except (ConfigError, StaleInputError, FileNotFoundError, GenerationError, FitError, FrontierError, DomainError, ValueError) as exc:
        print(f"fairpf {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
