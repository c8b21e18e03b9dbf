"""Linear-scalarization training runs and sweeps over (architecture, lambda, seed)."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dgp import Dataset
from .metrics import bce_from_scores, dp_gap_from_scores, evaluate
from .nn_core import (
    AdamState,
    MlpArchitecture,
    NumericError,
    ScalarizedLoss,
    adam_step,
    backward,
    forward,
    init_model,
    param_count,
    save_checkpoint,
)

log = logging.getLogger(__name__)

RESULTS_HEADER = ["n_params", "d_train", "lambda", "seed", "train_bce", "val_bce", "test_bce", "test_dp"]

__all__ = [
    "ScalarizedLoss",
    "TrainHyper",
    "TrainedPoint",
    "SweepConfig",
    "SweepResult",
    "TrainingError",
    "default_lambda_grid",
    "train_one",
    "run_sweep",
    "read_points",
]


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 0.001

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError(f"invalid training hyperparameters {self}")


@dataclass
class TrainedPoint:
    n_params: int
    d_train: int
    lam: float
    seed: int
    train_bce: float
    val_bce: float
    test_bce: float
    test_dp: float
    checkpoint_ref: str | None = None
    hidden_sizes: tuple[int, ...] | None = None
    best_epoch: int | None = None

    @property
    def key(self) -> tuple:
        return (self.n_params, self.d_train, repr(float(self.lam)), self.seed)

    def row(self) -> list[str]:
        return [
            str(self.n_params), str(self.d_train), repr(float(self.lam)), str(self.seed),
            repr(self.train_bce), repr(self.val_bce), repr(self.test_bce), repr(self.test_dp),
        ]


def default_lambda_grid(n: int = 100, negative_share: float = 0.6) -> list[float]:
    """``n`` scalarization weights over [-3, 5], denser on the negative side.

    ``round(n * negative_share)`` values are uniform on [-3, 0) and the rest
    uniform on [0, 5] (60 and 40 for the default n=100).
    """
    n_neg = int(round(n * negative_share))
    neg = np.linspace(-3.0, 0.0, n_neg, endpoint=False)
    pos = np.linspace(0.0, 5.0, n - n_neg)
    return [float(v) for v in np.concatenate([neg, pos])]


def _run_seeds(arch: MlpArchitecture, seed: int) -> tuple[int, np.random.Generator]:
    ss = np.random.SeedSequence([int(seed), arch.input_dim, *arch.hidden_sizes])
    init_ss, shuffle_ss = ss.spawn(2)
    return int(init_ss.generate_state(1)[0]), np.random.default_rng(shuffle_ss)


def train_one(
    dataset: Dataset,
    arch: MlpArchitecture,
    loss: ScalarizedLoss,
    seed: int,
    hyper: TrainHyper = TrainHyper(),
    d_train: int | None = None,
    checkpoint_path=None,
) -> TrainedPoint:
    """Train one model and report the best-validation-BCE epoch on the test split.

    Initialization and batch order depend only on (arch, seed), so runs that
    differ only in lambda start from the same weights.
    """
    if arch.input_dim != dataset.x_dim:
        raise ValueError(f"architecture expects {arch.input_dim} features, dataset has {dataset.x_dim}")
    tr = dataset.train_indices(d_train)
    Xtr, Atr, Ytr = dataset.X[tr], dataset.A[tr], dataset.Y[tr]
    Xv, Av, Yv = dataset.part("val")

    init_seed, rng = _run_seeds(arch, seed)
    model = init_model(arch, init_seed)
    state = AdamState.for_model(model, lr=hyper.lr)

    best, best_val, best_epoch = model.copy(), math.inf, 0
    best_total, best_total_epoch = math.inf, 0
    n = tr.size
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, hyper.batch_size)):
            idx = order[start:start + hyper.batch_size]
            try:
                value, grads = backward(model, Xtr[idx], Atr[idx], Ytr[idx], loss)
            except NumericError as exc:
                raise TrainingError(f"diverged at epoch {epoch}, batch {b}: {exc}", epoch, b) from exc
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            adam_step(model, grads, state)
        sv = forward(model, Xv, Av)
        val_bce = bce_from_scores(sv, Yv)
        val_total = val_bce + loss.lam * dp_gap_from_scores(sv, Av)
        if val_bce < best_val:
            best, best_val, best_epoch = model.copy(), val_bce, epoch
        if val_total < best_total:
            best_total, best_total_epoch = val_total, epoch
    log.debug(
        "arch=%s lam=%r seed=%d: best epoch by val BCE %d, by scalarized val loss %d",
        arch.tag, loss.lam, seed, best_epoch, best_total_epoch,
    )

    test = evaluate(best, dataset, "test")
    train_bce = bce_from_scores(forward(best, Xtr, Atr), Ytr)
    ref = None
    if checkpoint_path is not None:
        save_checkpoint(best, checkpoint_path)
        ref = str(checkpoint_path)
    return TrainedPoint(
        n_params=param_count(arch).n_params,
        d_train=int(n),
        lam=float(loss.lam),
        seed=int(seed),
        train_bce=train_bce,
        val_bce=best_val,
        test_bce=test.bce,
        test_dp=test.dp_gap,
        checkpoint_ref=ref,
        hidden_sizes=arch.hidden_sizes,
        best_epoch=best_epoch,
    )


@dataclass
class SweepConfig:
    architectures: list[MlpArchitecture]
    lambda_grid: list[float] = field(default_factory=default_lambda_grid)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    epochs: int = 30
    batch_size: int = 256
    lr: float = 0.001
    train_sizes: list[int | None] = field(default_factory=lambda: [None])

    def __post_init__(self):
        if not self.architectures:
            raise ValueError("sweep needs at least one architecture")
        if not self.lambda_grid:
            raise ValueError("sweep needs a non-empty lambda grid")
        if not self.seeds:
            raise ValueError("sweep needs at least one seed")
        if not self.train_sizes:
            raise ValueError("train_sizes must be non-empty (use [None] for the full split)")
        if not all(math.isfinite(v) for v in self.lambda_grid):
            raise ValueError("lambda grid must be finite")
        self.hyper  # validates epochs / batch size / lr

    @property
    def hyper(self) -> TrainHyper:
        return TrainHyper(self.epochs, self.batch_size, self.lr)

    def jobs(self):
        for arch in self.architectures:
            for d in self.train_sizes:
                for lam in self.lambda_grid:
                    for seed in self.seeds:
                        yield arch, d, float(lam), int(seed)


@dataclass
class SweepResult:
    points: list[TrainedPoint]
    failures: list[tuple[tuple, str]]
    n_trained: int
    n_skipped: int


def read_points(path) -> list[TrainedPoint]:
    """Parse a results file; lines starting with '#' are metadata."""
    points = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames != RESULTS_HEADER:
        raise ValueError(f"{path}: expected header {','.join(RESULTS_HEADER)}, got {reader.fieldnames}")
    for row in reader:
        points.append(TrainedPoint(
            int(row["n_params"]), int(row["d_train"]), float(row["lambda"]), int(row["seed"]),
            float(row["train_bce"]), float(row["val_bce"]), float(row["test_bce"]), float(row["test_dp"]),
        ))
    return points


def _checkpoint_name(arch, d_train, lam, seed) -> str:
    return f"mlp_{arch.tag}_d{d_train}_lam{float(lam)!r}_s{seed}.json"


_WORKER_DATA: Dataset | None = None


def _init_worker(dataset):
    global _WORKER_DATA
    _WORKER_DATA = dataset


def _job(arch, d_train, lam, seed, hyper, ckpt):
    return train_one(_WORKER_DATA, arch, ScalarizedLoss(lam), seed, hyper, d_train, ckpt)


def run_sweep(
    config: SweepConfig,
    dataset: Dataset,
    results_path=None,
    checkpoint_dir=None,
    workers: int | None = 1,
    header_meta: dict | None = None,
) -> SweepResult:
    """Train every (arch, d_train, lambda, seed) combination.

    Rows are appended to ``results_path`` as runs finish.  Rows already in the
    file are skipped, so an interrupted sweep can be resumed.  A failing run
    is recorded and the sweep carries on.
    """
    hyper = config.hyper
    full_train = dataset.indices("train").size
    existing: dict[tuple, TrainedPoint] = {}
    if results_path is not None and Path(results_path).exists():
        existing = {p.key: p for p in read_points(results_path)}

    todo, n_skipped = [], 0
    for arch, d, lam, seed in config.jobs():
        n_params = param_count(arch).n_params
        key = (n_params, full_train if d is None else d, repr(lam), seed)
        if key in existing:
            n_skipped += 1
        else:
            todo.append((key, (arch, d, lam, seed)))

    out = None
    if results_path is not None:
        new_file = not Path(results_path).exists()
        out = open(results_path, "a", newline="")
        writer = csv.writer(out, lineterminator="\n")
        if new_file:
            for k, v in (header_meta or {}).items():
                out.write(f"# {k}={v}\n")
            writer.writerow(RESULTS_HEADER)
            out.flush()
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    def ckpt(arch, d, lam, seed):
        if checkpoint_dir is None:
            return None
        return str(Path(checkpoint_dir) / _checkpoint_name(arch, full_train if d is None else d, lam, seed))

    new_points, failures = [], []

    def record(key, result):
        if isinstance(result, BaseException):
            log.warning("run %s failed: %s", key, result)
            failures.append((key, str(result)))
            return
        new_points.append(result)
        if out is not None:
            writer.writerow(result.row())
            out.flush()

    try:
        n_workers = workers or os.cpu_count() or 1
        if n_workers <= 1 or len(todo) <= 1:
            for key, (arch, d, lam, seed) in todo:
                try:
                    res = train_one(dataset, arch, ScalarizedLoss(lam), seed, hyper, d, ckpt(arch, d, lam, seed))
                except (TrainingError, ValueError, ArithmeticError) as exc:
                    res = exc
                record(key, res)
        else:
            with ProcessPoolExecutor(n_workers, initializer=_init_worker, initargs=(dataset,)) as pool:
                futs = {
                    pool.submit(_job, arch, d, lam, seed, hyper, ckpt(arch, d, lam, seed)): key
                    for key, (arch, d, lam, seed) in todo
                }
                for fut in as_completed(futs):
                    try:
                        res = fut.result()
                    except Exception as exc:  # worker errors are reported, not fatal
                        res = exc
                    record(futs[fut], res)
    finally:
        if out is not None:
            out.close()

    points = list(existing.values()) + new_points
    points.sort(key=lambda p: (p.n_params, p.d_train, p.lam, p.seed))
    if failures:
        log.warning("%d of %d runs failed", len(failures), len(todo))
    return SweepResult(points, failures, len(new_points), n_skipped)
