"""Synthetic and file-backed datasets with a binary group and binary label.

Labels follow ``P(Y=1 | X, A) = sigmoid(g(X) - zeta * A)`` where ``g`` is a
fixed random 20->[32]->1 ReLU network.  The group is either an independent
Bernoulli draw or a thresholded random projection of the first two features.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .nn_core import MlpArchitecture, MlpModel, init_model, logits

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.65, 0.15, 0.20)
G_HIDDEN = (32,)


class GenerationError(ValueError):
    pass


class DatasetParseError(ValueError):
    pass


@dataclass(frozen=True)
class DgpConfig:
    n_samples: int = 10_000
    x_dim: int = 20
    pi: float = 0.2
    zeta: float = 0.5
    g_seed: int = 0
    data_seed: int = 0
    mode: str = "projected"

    def __post_init__(self):
        if not 0.0 < self.pi < 1.0:
            raise ValueError(f"pi must lie in (0, 1), got {self.pi}")
        if self.zeta < 0:
            raise ValueError(f"zeta must be >= 0, got {self.zeta}")
        if self.n_samples < 10:
            raise ValueError(f"n_samples must be >= 10, got {self.n_samples}")
        if self.x_dim < 2 and self.mode == "projected":
            raise ValueError("projected mode needs x_dim >= 2")
        if self.mode not in ("independent", "projected"):
            raise ValueError(f"mode must be 'independent' or 'projected', got {self.mode!r}")


@dataclass
class Dataset:
    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    split: np.ndarray  # int codes indexing SPLITS
    provenance: dict = field(default_factory=dict)
    seed: int = 0

    def __len__(self):
        return self.X.shape[0]

    @property
    def x_dim(self) -> int:
        return self.X.shape[1]

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLITS.index(split))

    def part(self, split: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = self.indices(split)
        return self.X[idx], self.A[idx], self.Y[idx]

    def train_indices(self, d_train: int | None = None) -> np.ndarray:
        """Training rows in a fixed shuffled order; smaller ``d_train`` values
        give nested prefixes of the same order."""
        idx = self.indices("train")
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x7A1]))
        idx = idx[rng.permutation(idx.size)]
        if d_train is None:
            return idx
        if not 1 <= d_train <= idx.size:
            raise ValueError(f"d_train={d_train} outside [1, {idx.size}]")
        return idx[:d_train]

    @property
    def is_synthetic(self) -> bool:
        return self.provenance.get("kind") == "synthetic"

    def dgp_config(self) -> DgpConfig:
        if not self.is_synthetic:
            raise ValueError("dataset was not generated synthetically")
        return DgpConfig(**self.provenance["config"])


def label_network(config: DgpConfig) -> MlpModel:
    """The fixed g network: x_dim -> [32] -> 1 ReLU, seeded by ``g_seed``."""
    arch = MlpArchitecture(config.x_dim, G_HIDDEN, group_input=False)
    return init_model(arch, np.random.SeedSequence([config.g_seed, 0x9]).generate_state(1)[0])


def bayes_optimal_score(config: DgpConfig, X, A, zeta: float | None = None) -> np.ndarray:
    """sigmoid(g(x) - zeta * a); ``zeta`` defaults to the config's own."""
    z = config.zeta if zeta is None else zeta
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    A = np.asarray(A, dtype=np.float64).reshape(-1)
    return expit(logits(label_network(config), X) - z * A)


def _projection_groups(config: DgpConfig, X: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([config.g_seed, 0xA]))
    w = rng.standard_normal(2)
    b = rng.standard_normal()
    score = X[:, :2] @ w + b
    # top-k by score is the empirical (1 - pi) quantile threshold, realized exactly
    k = int(round(config.pi * X.shape[0]))
    A = np.zeros(X.shape[0])
    A[np.argsort(score, kind="stable")[X.shape[0] - k:]] = 1.0
    return A


def stratified_split(A: np.ndarray, Y: np.ndarray, seed: int) -> np.ndarray:
    """65/15/20 split done separately inside every (A, Y) cell."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5]))
    split = np.empty(A.shape[0], dtype=np.int8)
    for a in (0, 1):
        for y in (0, 1):
            cell = np.flatnonzero((A == a) & (Y == y))
            cell = cell[rng.permutation(cell.size)]
            n_train = int(round(SPLIT_FRACTIONS[0] * cell.size))
            n_val = int(round(SPLIT_FRACTIONS[1] * cell.size))
            split[cell[:n_train]] = 0
            split[cell[n_train:n_train + n_val]] = 1
            split[cell[n_train + n_val:]] = 2
    return split


def _check_groups(data: Dataset, hint: str) -> None:
    for code, name in enumerate(SPLITS):
        groups = set(np.unique(data.A[data.split == code]).tolist())
        if groups != {0.0, 1.0}:
            missing = sorted({0, 1} - {int(g) for g in groups})
            raise GenerationError(f"{name} split has no rows with a={missing}; {hint}")


def generate(config: DgpConfig) -> Dataset:
    ss = np.random.SeedSequence([config.data_seed, 0x1])
    rng_x, rng_a, rng_y = (np.random.default_rng(s) for s in ss.spawn(3))
    X = rng_x.standard_normal((config.n_samples, config.x_dim))
    if config.mode == "projected":
        A = _projection_groups(config, X)
    else:
        A = (rng_a.random(config.n_samples) < config.pi).astype(np.float64)
    p1 = bayes_optimal_score(config, X, A)
    Y = (rng_y.random(config.n_samples) < p1).astype(np.float64)
    data = Dataset(
        X, A, Y, stratified_split(A, Y, config.data_seed),
        provenance={"kind": "synthetic", "config": asdict(config)},
        seed=config.data_seed,
    )
    _check_groups(data, "increase n_samples or move pi away from 0 and 1")
    return data


def save_dataset(data: Dataset, path) -> None:
    """Write the comma-separated dataset file, split column included."""
    d = data.x_dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(d)] + ["a", "y", "split"])
        for x, a, y, s in zip(data.X, data.A, data.Y, data.split):
            w.writerow([repr(float(v)) for v in x] + [int(a), int(y), SPLITS[s]])


def load_external(path, x_dim: int | None = None, data_seed: int = 0) -> Dataset:
    """Read ``x0,...,x{d-1},a,y[,split]``; missing split column means an
    automatic stratified split seeded by ``data_seed``."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    xcols = [h for h in header if h.startswith("x")]
    d = len(xcols)
    if d == 0 or xcols != [f"x{i}" for i in range(d)]:
        raise DatasetParseError(f"{path}: expected feature columns x0..x{{d-1}}, got {xcols}")
    if x_dim is not None and d != x_dim:
        raise DatasetParseError(f"{path}: expected {x_dim} feature columns, found {d}")
    for col in ("a", "y"):
        if col not in header:
            raise DatasetParseError(f"{path}: missing column {col!r}")
    ia, iy = header.index("a"), header.index("y")
    isplit = header.index("split") if "split" in header else None
    ix = [header.index(c) for c in xcols]

    X, A, Y, split = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            x = [float(row[i]) for i in ix]
        except ValueError as exc:
            raise DatasetParseError(f"{path}:{lineno}: bad feature value ({exc})") from None
        if not all(np.isfinite(x)):
            raise DatasetParseError(f"{path}:{lineno}: non-finite feature value")
        for name, i, dest in (("a", ia, A), ("y", iy, Y)):
            if row[i].strip() not in ("0", "1"):
                raise DatasetParseError(f"{path}:{lineno}: column {name} must be 0 or 1, got {row[i]!r}")
            dest.append(float(row[i]))
        if isplit is not None:
            tag = row[isplit].strip()
            if tag not in SPLITS:
                raise DatasetParseError(f"{path}:{lineno}: split must be one of {SPLITS}, got {tag!r}")
            split.append(SPLITS.index(tag))
        X.append(x)
    if not X:
        raise DatasetParseError(f"{path}: no data rows")
    X = np.asarray(X)
    A = np.asarray(A)
    Y = np.asarray(Y)
    split = np.asarray(split, dtype=np.int8) if isplit is not None else stratified_split(A, Y, data_seed)
    data = Dataset(
        X, A, Y, split,
        provenance={"kind": "external", "path": path.name, "auto_split": isplit is None},
        seed=data_seed,
    )
    return data
