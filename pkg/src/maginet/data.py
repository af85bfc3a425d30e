"""Ingestion, synthetic generation, masking, windowing, and normalization.

The masking protocol: a single evaluation mask is drawn over the whole
series (only at natively observed positions) and persisted, then windows
slice it. A window's observation mask m is 1 where a real value is
visible to the model; eval_mask is 1 at artificially hidden positions
whose ground truth is retained for supervision and scoring. Positions
that were missing in the raw data belong to neither.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InputError
from .graph import TrafficGraph

MISSING_TOKENS = {"", "nan"}


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    """Split a CSV into leading comment lines and data rows."""
    comments: list[str] = []
    rows: list[list[str]] = []
    with open(path, newline="") as handle:
        for raw in csv.reader(handle):
            if not rows and raw and raw[0].startswith("#"):
                comments.append(",".join(raw))
            elif raw:
                rows.append(raw)
    return comments, rows


@dataclass(frozen=True)
class SeriesMatrix:
    """Raw multivariate series, NaN marking natively missing entries."""

    values: np.ndarray  # (n_nodes, n_steps, n_features)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 3:
            raise ContractError(f"series values must be (nodes, steps, features), got {vals.shape}")
        if np.isinf(vals).any():
            raise InputError("series contains infinite values")
        missing = np.isnan(vals)
        mixed = missing.any(axis=2) & ~missing.all(axis=2)
        if mixed.any():
            n, t = np.argwhere(mixed)[0]
            raise InputError(f"node {n} step {t}: features must be missing together")
        object.__setattr__(self, "values", vals)
        self.values.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]

    def observed(self) -> np.ndarray:
        """(nodes, steps) boolean: True where the raw series has a value."""
        return ~np.isnan(self.values).any(axis=2)


@dataclass(frozen=True)
class IncompleteWindow:
    """One training/evaluation sample sliced from a series.

    x holds zeros wherever m = 0; the model contract is that those
    entries are never read, which the invariance tests fuzz.
    """

    x: np.ndarray            # (n_nodes, width, n_features)
    m: np.ndarray            # (n_nodes, width) in {0,1}: 1 = observed
    eval_mask: np.ndarray    # (n_nodes, width) in {0,1}: 1 = hidden, truth known
    ground_truth: np.ndarray  # (n_nodes, width, n_features), valid where eval_mask = 1
    window_start: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        m = np.asarray(self.m, dtype=np.float64)
        ev = np.asarray(self.eval_mask, dtype=np.float64)
        gt = np.asarray(self.ground_truth, dtype=np.float64)
        if x.ndim != 3 or gt.shape != x.shape or m.shape != x.shape[:2] or ev.shape != x.shape[:2]:
            raise ContractError(
                f"window shapes inconsistent: x {x.shape}, m {m.shape}, eval {ev.shape}, gt {gt.shape}"
            )
        for name, mask in (("m", m), ("eval_mask", ev)):
            if not np.isin(mask, (0.0, 1.0)).all():
                raise ContractError(f"{name} must be 0/1")
        if (m * ev).any():
            raise ContractError("a position cannot be both observed and held out")
        if not np.isfinite(x).all():
            raise InputError("window features must be finite (convert NaNs to masked entries upstream)")
        for key, val in (("x", x), ("m", m), ("eval_mask", ev), ("ground_truth", gt)):
            object.__setattr__(self, key, val)
            val.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def width(self) -> int:
        return self.x.shape[1]

    @property
    def n_features(self) -> int:
        return self.x.shape[2]

    def held_out_count(self) -> int:
        return int(self.eval_mask.sum())


# -- masking ---------------------------------------------------------------


def mcar_mask(n_entries: int, ratio: float, seed: int) -> np.ndarray:
    """0/1 vector hiding exactly floor(ratio * n_entries) positions.

    Exact-count sampling via a seeded permutation, not per-entry coin
    flips, so the realized ratio is exact and reruns are bit-identical.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ContractError(f"missing ratio must lie in [0, 1], got {ratio}")
    if n_entries < 0:
        raise ContractError("n_entries must be nonnegative")
    hide = int(math.floor(ratio * n_entries + 1e-9))
    keep = np.ones(n_entries, dtype=np.int8)
    order = np.random.default_rng(seed).permutation(n_entries)
    keep[order[:hide]] = 0
    return keep


def draw_eval_mask(series: SeriesMatrix, ratio: float, seed: int) -> np.ndarray:
    """(nodes, steps) 0/1 mask, 1 at positions hidden for evaluation."""
    observed = series.observed()
    flat_idx = np.flatnonzero(observed.ravel())
    keep = mcar_mask(flat_idx.size, ratio, seed)
    mask = np.zeros(observed.size, dtype=np.int8)
    mask[flat_idx[keep == 0]] = 1
    return mask.reshape(observed.shape)


# -- windowing ---------------------------------------------------------------


def make_windows(series: SeriesMatrix, eval_mask: np.ndarray, width: int, stride: int) -> list[IncompleteWindow]:
    """Slice the series and a whole-series eval mask into windows."""
    if width > series.n_steps:
        raise InputError(f"window width {width} exceeds {series.n_steps} steps")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    eval_mask = np.asarray(eval_mask)
    if eval_mask.shape != (series.n_nodes, series.n_steps):
        raise ContractError(
            f"eval mask shape {eval_mask.shape} does not match series ({series.n_nodes}, {series.n_steps})"
        )
    observed = series.observed()
    if (eval_mask.astype(bool) & ~observed).any():
        raise ContractError("eval mask hides positions that were never observed")
    windows = []
    for start in range(0, series.n_steps - width + 1, stride):
        stop = start + width
        vals = series.values[:, start:stop, :]
        ev = eval_mask[:, start:stop].astype(np.float64)
        m = observed[:, start:stop].astype(np.float64) * (1.0 - ev)
        x = np.where(m[:, :, None] == 1.0, vals, 0.0)
        gt = np.where(ev[:, :, None] == 1.0, vals, 0.0)
        windows.append(IncompleteWindow(x=x, m=m, eval_mask=ev, ground_truth=gt, window_start=start))
    return windows


def window(series: SeriesMatrix, width: int, stride: int, *, eval_mask: np.ndarray | None = None,
           ratio: float = 0.0, seed: int = 0) -> list[IncompleteWindow]:
    """Windowing entry point; draws a fresh MCAR mask unless one is given."""
    if eval_mask is None:
        eval_mask = draw_eval_mask(series, ratio, seed)
    return make_windows(series, eval_mask, width, stride)


def split(windows: list, fractions: tuple[float, float, float]) -> tuple[list, list, list]:
    """Contiguous chronological train/valid/test split.

    Validation and test counts are floored; the remainder goes to train.
    """
    train_frac, valid_frac, test_frac = fractions
    if min(fractions) < 0:
        raise ContractError(f"split fractions must be nonnegative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"split fractions must sum to 1, got {fractions}")
    n = len(windows)
    n_valid = int(math.floor(valid_frac * n + 1e-9))
    n_test = int(math.floor(test_frac * n + 1e-9))
    n_train = n - n_valid - n_test
    return (
        list(windows[:n_train]),
        list(windows[n_train:n_train + n_valid]),
        list(windows[n_train + n_valid:]),
    )


# -- normalization ------------------------------------------------------------


@dataclass(frozen=True)
class Normalizer:
    """Per-feature z-score statistics from observed training entries only."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.maximum(np.asarray(self.std, dtype=np.float64).reshape(-1), 1e-8)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def fit(cls, windows: list[IncompleteWindow]) -> "Normalizer":
        if not windows:
            raise ContractError("cannot fit a normalizer on an empty window list")
        n_features = windows[0].n_features
        mean = np.zeros(n_features)
        std = np.ones(n_features)
        for c in range(n_features):
            pooled = np.concatenate([w.x[:, :, c][w.m == 1.0] for w in windows])
            if pooled.size:
                mean[c] = pooled.mean()
                std[c] = pooled.std()
        return cls(mean=mean, std=std)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def normalize_window(self, w: IncompleteWindow) -> IncompleteWindow:
        x = np.where(w.m[:, :, None] == 1.0, self.transform(w.x), 0.0)
        gt = np.where(w.eval_mask[:, :, None] == 1.0, self.transform(w.ground_truth), 0.0)
        return IncompleteWindow(x=x, m=w.m, eval_mask=w.eval_mask, ground_truth=gt,
                                window_start=w.window_start)


# -- synthetic data ------------------------------------------------------------


def synthetic_graph(n_nodes: int, extra_edges: int = 0, seed: int = 0) -> TrafficGraph:
    """Ring lattice plus a few seeded random chords, unit weights."""
    if n_nodes < 2:
        raise ContractError(f"synthetic graph needs at least 2 nodes, got {n_nodes}")
    adj = np.zeros((n_nodes, n_nodes))
    for i in range(n_nodes):
        j = (i + 1) % n_nodes
        adj[i, j] = adj[j, i] = 1.0
    rng = np.random.default_rng(seed)
    added = 0
    attempts = 0
    while added < extra_edges and attempts < 50 * max(1, extra_edges):
        attempts += 1
        i, j = rng.integers(0, n_nodes, 2)
        if i != j and adj[i, j] == 0.0:
            adj[i, j] = adj[j, i] = 1.0
            added += 1
    return TrafficGraph(adj)


def generate_synthetic(n_nodes: int, n_steps: int, graph: TrafficGraph, seed: int, *,
                       period: int = 288, amplitude: float = 10.0, offset: float = 20.0,
                       noise: float = 0.05, phases: np.ndarray | None = None) -> SeriesMatrix:
    """Daily sinusoids with node phases, one diffusion step, seeded noise.

    Each node follows offset + amplitude*sin(2*pi*t/period + phase), then
    one smoothing step x <- 0.7x + 0.3*A_hat x with the row-normalized
    adjacency (isolated nodes keep their own signal), then Gaussian noise
    with sigma = noise * amplitude. The offset keeps values positive so
    MAPE stays defined.
    """
    if graph.n_nodes != n_nodes:
        raise ContractError(f"graph has {graph.n_nodes} nodes, expected {n_nodes}")
    rng = np.random.default_rng(seed)
    if phases is None:
        phases = rng.uniform(0.0, 2.0 * np.pi, n_nodes)
    t = np.arange(n_steps)
    base = offset + amplitude * np.sin(2.0 * np.pi * t[None, :] / period + np.asarray(phases)[:, None])
    deg = graph.degree
    a_hat = np.where(deg[:, None] > 0, graph.adjacency / np.where(deg[:, None] > 0, deg[:, None], 1.0), 0.0)
    isolated = deg == 0
    a_hat[isolated, :] = 0.0
    a_hat[isolated, isolated] = 1.0
    smooth = 0.7 * base + 0.3 * (a_hat @ base)
    if noise > 0:
        smooth = smooth + rng.normal(0.0, noise * amplitude, smooth.shape)
    return SeriesMatrix(values=smooth[:, :, None])


# -- CSV formats ---------------------------------------------------------------


def _fmt(value: float) -> str:
    return "" if math.isnan(value) else repr(float(value))


def save_series_csv(path, series: SeriesMatrix, comment: str | None = None) -> None:
    """Header node{i}_f{j} (nodes repeated per feature), one row per step."""
    n, steps, c = series.n_nodes, series.n_steps, series.n_features
    with open(path, "w", newline="") as handle:
        if comment:
            handle.write(f"# {comment}\n")
        header = [f"node{i}_f{j}" for j in range(c) for i in range(n)]
        handle.write(",".join(header) + "\n")
        for t in range(steps):
            cells = [_fmt(series.values[i, t, j]) for j in range(c) for i in range(n)]
            handle.write(",".join(cells) + "\n")


_COLUMN = re.compile(r"^node(\d+)_f(\d+)$")


def load_series_csv(path) -> SeriesMatrix:
    _, rows = _read_rows(path)
    if not rows:
        raise InputError(f"{path}: empty series file")
    header = [c.strip() for c in rows[0]]
    parsed = []
    for col in header:
        m = _COLUMN.match(col)
        if not m:
            raise InputError(f"{path}: unrecognized column name {col!r}")
        parsed.append((int(m.group(1)), int(m.group(2))))
    n = max(p[0] for p in parsed) + 1
    c = max(p[1] for p in parsed) + 1
    if len(parsed) != n * c or sorted(parsed) != [(i, j) for i in range(n) for j in range(c)]:
        raise InputError(f"{path}: header does not cover a full node x feature grid")
    steps = len(rows) - 1
    values = np.full((n, steps, c), np.nan)
    for t, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise InputError(f"{path}: row {t + 2} has {len(row)} cells, expected {len(header)}")
        for k, cell in enumerate(row):
            token = cell.strip()
            if token.lower() in MISSING_TOKENS:
                continue
            node, feat = parsed[k]
            try:
                values[node, t, feat] = float(token)
            except ValueError:
                raise InputError(f"{path}: row {t + 2} column {k + 1}: non-numeric cell {cell!r}") from None
    return SeriesMatrix(values=values)


def save_mask_csv(path, mask: np.ndarray, seed: int, ratio: float, comment: str | None = None) -> None:
    """Persist an eval mask (nodes x steps), one row per step like the series."""
    mask = np.asarray(mask)
    n, steps = mask.shape
    with open(path, "w", newline="") as handle:
        if comment:
            handle.write(f"# {comment}\n")
        handle.write(f"# seed={seed} ratio={repr(float(ratio))}\n")
        handle.write(",".join(f"node{i}" for i in range(n)) + "\n")
        for t in range(steps):
            handle.write(",".join(str(int(mask[i, t])) for i in range(n)) + "\n")


def load_mask_csv(path) -> tuple[np.ndarray, int | None, float | None]:
    comments, rows = _read_rows(path)
    seed = ratio = None
    for line in comments:
        m = re.search(r"seed=(-?\d+)\s+ratio=([-+0-9.eE]+)", line)
        if m:
            seed, ratio = int(m.group(1)), float(m.group(2))
    if not rows:
        raise InputError(f"{path}: empty mask file")
    n = len(rows[0])
    data = []
    for t, row in enumerate(rows[1:]):
        if len(row) != n:
            raise InputError(f"{path}: row {t + 2} has {len(row)} cells, expected {n}")
        try:
            data.append([int(cell) for cell in row])
        except ValueError:
            raise InputError(f"{path}: row {t + 2}: mask cells must be 0/1") from None
    mask = np.array(data, dtype=np.int8).T
    if not np.isin(mask, (0, 1)).all():
        raise InputError(f"{path}: mask cells must be 0/1")
    return mask, seed, ratio
