"""Metrics, statistical baselines, sensitivity sweeps, and ablation runs.

RMSE and MAPE are computed only over held-out positions (the evaluation
mask) in original data units. Baselines receive the same windows the
model sees, with held-out entries zeroed and m = 0, so nothing can read
ground truth it should not.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import IncompleteWindow, Normalizer, SeriesMatrix, draw_eval_mask, make_windows, split
from .errors import ContractError, EmptyMaskError, InputError
from .graph import TrafficGraph
from .model import VARIANT_TOGGLES, MagiNet, ModelConfig

MAPE_FLOOR = 1e-6  # |truth| below this is excluded from MAPE


def _select(yhat, y, mask):
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mask = np.asarray(mask) != 0
    if mask.shape == yhat.shape[:-1]:
        mask = np.broadcast_to(mask[..., None], yhat.shape)
    if mask.shape != yhat.shape or y.shape != yhat.shape:
        raise ContractError(
            f"metric shapes disagree: yhat {yhat.shape}, y {y.shape}, mask {mask.shape}"
        )
    if not mask.any():
        raise EmptyMaskError("metric requested over an empty mask")
    return yhat[mask], y[mask]


def rmse(yhat, y, mask) -> float:
    predicted, truth = _select(yhat, y, mask)
    return float(np.sqrt(np.mean((predicted - truth) ** 2)))


def mape(yhat, y, mask) -> float:
    """Mean absolute percentage error (in percent) over the masked entries."""
    predicted, truth = _select(yhat, y, mask)
    keep = np.abs(truth) >= MAPE_FLOOR
    if not keep.any():
        raise EmptyMaskError("all ground-truth magnitudes below the MAPE floor")
    return float(100.0 * np.mean(np.abs((predicted[keep] - truth[keep]) / truth[keep])))


def pooled_metrics(preds, truths, masks) -> tuple[float, float]:
    """RMSE/MAPE with every held-out entry pooled across windows."""
    chosen_p, chosen_t = [], []
    for yhat, y, mask in zip(preds, truths, masks):
        mask = np.asarray(mask) != 0
        if not mask.any():
            continue
        sel = np.broadcast_to(mask[..., None], np.asarray(yhat).shape)
        chosen_p.append(np.asarray(yhat)[sel])
        chosen_t.append(np.asarray(y)[sel])
    if not chosen_p:
        raise EmptyMaskError("no held-out entries in any window")
    predicted = np.concatenate(chosen_p)
    truth = np.concatenate(chosen_t)
    root = float(np.sqrt(np.mean((predicted - truth) ** 2)))
    keep = np.abs(truth) >= MAPE_FLOOR
    pct = float(100.0 * np.mean(np.abs((predicted[keep] - truth[keep]) / truth[keep]))) if keep.any() else 0.0
    return root, pct


# -- baselines ---------------------------------------------------------------


def mean_baseline(window: IncompleteWindow) -> np.ndarray:
    """Fill every hidden entry with its node's observed mean.

    Nodes with no observations fall back to the window-global observed
    mean; a window with no observations at all is an input error.
    """
    m3 = window.m[:, :, None]
    total_observed = window.m.sum()
    if total_observed == 0:
        raise InputError("mean baseline needs at least one observed entry")
    global_mean = (window.x * m3).sum(axis=(0, 1)) / total_observed
    node_count = window.m.sum(axis=1)[:, None]
    node_sum = (window.x * m3).sum(axis=1)
    node_mean = np.where(node_count > 0, node_sum / np.where(node_count > 0, node_count, 1.0),
                         global_mean)
    return np.where(m3 == 1.0, window.x, node_mean[:, None, :])


def node_distances(window: IncompleteWindow) -> np.ndarray:
    """Root-mean-square distance over co-observed steps; inf when none."""
    m = window.m
    co = m[:, None, :] * m[None, :, :]                       # (N, N, W)
    diff = window.x[:, None, :, :] - window.x[None, :, :, :]  # (N, N, W, C)
    sq = (diff * diff).sum(axis=3) * co
    count = co.sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.sqrt(sq.sum(axis=2) / count)
    dist[count == 0] = np.inf
    np.fill_diagonal(dist, np.inf)  # a node is not its own neighbor
    return dist


def knn_baseline(window: IncompleteWindow, k: int) -> np.ndarray:
    """Fill hidden entries from the k nearest nodes observed at that step."""
    n = window.n_nodes
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if k >= n:
        raise ContractError(f"k must be below the node count ({n}), got {k}")
    dist = node_distances(window)
    fallback = mean_baseline(window)
    out = np.array(window.x)
    order = np.argsort(dist, axis=1, kind="stable")
    for i in range(n):
        ranked = [j for j in order[i] if np.isfinite(dist[i, j])]
        for t in np.flatnonzero(window.m[i] == 0.0):
            neighbors = [j for j in ranked if window.m[j, t] == 1.0][:k]
            if neighbors:
                out[i, t, :] = window.x[neighbors, t, :].mean(axis=0)
            else:
                out[i, t, :] = fallback[i, t, :]
    return out


# -- reports -----------------------------------------------------------------


REPORT_COLUMNS = ["method", "dataset", "ratio", "seed", "rmse", "mape", "runtime_s"]


@dataclass
class ReportRow:
    method: str
    dataset: str
    ratio: float
    seed: int
    rmse: float
    mape: float
    runtime_s: float

    def as_list(self) -> list:
        return [self.method, self.dataset, repr(float(self.ratio)), self.seed,
                repr(float(self.rmse)), repr(float(self.mape)), repr(float(self.runtime_s))]


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)

    def to_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as handle:
            if comment:
                handle.write(f"# {comment}\n")
            handle.write(",".join(REPORT_COLUMNS) + "\n")
            for row in self.rows:
                handle.write(",".join(str(cell) for cell in row.as_list()) + "\n")


def imputation_traces(windows: list[IncompleteWindow], imputed: list[np.ndarray],
                      feature: int = 0) -> dict[int, list[tuple]]:
    """Per-node plot data: (step, ground_truth, imputed, observed)."""
    traces: dict[int, list[tuple]] = {}
    for w, xhat in zip(windows, imputed):
        for node in range(w.n_nodes):
            rows = traces.setdefault(node, [])
            for t in range(w.width):
                if w.m[node, t] == 1.0:
                    truth = w.x[node, t, feature]
                elif w.eval_mask[node, t] == 1.0:
                    truth = w.ground_truth[node, t, feature]
                else:
                    truth = float("nan")
                rows.append((w.window_start + t, truth, float(xhat[node, t, feature]),
                             int(w.m[node, t])))
    for rows in traces.values():
        rows.sort(key=lambda r: r[0])
    return traces


# -- method runners ------------------------------------------------------------


def evaluate_baseline(method: str, windows: list[IncompleteWindow], knn_k: int = 3) -> tuple[float, float]:
    if method == "mean":
        preds = [mean_baseline(w) for w in windows]
    elif method == "knn":
        preds = [knn_baseline(w, knn_k) for w in windows]
    else:
        raise InputError(f"unknown baseline {method!r}")
    return pooled_metrics(preds, [w.ground_truth for w in windows], [w.eval_mask for w in windows])


def train_and_score(model_config: ModelConfig, train_config, graph: TrafficGraph,
                    splits: tuple[list, list, list], seed: int) -> tuple[float, float, "MagiNet"]:
    """Train on the first two splits, score pooled metrics on the third."""
    from .training import evaluate_model, train_model  # deferred: training imports our metrics

    train_ws, valid_ws, test_ws = splits
    width = train_ws[0].width
    n_features = train_ws[0].n_features
    model = MagiNet(model_config, graph, width=width, n_features=n_features, seed=seed,
                    normalizer=Normalizer.fit(train_ws))
    train_model(model, train_ws, valid_ws, train_config)
    test_rmse, test_mape = evaluate_model(model, test_ws)
    return test_rmse, test_mape, model


def _ratio_seed(seed: int, ratio: float) -> int:
    return (seed ^ (hash(float(ratio)) & 0x7FFFFFFFFFFFFFFF)) & 0x7FFFFFFFFFFFFFFF


def run_sweep_cell(series: SeriesMatrix, graph: TrafficGraph, ratio: float, method: str,
                   seed: int, *, width: int, stride: int, fractions: tuple[float, float, float],
                   model_config: ModelConfig, train_config, knn_k: int = 3,
                   dataset: str = "synthetic") -> ReportRow:
    """One (ratio, method) cell: fresh mask, split, evaluate on test windows."""
    cell_seed = _ratio_seed(seed, ratio)
    mask = draw_eval_mask(series, ratio, cell_seed)
    windows = make_windows(series, mask, width, stride)
    splits = split(windows, fractions)
    start = time.perf_counter()
    if method in ("mean", "knn"):
        cell_rmse, cell_mape = evaluate_baseline(method, splits[2], knn_k)
    elif method == "maginet":
        cell_rmse, cell_mape, _ = train_and_score(model_config, train_config, graph, splits, seed)
    else:
        raise InputError(f"unknown method {method!r}")
    runtime = time.perf_counter() - start
    return ReportRow(method=method, dataset=dataset, ratio=ratio, seed=cell_seed,
                     rmse=cell_rmse, mape=cell_mape, runtime_s=runtime)


def sensitivity_sweep(series: SeriesMatrix, graph: TrafficGraph, ratios: list[float],
                      methods: list[str], seed: int, **cell_kwargs) -> EvalReport:
    """Missing-ratio sweep: one report row per (ratio, method)."""
    for ratio in ratios:
        if not 0.0 < ratio < 1.0:
            raise ContractError(f"sweep ratios must lie in (0, 1), got {ratio}")
    report = EvalReport()
    for ratio in ratios:
        for method in methods:
            report.rows.append(run_sweep_cell(series, graph, ratio, method, seed, **cell_kwargs))
    return report


def sweep_pivot(report: EvalReport) -> list[list]:
    """Plot-data table: one row per ratio, one RMSE column per method."""
    methods = sorted({row.method for row in report.rows})
    ratios = sorted({row.ratio for row in report.rows})
    table = [["ratio"] + [f"rmse_{m}" for m in methods]]
    lookup = {(row.ratio, row.method): row.rmse for row in report.rows}
    for ratio in ratios:
        table.append([repr(float(ratio))] + [repr(float(lookup[(ratio, m)])) for m in methods])
    return table


def ablation_run(series: SeriesMatrix, graph: TrafficGraph, variants: list[str], seed: int, *,
                 ratio: float, width: int, stride: int, fractions: tuple[float, float, float],
                 model_config: ModelConfig, train_config,
                 dataset: str = "synthetic") -> EvalReport:
    """Train the full model plus each named variant under identical masks/budget."""
    toggles = []
    for name in variants:
        if name not in VARIANT_TOGGLES:
            raise InputError(f"unknown ablation variant {name!r}; known: {sorted(VARIANT_TOGGLES)}")
        toggles.append((name, VARIANT_TOGGLES[name]))
    mask = draw_eval_mask(series, ratio, seed)
    windows = make_windows(series, mask, width, stride)
    splits = split(windows, fractions)
    report = EvalReport()

    def run(label: str, config: ModelConfig):
        start = time.perf_counter()
        row_rmse, row_mape, _ = train_and_score(config, train_config, graph, splits, seed)
        report.rows.append(ReportRow(method=label, dataset=dataset, ratio=ratio, seed=seed,
                                     rmse=row_rmse, mape=row_mape,
                                     runtime_s=time.perf_counter() - start))

    run("MagiNet", model_config)
    for label, toggle in toggles:
        run(label, model_config.with_ablations(toggle))
    return report
