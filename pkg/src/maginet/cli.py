"""Command-line pipeline: generate | mask | train | impute | eval | sweep | ablate.

Configuration comes from an optional JSON file (--config) with flag
overrides on top; flags always win. Every command is deterministic given
its flags, and every output file starts with a comment line recording
the tool version, the full flag set, and the seed.

Exit codes: 0 success, 1 usage, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

from . import __version__, data, evaluation
from .errors import (
    ContractError,
    EmptyMaskError,
    InputError,
    MagiNetError,
    NumericError,
    ShapeError,
)
from .graph import TrafficGraph, load_adjacency, save_adjacency
from .model import MagiNet, ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate_model, history_rows, train_model


class UsageError(MagiNetError):
    pass


@dataclass
class RunConfig:
    """Every knob of the pipeline; round-trips losslessly through JSON."""

    # windowing and masking
    width: int = 12
    stride: int = 0          # 0 means stride = width
    ratio: float = 0.5
    seed: int = 1
    train_frac: float = 0.7
    valid_frac: float = 0.2
    test_frac: float = 0.1
    knn_k: int = 3
    # synthetic generation
    nodes: int = 16
    steps: int = 2016
    period: int = 288
    amplitude: float = 10.0
    offset: float = 20.0
    noise: float = 0.05
    extra_edges: int = 4
    # model architecture
    d: int = 16
    heads: int = 3
    head_dim: int = 0
    spatial_dim: int = 16
    cheb_order: int = 3
    kernel_sizes: tuple = (3, 5)
    blocks: int = 2
    spatial_kernel: int = 3
    mask_mode: str = "neg_inf"
    ablations: tuple = ()
    # optimization
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 8
    patience: int = 20
    grad_clip: float = 0.0   # 0 disables clipping

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        self.ablations = tuple(str(a) for a in self.ablations)

    @property
    def effective_stride(self) -> int:
        return self.stride if self.stride else self.width

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_frac, self.valid_frac, self.test_frac)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d=self.d, heads=self.heads, head_dim=self.head_dim, spatial_dim=self.spatial_dim,
            cheb_order=self.cheb_order, kernel_sizes=self.kernel_sizes, blocks=self.blocks,
            spatial_kernel=self.spatial_kernel, mask_mode=self.mask_mode,
            ablations=frozenset(self.ablations),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
            patience=self.patience, seed=self.seed,
            grad_clip=self.grad_clip if self.grad_clip > 0 else None,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kernel_sizes"] = list(self.kernel_sizes)
        out["ablations"] = list(self.ablations)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as handle:
                raw = json.load(handle)
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise InputError(f"{path}: invalid JSON: {err}") from None
        if not isinstance(raw, dict):
            raise InputError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def to_file(self, path) -> None:
        with open(path, "w") as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")


# -- plumbing -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


def _provenance(args: argparse.Namespace, seed: int) -> str:
    flags = " ".join(args.raw_argv)
    return f"maginet v{__version__} | {flags} | seed={seed}"


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _csv_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_names(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for name in (f.name for f in fields(RunConfig)):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    merged = cfg.to_dict()
    merged.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in overrides.items()})
    return RunConfig.from_dict(merged)


def _require(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing required flag --{what}")
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} file not found: {p}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out if args.out else ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_series_graph(args, cfg: RunConfig):
    series = data.load_series_csv(_require(args.series, "series"))
    graph = load_adjacency(_require(args.adj, "adj"), series.n_nodes)
    return series, graph


def _load_or_make_mask(args, cfg: RunConfig, series, out_dir: Path | None):
    """Load the persisted eval mask, or draw one and persist it."""
    if args.mask:
        mask, _, _ = data.load_mask_csv(_require(args.mask, "mask"))
        if mask.shape != (series.n_nodes, series.n_steps):
            raise InputError(
                f"mask geometry {mask.shape} does not match series "
                f"({series.n_nodes}, {series.n_steps})"
            )
        return mask
    mask = data.draw_eval_mask(series, cfg.ratio, cfg.seed)
    if out_dir is not None:
        data.save_mask_csv(out_dir / "mask.csv", mask, seed=cfg.seed, ratio=cfg.ratio,
                           comment=_provenance(args, cfg.seed))
    return mask


def _dataset_tag(args) -> str:
    return Path(args.series).stem if args.series else "synthetic"


def _write_rows(path, rows: list[list], comment: str) -> None:
    with open(path, "w", newline="") as handle:
        handle.write(f"# {comment}\n")
        for row in rows:
            handle.write(",".join(str(cell) for cell in row) + "\n")


# -- commands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    if cfg.nodes < 2:
        raise UsageError(f"--nodes must be >= 2, got {cfg.nodes}")
    if cfg.steps < cfg.width:
        raise UsageError(f"--steps must be >= window width ({cfg.width}), got {cfg.steps}")
    out = _out_dir(args)
    graph = data.synthetic_graph(cfg.nodes, extra_edges=cfg.extra_edges, seed=cfg.seed)
    series = data.generate_synthetic(cfg.nodes, cfg.steps, graph, cfg.seed, period=cfg.period,
                                     amplitude=cfg.amplitude, offset=cfg.offset, noise=cfg.noise)
    note = _provenance(args, cfg.seed)
    series_path = Path(args.series) if args.series else out / "series.csv"
    adj_path = Path(args.adj) if args.adj else out / "adjacency.csv"
    data.save_series_csv(series_path, series, comment=note)
    save_adjacency(adj_path, graph, comment=note)
    vals = series.values
    print(f"generated {cfg.nodes} nodes x {cfg.steps} steps "
          f"(mean={vals.mean():.3f}, std={vals.std():.3f}) -> {series_path}, {adj_path}")
    return 0


def cmd_mask(args) -> int:
    cfg = _load_config(args)
    series = data.load_series_csv(_require(args.series, "series"))
    mask = data.draw_eval_mask(series, cfg.ratio, cfg.seed)
    out = _out_dir(args)
    path = out / "mask.csv"
    data.save_mask_csv(path, mask, seed=cfg.seed, ratio=cfg.ratio,
                       comment=_provenance(args, cfg.seed))
    print(f"masked {int(mask.sum())} of {int(series.observed().sum())} observed entries -> {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    series, graph = _load_series_graph(args, cfg)
    mask = _load_or_make_mask(args, cfg, series, out)
    windows = data.make_windows(series, mask, cfg.width, cfg.effective_stride)
    train_ws, valid_ws, test_ws = data.split(windows, cfg.fractions)
    model = MagiNet(cfg.model_config(), graph, width=cfg.width, n_features=series.n_features,
                    seed=cfg.seed)
    result = train_model(model, train_ws, valid_ws, cfg.train_config())
    note = _provenance(args, cfg.seed)
    save_checkpoint(out / "checkpoint.json", model, comment=note)
    _write_rows(out / "history.csv", history_rows(result), note)
    cfg.to_file(out / "config.json")
    if result.diverged:
        print(f"training diverged after epoch {result.epochs_run}; "
              f"last good checkpoint kept at {out / 'checkpoint.json'}")
        return 3
    print(f"best epoch {result.best_epoch}: "
          f"val RMSE {result.best_val_rmse:.6f}, val MAPE {result.best_val_mape:.4f}%")
    if test_ws:
        test_rmse, test_mape = evaluate_model(model, test_ws)
        print(f"test RMSE {test_rmse:.6f}, test MAPE {test_mape:.4f}%")
    return 0


def cmd_impute(args) -> int:
    cfg = _load_config(args)
    series, graph = _load_series_graph(args, cfg)
    model = load_checkpoint(_require(args.checkpoint, "checkpoint"), graph)
    mask = _load_or_make_mask(args, cfg, series, None) if args.mask else np.zeros(
        (series.n_nodes, series.n_steps), dtype=np.int8)
    windows = data.make_windows(series, mask, model.width, model.width)
    filled = np.array(series.values)
    for w in windows:
        xhat = model.impute(w)
        sl = slice(w.window_start, w.window_start + w.width)
        visible = w.m[:, :, None] == 1.0
        filled[:, sl, :] = np.where(visible, filled[:, sl, :], xhat)
    out = _out_dir(args)
    path = out / "imputed.csv"
    data.save_series_csv(path, data.SeriesMatrix(values=filled), comment=_provenance(args, cfg.seed))
    print(f"imputed series -> {path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    series, graph = _load_series_graph(args, cfg)
    mask = _load_or_make_mask(args, cfg, series, None)
    windows = data.make_windows(series, mask, cfg.width, cfg.effective_stride)
    chosen = windows if args.split == "all" else data.split(windows, cfg.fractions)[2]
    if not chosen:
        raise InputError("no windows in the selected split")
    methods = _csv_names(args.methods)
    tag = _dataset_tag(args)
    report = evaluation.EvalReport()
    out = _out_dir(args)
    note = _provenance(args, cfg.seed)
    for method in methods:
        start = time.perf_counter()
        if method in ("mean", "knn"):
            preds = [evaluation.mean_baseline(w) if method == "mean"
                     else evaluation.knn_baseline(w, cfg.knn_k) for w in chosen]
        elif method == "maginet":
            model = load_checkpoint(_require(args.checkpoint, "checkpoint"), graph)
            preds = [model.predict(w) for w in chosen]
        else:
            raise InputError(f"unknown method {method!r}")
        m_rmse, m_mape = evaluation.pooled_metrics(
            preds, [w.ground_truth for w in chosen], [w.eval_mask for w in chosen])
        report.rows.append(evaluation.ReportRow(
            method=method, dataset=tag, ratio=cfg.ratio, seed=cfg.seed,
            rmse=m_rmse, mape=m_mape, runtime_s=time.perf_counter() - start))
        if args.traces:
            trace_dir = Path(args.traces)
            trace_dir.mkdir(parents=True, exist_ok=True)
            for node, rows in evaluation.imputation_traces(chosen, preds).items():
                _write_rows(trace_dir / f"{method}_node{node}.csv",
                            [["t", "ground_truth", "imputed", "observed"]]
                            + [[t, repr(gt), repr(pred), obs] for t, gt, pred, obs in rows],
                            note)
        print(f"{method}: RMSE {m_rmse:.6f}, MAPE {m_mape:.4f}%")
    report.to_csv(out / "report.csv", comment=note)
    return 0


def _sweep_cell_job(payload):
    series, graph, ratio, method, seed, kwargs = payload
    return evaluation.run_sweep_cell(series, graph, ratio, method, seed, **kwargs)


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    series, graph = _load_series_graph(args, cfg)
    ratios = list(args.ratios)
    methods = _csv_names(args.methods)
    kwargs = dict(width=cfg.width, stride=cfg.effective_stride, fractions=cfg.fractions,
                  model_config=cfg.model_config(), train_config=cfg.train_config(),
                  knn_k=cfg.knn_k, dataset=_dataset_tag(args))
    for ratio in ratios:
        if not 0.0 < ratio < 1.0:
            raise UsageError(f"--ratios entries must lie in (0, 1), got {ratio}")
    cells = [(series, graph, ratio, method, cfg.seed, kwargs)
             for ratio in ratios for method in methods]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_cell_job, cells))
    else:
        rows = [_sweep_cell_job(cell) for cell in cells]
    report = evaluation.EvalReport(rows=rows)
    out = _out_dir(args)
    note = _provenance(args, cfg.seed)
    report.to_csv(out / "sweep_report.csv", comment=note)
    _write_rows(out / "sweep_rmse.csv", evaluation.sweep_pivot(report), note)
    for row in report.rows:
        print(f"r={row.ratio:.2f} {row.method}: RMSE {row.rmse:.6f}, MAPE {row.mape:.4f}%")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    series, graph = _load_series_graph(args, cfg)
    variants = _csv_names(args.variants) if args.variants else []
    report = evaluation.ablation_run(series, graph, variants, cfg.seed, ratio=cfg.ratio,
                                     width=cfg.width, stride=cfg.effective_stride,
                                     fractions=cfg.fractions, model_config=cfg.model_config(),
                                     train_config=cfg.train_config(), dataset=_dataset_tag(args))
    out = _out_dir(args)
    report.to_csv(out / "ablation_report.csv", comment=_provenance(args, cfg.seed))
    for row in report.rows:
        print(f"{row.method}: RMSE {row.rmse:.6f}, MAPE {row.mape:.4f}%")
    return 0


# -- argument wiring ------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="maginet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"maginet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p: argparse.ArgumentParser):
        p.add_argument("--series", help="series CSV path")
        p.add_argument("--adj", help="adjacency edge-list CSV path")
        p.add_argument("--mask", help="eval mask CSV path")
        p.add_argument("--ratio", type=float, help="missing ratio in [0,1]")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--out", help="output directory (default: current)")
        p.add_argument("--width", type=int, help="window width")
        p.add_argument("--stride", type=int, help="window stride (default: width)")

    p = sub.add_parser("generate", help="write a synthetic series and adjacency")
    shared(p)
    p.add_argument("--nodes", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--period", type=int)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--offset", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--extra-edges", dest="extra_edges", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("mask", help="draw and persist an MCAR eval mask")
    shared(p)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train the imputation model")
    shared(p)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--grad-clip", dest="grad_clip", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--head-dim", dest="head_dim", type=int)
    p.add_argument("--spatial-dim", dest="spatial_dim", type=int)
    p.add_argument("--cheb-order", dest="cheb_order", type=int)
    p.add_argument("--kernels", dest="kernel_sizes", type=_csv_ints)
    p.add_argument("--blocks", type=int)
    p.add_argument("--spatial-kernel", dest="spatial_kernel", type=int)
    p.add_argument("--mask-mode", dest="mask_mode", choices=["neg_inf", "multiply"])
    p.add_argument("--ablate", dest="ablations", type=_csv_names,
                   help="comma-separated ablation toggles")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("impute", help="fill missing entries with a trained model")
    shared(p)
    p.add_argument("--checkpoint", help="checkpoint JSON path")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("eval", help="score methods on held-out positions")
    shared(p)
    p.add_argument("--checkpoint", help="checkpoint JSON path (for method maginet)")
    p.add_argument("--methods", default="mean,knn")
    p.add_argument("--split", choices=["test", "all"], default="test")
    p.add_argument("--knn-k", dest="knn_k", type=int)
    p.add_argument("--traces", help="directory for per-node trace CSVs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="missing-ratio sensitivity sweep")
    shared(p)
    p.add_argument("--ratios", type=_csv_floats, required=True)
    p.add_argument("--methods", default="mean,knn")
    p.add_argument("--knn-k", dest="knn_k", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="train ablation variants on one mask")
    shared(p)
    p.add_argument("--variants", help="comma-separated paper-style variant names")
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.raw_argv = argv
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    except (InputError, ShapeError, ContractError, EmptyMaskError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
