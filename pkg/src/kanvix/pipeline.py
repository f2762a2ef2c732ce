"""Experiment runners behind the command-line interface.

Each (dataset, period) cell gets one JSON report ``<out>/<label>.json`` with
the sections ``config, training, pruning, symbolic, closed_form, metrics,
statistics, benchmarks, leverage``. ``train`` writes the report fresh;
``benchmark`` and ``leverage`` fill in their sections of an existing report
(``benchmark`` creates a skeleton when none exists). Cells may run on worker
threads, but every file is written from the calling thread in cell order, so
output does not depend on scheduling.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import NaiveModel, fit_har, rolling_forecast, select_order
from .config import candidates, config_hash, require_file, train_config
from .data import (
    PERIODS,
    DatasetSpec,
    SplitSpec,
    SyntheticOuConfig,
    TimeSeries,
    build_features,
    excess_returns,
    load_csv,
    simulate_ou,
    split,
)
from .evaluation import compute_metrics, durbin_watson, mincer_zarnowitz
from .exceptions import ConfigError, KanvixError, MissingBaseReport, MissingFeature
from .interpret import collapse, finetune_affine, mean_reversion_report, prune, score, symbolify
from .kan_core import build_network, edge_eval
from .leverage import LeverageConfig, build_leverage_dataset, fit_leverage
from .train import fit

__all__ = [
    "Cell",
    "cells",
    "run_train_cell",
    "run_benchmark_cell",
    "run_leverage_cell",
    "cmd_train",
    "cmd_benchmark",
    "cmd_leverage",
    "cmd_simulate",
    "render_report",
    "write_json",
]

logger = logging.getLogger(__name__)

SECTIONS = ("training", "pruning", "symbolic", "closed_form", "metrics", "statistics", "benchmarks", "leverage")
HAR_PARAMS = {"HAR(3)": 4, "HAR(4)": 5}


@dataclass(frozen=True)
class Cell:
    dataset: str  # "d1" | "d2" | "d3"
    period: int | None  # None when a ratio split replaces the date periods

    @property
    def label(self) -> str:
        return f"{self.dataset.upper()}P{self.period}" if self.period else f"{self.dataset.upper()}S"

    def split_spec(self, cfg) -> SplitSpec:
        if self.period is None:
            return SplitSpec(ratios=tuple(cfg["split"]))
        return PERIODS[f"P{self.period}"]

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "period": self.period, "label": self.label}


def cells(cfg) -> list:
    periods = [None] if cfg["split"] is not None else cfg["periods"]
    return [Cell(d, p) for d in cfg["datasets"] for p in periods]


# --- serialisation ------------------------------------------------------------

def _clean(obj):
    """Plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.datetime64):
        return str(obj)
    return obj


def write_json(path, doc) -> None:
    text = json.dumps(_clean(doc), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _skeleton(cfg, cell) -> dict:
    body = {k: v for k, v in cfg.items() if k not in ("out", "threads")}
    doc = {"version": __version__, "config_hash": config_hash(cfg), "cell": cell.to_dict(), "config": body}
    doc.update({s: None for s in SECTIONS})
    return doc


def _paths(cfg, cell) -> dict:
    out = Path(cfg["out"])
    return {
        "report": out / f"{cell.label}.json",
        "forecast": out / f"{cell.label}_forecast.csv",
        "activations": out / f"{cell.label}_activations.csv",
        "network": out / f"{cell.label}_network.json",
        "benchmarks": out / f"{cell.label}_benchmarks.csv",
        "leverage": out / f"{cell.label}_leverage.csv",
    }


def _load_vix(cfg) -> TimeSeries:
    d = cfg["data"]
    return load_csv(require_file(cfg, "vix"), d["date_column"], d["value_column"])


def _guarded(fn, *args):
    """Run a statistic, recording numerical failures instead of aborting."""
    try:
        return fn(*args).to_dict()
    except KanvixError as exc:
        return {"error": type(exc).__name__, "message": str(exc)}


# --- train --------------------------------------------------------------------

def _activation_rows(net, n_samples):
    rows = []
    for l, layer in enumerate(net.layers):
        for q in range(layer.n_in):
            spec = layer.bases[q].spec
            xs = np.linspace(spec.lower, spec.upper, n_samples)
            for p in range(layer.n_out):
                ys = edge_eval(layer.edge(q, p), xs)
                active = int(layer.active[q, p])
                rows.extend((l, q, p, active, float(x), float(y)) for x, y in zip(xs, ys))
    return rows


def run_train_cell(cfg, cell: Cell, series: TimeSeries) -> dict:
    """Train, prune, symbolify, fine-tune and collapse one cell.

    Returns the report document plus the tabular outputs under ``"_files"``.
    """
    spec = DatasetSpec(cell.dataset.upper())
    fm = build_features(series, spec)
    train, valid, test = split(fm, cell.split_spec(cfg))
    net_cfg = cfg["network"]
    n_in = len(fm.names)
    shape = net_cfg["shape"] or [n_in, *net_cfg["hidden"], 1]
    if int(shape[0]) != n_in:
        raise ConfigError(f"network.shape starts with {shape[0]} but {cell.dataset} has {n_in} features")
    tcfg = train_config(cfg)
    net = build_network(shape, train.X, net_cfg["grid_size"], net_cfg["order"], seed=cfg["seed"], init=net_cfg["init"])
    history = fit(net, train, valid, tcfg)
    pre = net(test.X)

    pcfg = cfg["pruning"]
    importance = score(net, train.X, kind=pcfg["importance"])
    pruned = net if pcfg["threshold"] is None else prune(net, importance, pcfg["threshold"])
    scfg = cfg["symbolic"]
    snet = symbolify(pruned, train.X, candidates(cfg))
    snet = finetune_affine(snet, train, valid, scfg["finetune_epochs"], scfg["finetune_lr"], tcfg)
    cf = collapse(snet, fm.names)
    post = cf(test.X)

    try:
        mr = mean_reversion_report(cf, train).to_dict()
    except MissingFeature:
        mr = None
    resid = test.y - post
    doc = _skeleton(cfg, cell)
    doc["training"] = {
        "shape": list(shape),
        "n_train": len(train),
        "n_valid": len(valid),
        "n_test": len(test),
        "train_dates": [str(train.dates[0]), str(train.dates[-1])],
        "valid_dates": [str(valid.dates[0]), str(valid.dates[-1])],
        "test_dates": [str(test.dates[0]), str(test.dates[-1])],
        **history.to_dict(),
    }
    doc["pruning"] = {
        "threshold": pcfg["threshold"],
        "importance_kind": pcfg["importance"],
        "importance": importance.to_dict(),
        "active": [layer.active.tolist() for layer in pruned.layers],
        "n_params": net.n_params,
        "n_params_pruned": pruned.n_active_params(),
        "n_edges": net.n_edges,
        "n_active_edges": pruned.n_active_edges,
        "pruned_inputs": [n for i, n in enumerate(fm.names) if not pruned.layers[0].active[i].any()],
    }
    doc["symbolic"] = snet.to_dict()
    doc["closed_form"] = {**cf.to_dict(), "mean_reversion": mr}
    doc["metrics"] = {
        "pre_symbolic": compute_metrics(test.y, pre).to_dict(),
        "post_symbolic": compute_metrics(test.y, post).to_dict(),
    }
    doc["statistics"] = {
        "mincer_zarnowitz": _guarded(mincer_zarnowitz, test.y, post),
        "durbin_watson": _guarded(durbin_watson, resid),
    }
    doc["_files"] = {
        "forecast": (["date", "actual", "kan", "symbolic", "residual"],
                     [(str(d), a, k, s, a - s) for d, a, k, s in zip(test.dates, test.y, pre, post)]),
        "activations": (["layer", "in", "out", "active", "x", "phi"],
                        _activation_rows(net, cfg["activation_samples"])),
        "network": net.to_dict(),
    }
    return doc


def _map_cells(cfg, fn, items):
    if cfg["threads"] > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
            return list(pool.map(fn, items))
    return [fn(c) for c in items]


def cmd_train(cfg) -> list:
    series = _load_vix(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    todo = cells(cfg)
    docs = _map_cells(cfg, lambda c: run_train_cell(cfg, c, series), todo)
    written = []
    for cell, doc in zip(todo, docs):
        paths = _paths(cfg, cell)
        files = doc.pop("_files")
        _write_csv(paths["forecast"], *files["forecast"])
        _write_csv(paths["activations"], *files["activations"])
        write_json(paths["network"], files["network"])
        write_json(paths["report"], doc)
        logger.info("%s: %s", cell.label, doc["closed_form"]["formula"])
        written.append(paths["report"])
    return written


# --- benchmarks ---------------------------------------------------------------

def _read_forecast_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    dates = np.array([r["date"] for r in rows], dtype="datetime64[D]")
    cols = {k: np.array([float(r[k]) for r in rows]) for k in ("actual", "kan", "symbolic")}
    return dates, cols


def _row(model, actual, forecast, n_params, **extra):
    return {"model": model, **compute_metrics(actual, forecast).to_dict(), "n_params": n_params, **extra}


def run_benchmark_cell(cfg, cell: Cell, series: TimeSeries, kan_report: dict | None, kan_forecast=None) -> dict:
    """Forward fill, HAR(3), HAR(4), ARMA and ARIMA on the cell's test dates.

    Models are fitted on observations dated before the validation segment.
    When a trained report is available its KAN rows are appended.
    """
    fm = build_features(series, DatasetSpec(cell.dataset.upper()))
    train, valid, test = split(fm, cell.split_spec(cfg))
    v = series.values
    start = int(np.searchsorted(series.dates, test.dates[0]))
    if start + len(test) != len(series):
        raise ConfigError("test segment must run to the end of the series")
    cutoff = int(np.searchsorted(series.dates, valid.dates[0]))
    actual = v[start:]

    rows = [_row("Forward filling", actual, rolling_forecast(NaiveModel(), v, start), 0)]
    har_fm = build_features(series.restrict(None, str(train.dates[-1])), DatasetSpec("D3"))
    for quarterly in (False, True):
        m = fit_har(har_fm, quarterly)
        rows.append(_row(m.name, actual, m.forecast(v, start), HAR_PARAMS[m.name], coefficients=m.to_dict()))

    bcfg = cfg["benchmarks"]
    fit_values = v[:cutoff]
    auto = select_order(fit_values, bcfg["max_p"], bcfg["max_q"], cfg["threads"])
    arma = auto if auto.order.d == 0 else select_order(fit_values, bcfg["max_p"], bcfg["max_q"], cfg["threads"], d=0)
    arima = auto if auto.order.d >= 1 else select_order(fit_values, bcfg["max_p"], bcfg["max_q"], cfg["threads"], d=1)
    for sel in (arma, arima):
        m = sel.model
        rows.append(_row(m.name, actual, rolling_forecast(m, v, start), m.n_params,
                         coefficients=m.to_dict(), selection=sel.to_dict()))

    if kan_report is not None and kan_forecast is not None:
        dates, cols = kan_forecast
        if len(dates) != len(test) or np.any(dates != test.dates):
            raise ConfigError(f"{cell.label}: trained forecasts do not cover the benchmark test dates")
        p = kan_report["pruning"]
        rows.append(_row("KAN", cols["actual"], cols["kan"], p["n_params"], n_params_pruned=p["n_params_pruned"]))
        rows.append(_row("KAN (symbolic)", cols["actual"], cols["symbolic"], p["n_params"],
                         n_params_pruned=p["n_params_pruned"]))
    return {
        "test_dates": [str(test.dates[0]), str(test.dates[-1])],
        "fit_end": str(series.dates[cutoff - 1]),
        "rows": rows,
    }


def _load_report(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def cmd_benchmark(cfg) -> list:
    series = _load_vix(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    todo = cells(cfg)
    inputs = []
    for cell in todo:
        paths = _paths(cfg, cell)
        if paths["report"].is_file() and paths["forecast"].is_file():
            doc = _load_report(paths["report"])
            inputs.append((doc, _read_forecast_csv(paths["forecast"])))
        else:
            inputs.append((None, None))
    # ARIMA selection threads internally; cells run one after another
    results = [run_benchmark_cell(cfg, c, series, doc, fc) for c, (doc, fc) in zip(todo, inputs)]
    written = []
    cols = ["model", "mse", "mae", "mape", "r2", "qlike", "n_params"]
    for cell, (doc, _), bench in zip(todo, inputs, results):
        paths = _paths(cfg, cell)
        doc = doc if doc is not None else _skeleton(cfg, cell)
        doc["benchmarks"] = bench
        _write_csv(paths["benchmarks"], cols, [[r[c] for c in cols] for r in bench["rows"]])
        write_json(paths["report"], doc)
        written.append(paths["report"])
    return written


# --- leverage -----------------------------------------------------------------

def _leverage_config(cfg) -> LeverageConfig:
    lcfg = cfg["leverage"]
    return LeverageConfig(
        train=train_config(cfg),
        grid_size=lcfg["grid_size"],
        order=lcfg["order"],
        threshold=lcfg["threshold"],
        importance=lcfg["importance"],
        finetune_epochs=lcfg["finetune_epochs"],
        finetune_lr=lcfg["finetune_lr"],
    )


def run_leverage_cell(cfg, cell, actuals: TimeSeries, returns: TimeSeries, forecast) -> tuple:
    dates, cols = forecast
    base = TimeSeries(dates, cols["symbolic"], "forecast")
    ds = build_leverage_dataset(base, returns, actuals)
    res = fit_leverage(ds, _leverage_config(cfg))
    tilde = res.closed_form(ds.X)
    rows = [(str(d), y, b, r, t) for d, y, b, r, t in zip(ds.dates, ds.y, ds.vhat, ds.ret_lag, tilde)]
    return res.to_dict(), rows


def cmd_leverage(cfg) -> list:
    todo = cells(cfg)
    bases = []
    for cell in todo:
        paths = _paths(cfg, cell)
        if not (paths["report"].is_file() and paths["forecast"].is_file()):
            raise MissingBaseReport(f"{cell.label}: run 'train' first; {paths['report']} or {paths['forecast']} is missing")
        bases.append((_load_report(paths["report"]), _read_forecast_csv(paths["forecast"])))
    d = cfg["data"]
    actuals = _load_vix(cfg)
    prices = load_csv(require_file(cfg, "sp500"), d["date_column"], d["value_column"])
    rf = load_csv(require_file(cfg, "rf"), d["date_column"], d["rf_column"])
    returns = excess_returns(prices, rf)
    results = _map_cells(cfg, lambda item: run_leverage_cell(cfg, item[0], actuals, returns, item[1][1]),
                         list(zip(todo, bases)))
    written = []
    for cell, (doc, _), (section, rows) in zip(todo, bases, results):
        paths = _paths(cfg, cell)
        doc["leverage"] = section
        _write_csv(paths["leverage"], ["date", "actual", "base", "excess_return_lag", "augmented"], rows)
        write_json(paths["report"], doc)
        written.append(paths["report"])
    return written


# --- simulate -----------------------------------------------------------------

def cmd_simulate(cfg) -> Path:
    s = cfg["simulate"]
    try:
        oc = SyntheticOuConfig(kappa=s["kappa"], theta=s["theta"], noise_scale=s["noise_scale"], n=s["n"],
                               seed=cfg["seed"], v0=s["v0"], start=s["start"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad simulate settings: {exc}") from exc
    series = simulate_ou(oc)
    path = Path(s["path"])
    if not path.is_absolute():
        path = Path(cfg["out"]) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    d = cfg["data"]
    _write_csv(path, [d["date_column"], d["value_column"]], [(str(t), v) for t, v in zip(series.dates, series.values)])
    return path


# --- text rendering -----------------------------------------------------------

def _table(header, rows) -> str:
    cells_ = [header] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells_) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells_]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def render_report(doc: dict) -> str:
    """Plain-text tables for one report document."""
    cell = doc.get("cell", {})
    out = [f"== {cell.get('label', '?')}  (version {doc.get('version')}, config {doc.get('config_hash', '')[:12]})"]
    cf = doc.get("closed_form")
    if cf:
        out.append(cf["formula"])
        mr = cf.get("mean_reversion")
        if mr:
            out.append(_table(["kappa", "lag slope", "residual mean", "vix mean", "implied level"],
                              [[mr["kappa"], mr["lag_slope"], mr["residual_mean"], mr["vix_mean"], mr["implied_level"]]]))
    metrics = doc.get("metrics")
    if metrics:
        keys = ["mse", "mae", "mape", "r2", "qlike", "n_test"]
        out.append(_table(["stage", *keys], [[k, *(m[c] for c in keys)] for k, m in metrics.items()]))
    pr = doc.get("pruning")
    if pr:
        out.append(f"params: {pr['n_params']} unpruned, {pr['n_params_pruned']} after pruning; "
                   f"pruned inputs: {', '.join(pr['pruned_inputs']) or 'none'}")
    st = doc.get("statistics")
    if st:
        mz, dw = st["mincer_zarnowitz"], st["durbin_watson"]
        out.append(_table(["MZ alpha", "MZ beta", "F", "p", "DW"],
                          [[mz.get("alpha_hat"), mz.get("beta_hat"), mz.get("f_statistic"), mz.get("p_value"),
                            dw.get("statistic")]]))
    bench = doc.get("benchmarks")
    if bench:
        keys = ["model", "mse", "mae", "mape", "r2", "qlike", "n_params"]
        out.append(_table(keys, [[r[k] for k in keys] for r in bench["rows"]]))
    lev = doc.get("leverage")
    if lev:
        flag = "  [non-linear fit warning]" if lev["non_linear_fit_warning"] else ""
        out.append(f"{lev['formula']}{flag}")
        out.append(_table(["base R2", "augmented R2", "improvement", "rows", "dropped"],
                          [[lev["base_r2"], lev["r2"], lev["r2_improvement"], lev["n_rows"], lev["dropped_rows"]]]))
    return "\n\n".join(out) + "\n"
