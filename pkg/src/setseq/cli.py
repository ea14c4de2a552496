"""Command-line orchestration.

Subcommands cover the full experiment surface: simulate, kalman, train,
eval, sweep-units, ablate, probe, backtest, report. Every run writes a
manifest into its output directory; ``report`` refuses inputs that lack
one. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
failure. ``SETSEQ_DATA_DIR`` rebases relative data/output paths.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .autodiff import NumericError
from .backend import ACTIVE_BACKEND
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, dataclass_from_dict, dump_config, load_config, section, snapshot
from .dataio import (DataError, read_episodes, write_csv, write_episodes,
                     load_market, save_market)
from .manifest import read_manifest, write_manifest
from .metrics import UndefinedMetric
from .model import SetSeqConfig
from .sim import DomainError, SimConfig, observe, simulate
from .svgplot import write_line_chart

KALMAN_CLI_TO_VARIANT = {
    "appendix": "unscaled",
    "dynamics": "dynamics_consistent",
    "fixed-gain": "fixed_gain",
}

DEFAULT_UNIT_GRID = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)


def data_root() -> Path:
    return Path(os.environ.get("SETSEQ_DATA_DIR", "."))


def _resolve(path_str: str | None) -> Path | None:
    if path_str is None:
        return None
    p = Path(path_str)
    return p if p.is_absolute() else data_root() / p


def _load_cfg(args) -> dict:
    return load_config(_resolve(args.config)) if getattr(args, "config", None) else {}


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def _model_from_checkpoint(path: Path):
    params, meta = load_checkpoint(path)
    if "config" not in meta:
        raise DataError(f"checkpoint {path} lacks a model config in its metadata")
    return params, SetSeqConfig.from_dict(meta["config"])


# -- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    sim_cfg = section(cfg, "sim", {"seed": args.seed})
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    episodes = [simulate(sim_cfg, episode=i) for i in range(args.episodes)]
    suffix = "jsonl" if args.format == "jsonl" else "bin"
    data_path = out_dir / f"episodes.{suffix}"
    write_episodes(data_path, episodes)
    write_manifest(out_dir, "simulate", snapshot(sim=sim_cfg, episodes=args.episodes),
                   sim_cfg.seed, outputs=[data_path], wall_time_s=time.perf_counter() - t0,
                   deterministic=args.deterministic)
    print(data_path)
    return 0


def cmd_kalman(args) -> int:
    episodes = read_episodes(_resolve(args.data))
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .evaluation import eval_over_episodes, kalman_predictor
    from .kalman import estimate_episode

    variants = ([KALMAN_CLI_TO_VARIANT[args.kalman_variant]]
                if args.kalman_variant else list(KALMAN_CLI_TO_VARIANT.values()))
    n = args.units or episodes[0].m_units
    t0 = time.perf_counter()
    path_rows = []
    for ep in episodes[: args.max_path_episodes]:
        obs = observe(ep, min(n, ep.m_units))
        for variant in variants:
            lam_hat, gains, p_var = estimate_episode(obs, ep.config, variant)
            for g in (0, 1):
                for t in range(ep.t_periods):
                    path_rows.append((ep.index, variant, g, t, ep.lam[g, t], lam_hat[g, t],
                                      gains[g, t] if t < ep.t_periods - 1 else "",
                                      p_var[g, t]))
    paths_csv = out_dir / "filter_paths.csv"
    write_csv(paths_csv, ["episode", "variant", "group", "t", "lam_true", "lam_hat",
                          "gain", "p_var"], path_rows)

    from .metrics import pearson

    summary_rows = []
    for variant in variants:
        ev = eval_over_episodes(episodes, kalman_predictor(variant), n_units=n)
        corrs = []
        for ep in episodes:
            obs = observe(ep, min(n, ep.m_units))
            lam_hat, _, _ = estimate_episode(obs, ep.config, variant)
            c = pearson(lam_hat[0], ep.lam[0])
            if c is not None:
                corrs.append(c)
        summary_rows.append((variant, n, float(np.mean(corrs)) if corrs else "",
                             ev.kl_full, ev.auc_absorbing, ev.r2_absorbing,
                             ev.corr_absorbing))
    summary_csv = out_dir / "kalman_summary.csv"
    write_csv(summary_csv, ["variant", "n_units", "lam_corr", "kl_full", "auc", "r2", "corr"],
              summary_rows)
    write_manifest(out_dir, "kalman", {"variants": variants, "units": n},
                   None, input_paths=[_resolve(args.data)],
                   outputs=[paths_csv, summary_csv],
                   wall_time_s=time.perf_counter() - t0, deterministic=args.deterministic)
    print(summary_csv)
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .training import (CostConfig, SamplerConfig, TrainConfig, train_portfolio,
                           train_synthetic)

    model_cfg = section(cfg, "model", {"variant": args.variant})
    train_cfg = section(cfg, "train", {"seed": args.seed})
    t0 = time.perf_counter()
    if args.task == "synthetic":
        episodes = read_episodes(_resolve(args.data))
        sampler_cfg = section(cfg, "sampler", {"m_units": episodes[0].m_units})
        params, history = train_synthetic(episodes, model_cfg, train_cfg, sampler_cfg,
                                          checkpoint_dir=out_dir / "checkpoint")
    else:
        market = load_market(_resolve(args.data))
        sampler_cfg = (section(cfg, "sampler") if "sampler" in cfg else None)
        costs = section(cfg, "cost") if "cost" in cfg or train_cfg.loss == "net_sharpe" else None
        recency = section(cfg, "recency") if "recency" in cfg else None
        tr = market.train_slice()
        params, history = train_portfolio(
            market.features[:, tr], market.returns[:, tr], model_cfg, train_cfg,
            sampler_cfg=sampler_cfg, costs=costs, recency=recency,
            window_len=cfg.get("window_len"), checkpoint_dir=out_dir / "checkpoint")
    save_checkpoint(out_dir / "checkpoint", params, meta={"config": model_cfg.to_dict()})
    hist_csv = out_dir / "history.csv"
    write_csv(hist_csv, ["step", "epoch", "loss", "lr", "grad_norm"], history.rows)
    write_manifest(out_dir, "train",
                   snapshot(model=model_cfg, train=train_cfg, sampler=sampler_cfg,
                            task=args.task),
                   train_cfg.seed, input_paths=[_resolve(args.data)],
                   outputs=[out_dir / "checkpoint", hist_csv],
                   wall_time_s=time.perf_counter() - t0, deterministic=args.deterministic)
    print(out_dir / "checkpoint")
    return 0


def cmd_eval(args) -> int:
    episodes = read_episodes(_resolve(args.data))
    params, model_cfg = _model_from_checkpoint(_resolve(args.model))
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .evaluation import collect_cells, evaluate_cells, model_predictor
    from .metrics import transition_auc_matrix

    t0 = time.perf_counter()
    n = args.units
    cells = collect_cells(episodes, model_predictor(params, model_cfg), n_units=n)
    ev = evaluate_cells(cells[0], cells[1], cells[2], cells[3])
    (out_dir / "classification_eval.json").write_text(
        json.dumps(ev.to_dict(), indent=1, sort_keys=True), encoding="utf-8")
    matrix = transition_auc_matrix(cells[3], cells[2], cells[1], groups=cells[4])
    n_classes = cells[1].shape[1]
    header = ["from_state"]
    for k in range(n_classes):
        header += [f"auc_to_{k + 1}", f"std_to_{k + 1}", f"count_to_{k + 1}"]
    rows = []
    for s in sorted({key[0] for key in matrix}):
        row = [s + 1]
        for k in range(n_classes):
            cell = matrix.get((s, k), {"auc": None, "std": None, "count": 0})
            row += [cell["auc"] if cell["auc"] is not None else "",
                    cell["std"] if cell["std"] is not None else "",
                    cell["count"]]
        rows.append(row)
    auc_csv = out_dir / "transition_auc.csv"
    write_csv(auc_csv, header, rows)
    write_manifest(out_dir, "eval", {"units": n}, None,
                   input_paths=[_resolve(args.data), _resolve(args.model)],
                   outputs=[out_dir / "classification_eval.json", auc_csv],
                   wall_time_s=time.perf_counter() - t0, deterministic=args.deterministic)
    print(out_dir / "classification_eval.json")
    return 0


def cmd_sweep_units(args) -> int:
    episodes = read_episodes(_resolve(args.data))
    params, model_cfg = _model_from_checkpoint(_resolve(args.model))
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .evaluation import kalman_predictor, model_predictor, sweep_unit_counts

    grid = _int_list(args.grid) if args.grid else [n for n in DEFAULT_UNIT_GRID
                                                   if n <= episodes[0].m_units]
    variant = KALMAN_CLI_TO_VARIANT[args.kalman_variant or "dynamics"]
    methods = {"model": model_predictor(params, model_cfg),
               "kalman": kalman_predictor(variant)}
    t0 = time.perf_counter()
    rows = sweep_unit_counts(episodes, methods, grid)
    sweep_csv = out_dir / "sweep_units.csv"
    write_csv(sweep_csv, ["n_units", "method", "metric", "value"],
              [(n, m, k, v if v is not None else "") for (n, m, k, v) in rows])
    for metric in ("auc", "r2", "corr", "kl_full"):
        series = {}
        for method in methods:
            series[method] = [v for (n, m, k, v) in rows if m == method and k == metric]
        write_line_chart(out_dir / f"sweep_{metric}.svg", grid, series,
                         title=f"{metric} vs observed units", xlabel="observed units",
                         ylabel=metric)
    write_manifest(out_dir, "sweep-units", {"grid": grid, "kalman_variant": variant},
                   None, input_paths=[_resolve(args.data), _resolve(args.model)],
                   outputs=[sweep_csv], wall_time_s=time.perf_counter() - t0,
                   deterministic=args.deterministic)
    print(sweep_csv)
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_grid = args.grid_set.split(",") if args.grid_set else ["none", "mean", "mha"]
    seqlen_grid = _int_list(args.grid_seqlen) if args.grid_seqlen else [1, 50]
    base_model = dict(cfg.get("model", {}))
    base_train = dict(cfg.get("train", {}))
    base_train.setdefault("epochs", args.epochs)
    base_sim = dict(cfg.get("sim", {}))
    base_sampler = dict(cfg.get("sampler", {}))
    if "m_units" in base_sim:
        base_sampler.setdefault("m_units", base_sim["m_units"])
    t0 = time.perf_counter()
    results = {}
    for variant in set_grid:
        for seq_len in seqlen_grid:
            model = dict(base_model)
            model["variant"] = variant
            model["kernel_len"] = seq_len
            spec = {
                "sim": base_sim,
                "model": model,
                "train": base_train,
                "sampler": base_sampler,
                "n_train_episodes": args.episodes,
                "n_eval_episodes": args.eval_episodes,
            }
            results[(variant, seq_len)] = _run_cell_subprocess(spec)
    ref = results.get(("mean", 50)) or results[list(results)[0]]
    rows = []
    for (variant, seq_len), res in results.items():
        rows.append((variant, seq_len,
                     res.get("kl_full", ""), res.get("auc", ""),
                     round(res["epoch_time_s"] / ref["epoch_time_s"], 3),
                     round(res["peak_rss_kb"] / ref["peak_rss_kb"], 3),
                     res["epoch_time_s"], res["peak_rss_kb"]))
    table_csv = out_dir / "ablation.csv"
    write_csv(table_csv, ["set_model", "seq_len", "kl_full", "auc",
                          "rel_epoch_time", "rel_peak_mem", "epoch_time_s", "peak_rss_kb"],
              rows)
    write_manifest(out_dir, "ablate",
                   {"set_grid": set_grid, "seqlen_grid": seqlen_grid,
                    "episodes": args.episodes, "epochs": base_train.get("epochs")},
                   None, outputs=[table_csv], wall_time_s=time.perf_counter() - t0,
                   deterministic=args.deterministic)
    print(table_csv)
    return 0


def _run_cell_subprocess(spec: dict) -> dict:
    with tempfile.TemporaryDirectory() as tmp:
        spec_path = Path(tmp) / "spec.json"
        out_path = Path(tmp) / "out.json"
        spec_path.write_text(json.dumps(spec), encoding="utf-8")
        proc = subprocess.run(
            [sys.executable, "-m", "setseq._runcell", str(spec_path), str(out_path)],
            capture_output=True, text=True)
        if proc.returncode != 0:
            raise NumericError(f"ablation cell failed: {proc.stderr.strip()[-500:]}")
        return json.loads(out_path.read_text("utf-8"))


def cmd_probe(args) -> int:
    episodes = read_episodes(_resolve(args.data))
    params, model_cfg = _model_from_checkpoint(_resolve(args.model))
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .evaluation import interpretability_by_units

    grid = _int_list(args.grid) if args.grid else [20, 50, 100, 200, 500, 1000]
    grid = [n for n in grid if n <= episodes[0].m_units]
    t0 = time.perf_counter()
    mat = interpretability_by_units(params, model_cfg, episodes, grid, dim=args.dim)
    rows = [[layer + 1] + [mat[layer, j] for j in range(len(grid))]
            for layer in range(mat.shape[0])]
    probe_csv = out_dir / "interpretability.csv"
    write_csv(probe_csv, ["layer"] + [f"n_{n}" for n in grid], rows)
    if np.isfinite(mat).any():
        write_line_chart(out_dir / "interpretability.svg", grid,
                         {f"layer {l + 1}": mat[l] for l in range(mat.shape[0])},
                         title="summary-to-intensity correlation",
                         xlabel="observed units", ylabel="|corr|")
    write_manifest(out_dir, "probe", {"grid": grid, "dim": args.dim}, None,
                   input_paths=[_resolve(args.data), _resolve(args.model)],
                   outputs=[probe_csv], wall_time_s=time.perf_counter() - t0,
                   deterministic=args.deterministic)
    print(probe_csv)
    return 0


def cmd_backtest(args) -> int:
    market = load_market(_resolve(args.market))
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .market import backtest, equal_weight_source, model_weight_source
    from .training import CostConfig

    costs = None if args.no_costs else CostConfig()
    sources = {"equal_weight": equal_weight_source(market),
               "oracle": market.oracle_weights}
    if args.model:
        params, model_cfg = _model_from_checkpoint(_resolve(args.model))
        sources["model"] = model_weight_source(params, model_cfg, market)
    t0 = time.perf_counter()
    stats_out = {}
    outputs = []
    for name, weights in sources.items():
        ledger, stats = backtest(weights, market, costs=costs)
        led_csv = out_dir / f"ledger_{name}.csv"
        write_csv(led_csv, ["day", "gross", "net", "cost", "turnover"], list(ledger.rows()))
        outputs.append(led_csv)
        stats_out[name] = stats.to_dict()
    (out_dir / "portfolio_eval.json").write_text(
        json.dumps(stats_out, indent=1, sort_keys=True), encoding="utf-8")
    write_line_chart(out_dir / "cumulative.svg",
                     list(range(market.config.t_test - 1)),
                     {name: (1.0 + np.array([r[2] for r in _ledger_rows(out_dir, name)])).cumprod() - 1.0
                      for name in sources},
                     title="cumulative net return", xlabel="test day", ylabel="return")
    write_manifest(out_dir, "backtest", {"costs": costs is not None}, None,
                   input_paths=[p for p in (_resolve(args.market),
                                            _resolve(args.model) if args.model else None) if p],
                   outputs=outputs + [out_dir / "portfolio_eval.json"],
                   wall_time_s=time.perf_counter() - t0, deterministic=args.deterministic)
    print(out_dir / "portfolio_eval.json")
    return 0


def _ledger_rows(out_dir: Path, name: str):
    from .dataio import read_csv
    _, rows = read_csv(out_dir / f"ledger_{name}.csv")
    return [(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in rows]


def cmd_report(args) -> int:
    inputs = [_resolve(p) for p in args.inputs.split(",") if p.strip()]
    out_dir = _resolve(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    long_rows = []
    manifests = {}
    for src in inputs:
        man = read_manifest(src)  # refuses unmanifested inputs
        manifests[str(src)] = man
        for csv_path in sorted(Path(src).glob("*.csv")):
            from .dataio import read_csv
            header, rows = read_csv(csv_path)
            for i, row in enumerate(rows):
                for col, value in zip(header, row):
                    long_rows.append((src.name, csv_path.name, i, col, value))
    bundle_csv = out_dir / "report_long.csv"
    write_csv(bundle_csv, ["run", "file", "row", "column", "value"], long_rows)
    (out_dir / "report_manifests.json").write_text(
        json.dumps(manifests, indent=1, sort_keys=True), encoding="utf-8")
    write_manifest(out_dir, "report", {"inputs": [str(p) for p in inputs]}, None,
                   input_paths=inputs, outputs=[bundle_csv],
                   wall_time_s=time.perf_counter() - t0, deterministic=args.deterministic)
    print(bundle_csv)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="setseq",
        description="Panel model over exchangeable units: simulator, filter oracle, "
                    "training, evaluation, and portfolio backtests.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="force single-threaded bit-reproducible execution")

    p = sub.add_parser("simulate", help="generate contagion episodes")
    common(p)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--format", choices=("jsonl", "binary"), default="binary")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("kalman", help="filter-oracle evaluation per variant")
    common(p)
    p.add_argument("--data", required=True, help="episode file")
    p.add_argument("--kalman-variant", choices=tuple(KALMAN_CLI_TO_VARIANT), default=None)
    p.add_argument("--units", type=int, default=None)
    p.add_argument("--max-path-episodes", type=int, default=4)
    p.set_defaults(fn=cmd_kalman)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--task", choices=("synthetic", "portfolio"), default="synthetic")
    p.add_argument("--data", required=True, help="episode file or market directory")
    p.add_argument("--variant", choices=("mean", "mha", "gated", "none"), default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="classification evaluation report")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--units", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep-units", help="metric curves over observed unit counts")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--grid", help="comma-separated unit counts")
    p.add_argument("--kalman-variant", choices=tuple(KALMAN_CLI_TO_VARIANT), default=None)
    p.set_defaults(fn=cmd_sweep_units)

    p = sub.add_parser("ablate", help="summary-type x kernel-length grid")
    common(p)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--eval-episodes", type=int, default=8)
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--grid-set", help="comma list from {none,mean,mha,gated}")
    p.add_argument("--grid-seqlen", help="comma list of kernel lengths")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("probe", help="per-layer summary-to-intensity correlations")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--grid", help="comma-separated unit counts")
    p.add_argument("--dim", type=int, default=0)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("backtest", help="portfolio ledger and statistics")
    common(p)
    p.add_argument("--market", required=True, help="saved market directory")
    p.add_argument("--model", default=None, help="checkpoint directory")
    p.add_argument("--no-costs", action="store_true")
    p.set_defaults(fn=cmd_backtest)

    p = sub.add_parser("report", help="bundle manifested run outputs")
    common(p)
    p.add_argument("--inputs", required=True, help="comma-separated run directories")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("make-market", help="generate and save a synthetic market")
    common(p)
    p.set_defaults(fn=cmd_make_market)

    return parser


def cmd_make_market(args) -> int:
    cfg = _load_cfg(args)
    market_cfg = section(cfg, "market", {"seed": args.seed})
    out_dir = _resolve(args.out)
    t0 = time.perf_counter()
    from .market import generate_market
    market = generate_market(market_cfg)
    save_market(out_dir, market)
    write_manifest(out_dir, "make-market", snapshot(market=market_cfg), market_cfg.seed,
                   outputs=[out_dir], wall_time_s=time.perf_counter() - t0,
                   deterministic=args.deterministic)
    print(out_dir)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.deterministic:
        os.environ["NUMBA_NUM_THREADS"] = "1"
        os.environ["OMP_NUM_THREADS"] = "1"
    try:
        return args.fn(args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, UndefinedMetric) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
