"""``sthsep`` command line: synth, graph, train, eval, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage or parse failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ModelConfig, load_config
from .errors import CheckpointError, ConfigError, DataError
from .graphs import gaussian_incident, hop_hyperedges, knn_hyperedges
from .harness import ForecastReport, ablate, evaluate, load_from_config, prepare, run
from .model import STHSepNet, apply_state, load_checkpoint
from .synth import synth

log = logging.getLogger("sthsep")


def _config(args) -> ModelConfig:
    cfg = load_config(args.config) if args.config else ModelConfig()
    if getattr(args, "data", None):
        cfg.data.values = args.data
    if args.seed is not None:
        cfg.train.seed = args.seed
        cfg.synth.seed = args.seed
    return cfg


def _write_matrix(fh, M: np.ndarray) -> None:
    w = csv.writer(fh, lineterminator="\n")
    for row in M:
        w.writerow([repr(float(v)) for v in row])


def _write_hyperedges(fh, hg) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["hyperedge", "nodes"])
    for j, e in enumerate(hg.hyperedges):
        w.writerow([j, " ".join(str(i) for i in e)])


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(args.out or "synth_data")
    synth(cfg.synth, out)
    print(out)
    return 0


def cmd_graph(args) -> int:
    state = None
    if args.checkpoint:
        ckpt_cfg, state = load_checkpoint(args.checkpoint)
    cfg = ckpt_cfg if state is not None and not args.config else _config(args)
    if state is not None and args.data:
        cfg.data.values = args.data
    if args.k is not None:
        cfg.hypergraph.k = args.k
    if args.sigma is not None:
        cfg.graph.sigma = args.sigma
    if args.threshold is not None:
        cfg.graph.threshold = args.threshold
    ds = load_from_config(cfg) if cfg.data.values else None
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        if args.mode == "gaussian":
            if ds is None:
                raise ConfigError("gaussian mode needs --data")
            _write_matrix(out, gaussian_incident(ds.distances, cfg.graph.sigma, cfg.graph.threshold))
        elif args.mode == "hop-hyper":
            if ds is None:
                raise ConfigError("hop-hyper mode needs --data")
            A = gaussian_incident(ds.distances, cfg.graph.sigma, cfg.graph.threshold)
            _write_hyperedges(out, hop_hyperedges(A, cfg.hypergraph.k))
        else:
            if state is not None:
                n = state["graph.E1"].shape[0]
            else:
                n = ds.N if ds is not None else args.nodes
            if n is None:
                raise ConfigError("adaptive and knn-hyper modes need --data, --nodes or --checkpoint")
            model = STHSepNet(cfg, n, ds.distances if ds is not None else None)
            if state is not None:
                apply_state(model.store, state)
            if args.mode == "adaptive":
                _write_matrix(out, model.adaptive_adjacency().data)
            else:
                _write_hyperedges(out, knn_hyperedges(model.hyperedge_features(), cfg.hypergraph.k))
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or "run")
    report = run(cfg, out_dir=out)
    print(json.dumps(report.to_json()["splits"]))
    return 0


def cmd_eval(args) -> int:
    ckpt_cfg, state = load_checkpoint(args.checkpoint)
    cfg = ckpt_cfg
    if args.config:
        cfg = load_config(args.config)
    if args.data:
        cfg.data.values = args.data
    ds = load_from_config(cfg)
    model = STHSepNet(cfg, ds.N, ds.distances)
    apply_state(model.store, state)
    t0 = time.perf_counter()
    prep = prepare(cfg, ds)
    scores, _ = evaluate(model, prep)
    report = ForecastReport(cfg.train.seed, cfg.to_flat(), scores, time.perf_counter() - t0)
    text = json.dumps(report.to_json(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    values = None
    if args.values:
        values = [_parse_value(args.sweep, v) for v in args.values.split(",")]
    out = args.out or f"ablate_{args.sweep}.csv"
    rows = ablate(cfg, args.sweep, values, out_path=out)
    for row in rows:
        print(f"{row['sweep']}={row['value']}: test MAE {row['test_mae']:.4f} RMSE {row['test_rmse']:.4f}")
    return 0


def _parse_value(sweep: str, text: str):
    text = text.strip()
    if sweep == "temporal":
        if text.lower() in ("on", "true", "1"):
            return True
        if text.lower() in ("off", "false", "0"):
            return False
        raise ConfigError(f"temporal sweep values are on/off, got {text!r}")
    try:
        return int(text) if sweep == "k" else float(text)
    except ValueError:
        raise ConfigError(f"bad {sweep} value {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sthsep", description="Decoupled spatio-temporal forecasting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="flat JSON config of dotted keys")
        if data:
            sp.add_argument("--data", help="values CSV or a directory with values.csv [coords.csv|edges.csv]")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--seed", type=int)
        return sp

    common(sub.add_parser("synth", help="write a synthetic drift dataset"), data=False)
    g = common(sub.add_parser("graph", help="emit a spatial support as CSV"))
    g.add_argument("--mode", choices=["adaptive", "gaussian", "knn-hyper", "hop-hyper"], required=True)
    g.add_argument("--k", type=int)
    g.add_argument("--sigma", type=float)
    g.add_argument("--threshold", type=float)
    g.add_argument("--nodes", type=int, help="node count when no data is given")
    g.add_argument("--checkpoint", help="take learned parameters from a checkpoint")
    common(sub.add_parser("train", help="train, evaluate and write report/predictions/checkpoint"))
    e = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    e.add_argument("--checkpoint", required=True)
    a = common(sub.add_parser("ablate", help="sweep gamma, hyperedge order or the temporal branch"))
    a.add_argument("--sweep", choices=["gamma", "k", "temporal"], required=True)
    a.add_argument("--values", help="comma-separated settings (default: the standard grid)")
    return p


COMMANDS = {"synth": cmd_synth, "graph": cmd_graph, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, CheckpointError) as exc:
        print(f"sthsep {args.command}: parse error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"sthsep {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
