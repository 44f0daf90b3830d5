"""``cgmn`` command line: generate | ged | train | eval | predict.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import diffcore as dc
from .augment import generate_bsd_pairs
from .config import Config, ConfigError, load_config
from .ged import IntractableSizeError, ged_exact
from .graph import GraphFormatError, GraphPair, generate_families, generate_synthetic_pairs, load_graphs, load_pairs, split_dataset, write_graphs, write_pairs
from .report import format_metrics, write_csv, write_json, write_loss_curve, write_sweep
from .train import Checkpoint, DivergenceError, TaskLabelError, dumps_report, evaluate, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("cgmn")


class DataError(Exception):
    pass


def manifest(command: str, config: dict, seed: int, **extra) -> dict:
    return {"command": command, "config": config, "seed": seed, "code_version": __version__, **extra}


def _env_seed(default: int = 0) -> int:
    raw = os.environ.get("CGMN_SEED")
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"CGMN_SEED must be an integer, got {raw!r}") from exc


def _read_graphs(path) -> list:
    if not Path(path).is_file():
        raise DataError(f"graph file not found: {path}")
    return load_graphs(path)


def _default_graphs(pairs_path) -> Path:
    return Path(pairs_path).parent / "graphs.jsonl"


def read_pairs(pairs_path, graphs_path=None) -> list[GraphPair]:
    if not Path(pairs_path).is_file():
        raise DataError(f"pair file not found: {pairs_path}")
    return load_pairs(pairs_path, _read_graphs(graphs_path or _default_graphs(pairs_path)))


def dataset_from_config(cfg: Config) -> list[GraphPair]:
    if not cfg.data.pairs:
        raise ConfigError("data.pairs is not set")
    return read_pairs(cfg.data.pairs, cfg.data.graphs or None)


def parse_sweep(text: str) -> tuple[str, list[float]]:
    """``key=start:stop:step`` with ``stop`` included."""
    try:
        key, rng = text.split("=", 1)
        start, stop, step = (float(x) for x in rng.split(":"))
    except ValueError as exc:
        raise ConfigError(f"sweep must look like key=start:stop:step, got {text!r}") from exc
    if step <= 0 or stop < start:
        raise ConfigError(f"empty sweep range in {text!r}")
    count = int(round((stop - start) / step)) + 1
    return key.strip(), [round(start + i * step, 10) for i in range(count)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_range = (args.n_min, args.n_max)
    if args.n_min < 1 or args.n_max < args.n_min:
        raise ConfigError("need 1 <= --n-min <= --n-max")
    if args.task == "bsd":
        pairs = generate_bsd_pairs(args.count, n_range, args.d, seed, args.p_mask, args.p_drop)
        graphs = [g for p in pairs for g in (p.g1, p.g2)]
    elif args.families:
        graphs, idx = generate_families(args.families, args.variants, n_range, args.d, args.edit_budget, seed)
        pairs = [GraphPair(graphs[i], graphs[j]) for i, j in idx]
        if not args.no_label:
            pairs = [GraphPair(p.g1, p.g2, ged=ged_exact(p.g1, p.g2)[0]) for p in pairs]
    else:
        pairs = generate_synthetic_pairs(args.count, n_range, args.d, args.edit_budget, seed, label_with_oracle=not args.no_label)
        graphs = [g for p in pairs for g in (p.g1, p.g2)]
    write_graphs(graphs, out / "graphs.jsonl")
    write_pairs(pairs, out / "pairs.jsonl")
    params = {k: v for k, v in vars(args).items() if k not in ("func", "out", "seed", "verbose")}
    write_json(manifest("generate", params, seed), out / "manifest.json")
    print(f"graphs\t{len(graphs)}\npairs\t{len(pairs)}")
    return EXIT_OK


def cmd_ged(args) -> int:
    graphs_path = args.graphs or _default_graphs(args.pairs)
    pairs = read_pairs(args.pairs, graphs_path)
    labelled = [GraphPair(p.g1, p.g2, ged=ged_exact(p.g1, p.g2, node_limit=args.node_limit)[0], bsd_label=p.bsd_label) for p in pairs]
    write_pairs(labelled, args.out)
    write_json(manifest("ged", {"pairs": str(args.pairs), "graphs": str(graphs_path), "node_limit": args.node_limit}, 0), Path(args.out).with_suffix(".manifest.json"))
    print(f"pairs\t{len(labelled)}")
    return EXIT_OK


def _split(cfg: Config, pairs):
    s = split_dataset(pairs, tuple(cfg.data.split), cfg.seed)
    pick = lambda idx: [pairs[i] for i in idx]  # noqa: E731
    return pick(s.train), pick(s.valid), pick(s.test)


def _train_and_eval(cfg: Config, pairs, verbose: bool = False):
    tr, va, te = _split(cfg, pairs)
    held_out = te or va
    if not held_out:
        raise DataError("split leaves no pairs to evaluate on")
    every = max(1, cfg.train.epochs // 10)

    def progress(epoch, loss):
        if verbose or (epoch + 1) % every == 0:
            log.info("epoch %d loss %.6f", epoch + 1, loss)

    ckpt = train(tr, cfg, log=progress)
    report = evaluate(ckpt, held_out, cfg.train.task)
    report["split"] = "test" if te else "valid"
    return ckpt, report, (len(tr), len(va), len(te))


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    pairs = dataset_from_config(cfg)
    out = Path(args.out or cfg.data.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, report, sizes = _train_and_eval(cfg, pairs, args.verbose)
    ckpt.save(out / "checkpoint.json")
    (out / "metrics.json").write_text(dumps_report(report) + "\n")
    write_loss_curve(ckpt.loss_history, out)
    write_json(manifest("train", cfg.to_dict(), cfg.seed, optimizer=cfg.train.optimizer, split_sizes=list(sizes)), out / "manifest.json")
    print(format_metrics(report))
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.sweep:
        return _sweep(args)
    if not args.ckpt or not args.pairs:
        raise ConfigError("eval needs --ckpt and --pairs (or --sweep with --config)")
    ckpt = _load_ckpt(args.ckpt)
    pairs = read_pairs(args.pairs, args.graphs)
    report = evaluate(ckpt, pairs, args.task)
    text = dumps_report(report) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        write_json(manifest("eval", ckpt.config, ckpt.config["train"]["seed"], checkpoint=str(args.ckpt), pairs=str(args.pairs)), Path(args.out).with_suffix(".manifest.json"))
    sys.stdout.write(text)
    return EXIT_OK


def _sweep(args) -> int:
    cfg = load_config(args.config, args.set)
    key, values = parse_sweep(args.sweep)
    cfg.get(key)  # unknown keys fail before any training
    pairs = dataset_from_config(cfg)
    out = Path(args.out or cfg.data.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        run = cfg.copy()
        run.set(key, str(v))
        run.validate()
        _, report, _ = _train_and_eval(run, pairs, args.verbose)
        rows.append({"value": v, **{k: report[k] for k in ("mse", "rho", "tau", "auc") if k in report}})
        log.info("%s=%s done", key, v)
    write_sweep(key, rows, out)
    write_json(manifest("sweep", cfg.to_dict(), cfg.seed, sweep={"key": key, "values": values}), out / "manifest.json")
    metrics = [m for m in ("mse", "rho", "tau", "auc") if m in rows[0]]
    print(",".join([key] + metrics))
    for r in rows:
        print(",".join([repr(r["value"])] + [repr(r[m]) for m in metrics]))
    return EXIT_OK


def _load_ckpt(path) -> Checkpoint:
    if not Path(path).is_file():
        raise DataError(f"checkpoint not found: {path}")
    try:
        return Checkpoint.load(path)
    except (ValueError, TypeError, KeyError) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from exc


def cmd_predict(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    pairs = read_pairs(args.pairs, args.graphs)
    model = ckpt.to_model()
    task = model.cfg.train.task
    if task == "ged":
        if model.calibration is None:
            raise TaskLabelError("checkpoint has no GED calibration")
        scores = model.predict_ged(pairs)
        rows = [(p.g1.id, p.g2.id, float(s)) for p, s in zip(pairs, scores)]
        header = ("g1", "g2", "similarity")
    else:
        scores = model.raw_scores(pairs)
        thr = model.cfg.head.bsd_threshold
        rows = [(p.g1.id, p.g2.id, float(s), 1 if s > thr else -1) for p, s in zip(pairs, scores)]
        header = ("g1", "g2", "score", "label")
    write_csv(args.out, header, rows)
    write_json(manifest("predict", ckpt.config, ckpt.config["train"]["seed"], checkpoint=str(args.ckpt), pairs=str(args.pairs)), Path(args.out).with_suffix(".manifest.json"))
    print(f"pairs\t{len(rows)}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgmn", description="Contrastive graph matching: data, exact GED, training and evaluation.")
    p.add_argument("--version", action="version", version=f"cgmn {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--out", help="output directory (default: data.out)")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--count", type=int, default=200, help="number of pairs")
    g.add_argument("--seed", type=int, default=None, help="default: CGMN_SEED or 0")
    g.add_argument("--out", required=True)
    g.add_argument("--task", choices=("ged", "bsd"), default="ged")
    g.add_argument("--n-min", type=int, default=5)
    g.add_argument("--n-max", type=int, default=8)
    g.add_argument("--d", type=int, default=4, help="number of node labels (1: unlabelled)")
    g.add_argument("--edit-budget", type=int, default=3)
    g.add_argument("--families", type=int, default=0, help="ged: families of edited variants instead of independent pairs")
    g.add_argument("--variants", type=int, default=10, help="graphs per family")
    g.add_argument("--p-mask", type=float, default=0.1, help="bsd: masking for positive copies")
    g.add_argument("--p-drop", type=float, default=0.1, help="bsd: edge removal for positive copies")
    g.add_argument("--no-label", action="store_true", help="ged: skip oracle labels")
    g.set_defaults(func=cmd_generate)

    o = sub.add_parser("ged", help="label a pair file with exact GED")
    o.add_argument("--pairs", required=True)
    o.add_argument("--graphs", help="default: graphs.jsonl next to the pair file")
    o.add_argument("--out", required=True)
    o.add_argument("--node-limit", type=int, default=8)
    o.set_defaults(func=cmd_ged)

    t = sub.add_parser("train", help="train on the split of data.pairs and evaluate on its test part")
    with_config(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint, or sweep one config key")
    with_config(e)
    e.add_argument("--ckpt")
    e.add_argument("--pairs")
    e.add_argument("--graphs")
    e.add_argument("--task", choices=("ged", "bsd"))
    e.add_argument("--sweep", metavar="KEY=START:STOP:STEP")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="score pairs with a checkpoint")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--pairs", required=True)
    r.add_argument("--graphs")
    r.add_argument("--out", required=True, help="CSV file")
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    np.seterr(all="ignore")  # non-finite values are caught explicitly by the tape
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, FloatingPointError, dc.DegenerateEmbeddingError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, GraphFormatError, TaskLabelError, IntractableSizeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
