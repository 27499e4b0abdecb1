"""Command-line front end.

Subcommands::

    universe-match gen CONFIG OUT_DIR
    universe-match train DATASET TRAIN_CONFIG CHECKPOINT [--history CSV]
    universe-match eval DATASET CHECKPOINT --mode pairs|online|cluster|gradcheck
                        [--pairs N] [--k K] [--seed S]
    universe-match inspect CHECKPOINT

Configs are JSON documents. ``gen`` takes the fields of
:class:`~universe_match.datagen.GenConfig`; ``train`` takes the fields of
:class:`~universe_match.train.TrainConfig` plus an optional ``"model"``
object (``nonlinear``, ``tau``). A missing ``universe`` defaults to a
feature-merged universe sized by the dataset.

Every command prints a JSON run report (``schema_version``, ``command``,
``config``, ``seed``, ``metrics``, ``timing``, ``artifacts``). ``--report``
saves it and ``--csv`` writes the metrics as rows ``metric,value,context``,
where ``context`` names the tolerance or scope the value belongs to.

``UNIVERSE_MATCH_SEED`` overrides the configured seed and
``UNIVERSE_MATCH_THREADS`` caps BLAS/OpenMP threads. Exit status is 0 on
success, 1 when an invariant check fails, 2 on bad input or configuration and
3 on I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import gradcheck as gc
from .affinity import UniverseMetric, forward
from .core import OUTLIER, UniverseSpec, pair_node_types
from .datagen import (ConfigError, GenConfig, _atomic_write_text, content_hash, derive_pairwise_gt,
                      load_instance_set, save_instance_set)
from .metrics import MatchTypeCounts, accuracy, clustering_metrics, f1, match_types
from .multigraph import MatchSession, match_universe, mixture_pipeline
from .solver import reconstruct_pairwise
from .train import SAME_CLASS, TrainConfig, load_checkpoint, sample_pairs, save_checkpoint, train

SCHEMA_VERSION = 1
SEED_ENV = "UNIVERSE_MATCH_SEED"
THREADS_ENV = "UNIVERSE_MATCH_THREADS"
GRADCHECK_TOL = 1e-5
ONLINE_GRAPHS = 15

EXIT_OK, EXIT_INVARIANT, EXIT_INPUT, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("universe_match")


class InputError(Exception):
    pass


def _env_seed(default: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _read_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return doc


def _report(command: str, config: dict, seed: int, metrics: dict, started: float,
            artifacts: Optional[dict] = None, context: Optional[dict] = None, ok: bool = True) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "ok": ok,
        "config": config,
        "seed": seed,
        "metrics": metrics,
        "metric_context": context or {},
        "timing": {"seconds": round(time.perf_counter() - started, 6)},
        "artifacts": artifacts or {},
    }


def report_csv(report: dict) -> str:
    """Flatten a report's metrics into ``metric,value,context`` rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value", "context"])
    ctx = report.get("metric_context", {})

    def emit(prefix, value):
        if isinstance(value, dict):
            for k, v in value.items():
                emit(f"{prefix}.{k}" if prefix else k, v)
        elif isinstance(value, (list, tuple)):
            for k, v in enumerate(value):
                emit(f"{prefix}[{k}]", v)
        else:
            w.writerow([prefix, repr(value) if isinstance(value, float) else value,
                        ctx.get(prefix, ctx.get(prefix.split(".")[0].split("[")[0], ""))])

    emit("", report["metrics"])
    return buf.getvalue()


def _emit(report: dict, args) -> None:
    text = json.dumps(report, indent=1, sort_keys=False)
    print(text)
    if getattr(args, "report", None):
        _atomic_write_text(Path(args.report), text + "\n")
    if getattr(args, "csv", None):
        _atomic_write_text(Path(args.csv), report_csv(report))


def cmd_gen(args) -> int:
    started = time.perf_counter()
    doc = _read_json(args.config)
    if "seed" in doc or os.environ.get(SEED_ENV):
        doc["seed"] = _env_seed(int(doc.get("seed", 0)))
    config = GenConfig.from_dict(doc)
    from .datagen import generate

    iset = generate(config)
    man = save_instance_set(iset, args.out)
    summary = {k: man[k] for k in ("graph_count", "graphs_per_class", "node_count", "outlier_count",
                                   "anchors_per_class", "feature_dim", "prototypes_orthogonal")}
    summary["content_hash"] = content_hash(args.out)
    _emit(_report("gen", config.to_dict(), config.seed, summary, started,
                  artifacts={"dataset": str(args.out)}), args)
    return EXIT_OK


def _train_config(doc: dict, dataset) -> tuple[TrainConfig, dict]:
    doc = dict(doc)
    model = doc.pop("model", {}) or {}
    unknown = set(model) - {"nonlinear", "tau"}
    if unknown:
        raise ConfigError(f"model.{sorted(unknown)[0]}", "unknown field")
    try:
        config = TrainConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise InputError(f"train config: {exc}") from None
    config.seed = _env_seed(config.seed)
    if config.universe is None:
        config.universe = UniverseSpec.for_classes(dataset.anchors_per_class)
    return config, {"nonlinear": bool(model.get("nonlinear", True)), "tau": float(model.get("tau", 1.0))}


def cmd_train(args) -> int:
    started = time.perf_counter()
    dataset = load_instance_set(args.dataset)
    config, model = _train_config(_read_json(args.config), dataset)
    ckpt = Path(args.checkpoint)
    if not ckpt.parent.is_dir():
        raise OSError(f"checkpoint directory {ckpt.parent} does not exist")
    metric = UniverseMetric.init(dataset.feature_dim, config.universe, seed=config.seed, **model)
    trained, history = train(metric, dataset, config)
    save_checkpoint(trained, ckpt, config)
    hist_path = Path(args.history) if args.history else ckpt.with_name(ckpt.name + ".history.csv")
    _atomic_write_text(hist_path, history.to_csv())
    last = history.last()
    metrics = {"epochs_run": len(history.epochs), "final_loss": last.get("loss"),
               "heldout_f1": last.get("heldout_f1"), "absorption": last.get("absorption")}
    echo = config.to_dict()
    echo["model"] = model
    _emit(_report("train", echo, config.seed, metrics, started,
                  artifacts={"checkpoint": str(ckpt), "history": str(hist_path)},
                  context={"heldout_f1": "mean same-class pair F1 on the held-out split",
                           "absorption": "share of held-out planted outliers argmax on the absorbing anchor"}),
          args)
    return EXIT_OK


def _pair_scores(pred, gt, types_a, types_b):
    f, p, r = f1(pred, gt)
    return f, p, r, accuracy(pred, gt), match_types(pred, types_a, types_b, gt)


def _eval_pairs(dataset, metric, n_pairs: int, rng) -> tuple[dict, bool]:
    assignments, _ = match_universe(dataset.graphs, metric)
    by_id = {g.id: a for g, a in zip(dataset.graphs, assignments)}
    pairs = sample_pairs(dataset, SAME_CLASS, n_pairs, rng)
    rows, hist = [], MatchTypeCounts()
    for ga, gb, gt in pairs:
        pred = reconstruct_pairwise(by_id[ga.id], by_id[gb.id])
        ta, tb = pair_node_types(gt, dataset.mgc_bits(ga), dataset.mgc_bits(gb))
        f, p, r, acc, mt = _pair_scores(pred, gt, ta, tb)
        rows.append((f, p, r, acc))
        hist += mt
    mean = np.mean(rows, axis=0)
    return {"pairs": len(pairs), "f1": float(mean[0]), "precision": float(mean[1]), "recall": float(mean[2]),
            "accuracy": float(mean[3]), "match_types": hist.__dict__.copy(), "match_type_ratios": hist.ratios()}, True


def _eval_online(dataset, metric, rng) -> tuple[dict, bool]:
    groups = dataset.by_class()
    classes = sorted(groups)
    cid = classes[int(rng.integers(len(classes)))]
    pool = groups[cid]
    pick = rng.choice(len(pool), size=min(ONLINE_GRAPHS, len(pool)), replace=False)
    graphs = [pool[i] for i in pick]
    session = MatchSession(metric)
    for g in graphs:
        session.add(g)
        log.info("admitted %s: %d forward, %d hungarian", g.id, *session.op_log[-1])
    batch, _ = match_universe(graphs, metric)
    identical = all(np.array_equal(s.assign, b.assign) for s, b in zip(session.stored, batch))
    constant = all(ops == (1, 1) for ops in session.op_log)
    m = len(graphs)
    x = {(i, j): session.pairwise(i, j) for i in range(m) for j in range(m)}
    violations = 0
    for i in range(m):
        for k in range(m):
            for j in range(m):
                violations += int(np.sum((x[i, k].astype(np.int64) @ x[k, j]) > x[i, j]))
    scores = [f1(x[i, j], derive_pairwise_gt(graphs[i], graphs[j]))[0] for i in range(m) for j in range(i + 1, m)]
    metrics = {"class_id": int(cid), "graphs": m, "forwards": session.forward_count,
               "hungarian_calls": session.hungarian_count, "ops_per_admission": [list(o) for o in session.op_log],
               "batch_identical": identical, "constant_cost": constant, "cycle_violations": violations,
               "f1": float(np.mean(scores)) if scores else float("nan")}
    return metrics, identical and constant and violations == 0


def _eval_cluster(dataset, metric, k: int, rng, seed: int) -> tuple[dict, bool]:
    groups = dataset.by_class()
    classes = sorted(groups)
    if not 1 <= k <= len(classes):
        raise InputError(f"--k must be in [1, {len(classes)}] for this dataset, got {k}")
    chosen = sorted(int(c) for c in rng.choice(classes, size=k, replace=False))
    graphs = [g for c in chosen for g in groups[c]]
    result = mixture_pipeline(graphs, metric, k, seed=seed)
    m = len(graphs)
    pf, pa = np.zeros((m, m)), np.zeros((m, m))
    for (a, b), x in result.all_matchings.items():
        gt = derive_pairwise_gt(graphs[a], graphs[b])
        pf[a, b] = pf[b, a] = f1(x, gt)[0]
        pa[a, b] = pa[b, a] = accuracy(x, gt)
    scores = clustering_metrics(result.clusters, [g.class_id for g in graphs], pf, pa)
    metrics = {"classes": chosen, "graphs": m, "k": k, **scores.__dict__,
               "labels": result.clusters.labels.tolist()}
    return metrics, True


def _eval_gradcheck(dataset, metric, rng, seed: int) -> tuple[dict, bool]:
    rep = gc.run_loss_gradcheck(count=100, seed=seed)
    pairs = sample_pairs(dataset, SAME_CLASS, 1, rng)
    ga, gb, gt = pairs[0]
    per_param = {}
    for aware in (True, False):
        errs = gc.metric_gradcheck(metric, ga.features, gb.features, gt, outlier_aware=aware)
        tag = "outlier_aware" if aware else "vanilla"
        per_param.update({f"{tag}.{k}": v for k, v in errs.items()})
    worst = max(rep.max_rel_error, max(per_param.values()))
    metrics = {"instances": rep.instances, "loss_vanilla": rep.max_rel_error_vanilla,
               "loss_outlier_aware": rep.max_rel_error_outlier_aware, "parameters": per_param,
               "pair": [ga.id, gb.id], "max_rel_error": worst, "passed": worst < GRADCHECK_TOL}
    return metrics, worst < GRADCHECK_TOL


def cmd_eval(args) -> int:
    started = time.perf_counter()
    dataset = load_instance_set(args.dataset)
    metric, doc = load_checkpoint(args.checkpoint)
    if dataset.feature_dim != metric.d:
        raise InputError(f"dataset feature dim {dataset.feature_dim} != checkpoint dim {metric.d}")
    seed = args.seed if args.seed is not None else _env_seed(0)
    rng = np.random.default_rng(seed)
    context = {}
    if args.mode == "pairs":
        metrics, ok = _eval_pairs(dataset, metric, args.pairs, rng)
        context = {"f1": "mean over sampled same-class pairs", "accuracy": "normalized by the prediction"}
    elif args.mode == "online":
        metrics, ok = _eval_online(dataset, metric, rng)
        context = {"batch_identical": "exact", "cycle_violations": "exact, must be 0"}
    elif args.mode == "cluster":
        if args.k is None:
            raise InputError("--mode cluster needs --k")
        metrics, ok = _eval_cluster(dataset, metric, args.k, rng, seed)
        context = {"f1c": "within-cluster mean over unordered pairs", "mac": "within-cluster mean over unordered pairs"}
    else:
        metrics, ok = _eval_gradcheck(dataset, metric, rng, seed)
        context = {"max_rel_error": f"norm-wise, h={gc.FD_STEP}, tol={GRADCHECK_TOL}",
                   "loss_vanilla": f"tol={GRADCHECK_TOL}", "loss_outlier_aware": f"tol={GRADCHECK_TOL}"}
    config = {"mode": args.mode, "pairs": args.pairs, "k": args.k, "dataset": str(args.dataset),
              "checkpoint": str(args.checkpoint), "checkpoint_config_hash": doc.get("config_hash")}
    _emit(_report("eval", config, seed, metrics, started, context=context, ok=ok), args)
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_inspect(args) -> int:
    started = time.perf_counter()
    metric, doc = load_checkpoint(args.checkpoint)
    meta = {"format": doc["format"], "version": doc["version"], "universe": doc["universe"],
            "feature_dim": metric.d, "n_u": metric.n_u, "nonlinear": metric.nonlinear, "tau": metric.tau,
            "config_hash": doc.get("config_hash"), "weight_norm": float(np.linalg.norm(metric.weight))}
    cfg = doc.get("config") or {}
    _emit(_report("inspect", cfg, cfg.get("seed"), meta, started, artifacts={"checkpoint": str(args.checkpoint)}),
          args)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="universe-match", description="Universe-graph partial matching.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def outputs(sp):
        sp.add_argument("--report", help="also write the JSON report here")
        sp.add_argument("--csv", help="write metrics as metric,value,context rows")

    g = sub.add_parser("gen", help="generate a synthetic instance set")
    g.add_argument("config")
    g.add_argument("out")
    outputs(g)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a universe metric")
    t.add_argument("dataset")
    t.add_argument("config")
    t.add_argument("checkpoint")
    t.add_argument("--history", help="history CSV path (default: CHECKPOINT.history.csv)")
    outputs(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("dataset")
    e.add_argument("checkpoint")
    e.add_argument("--mode", required=True, choices=["pairs", "online", "cluster", "gradcheck"])
    e.add_argument("--pairs", type=int, default=100, help="number of sampled pairs (pairs mode)")
    e.add_argument("--k", type=int, help="cluster count (cluster mode)")
    e.add_argument("--seed", type=int, help="sampling seed (default: $%s or 0)" % SEED_ENV)
    outputs(e)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="dump checkpoint metadata")
    i.add_argument("checkpoint")
    outputs(i)
    i.set_defaults(func=cmd_inspect)
    return p


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise InputError(f"{THREADS_ENV} must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except ConfigError as exc:
        print(f"config error in field {exc.field!r}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
