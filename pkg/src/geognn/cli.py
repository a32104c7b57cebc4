"""Command-line surface.

Subcommands: synth, smooth, drift, train, eval, gridsearch, gradcheck.
Exit codes: 0 success, 2 validation/config error, 3 numeric failure.
Concurrent invocations must target distinct output directories; nothing is
shared between processes except the files themselves.
"""

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import io as gio
from .autodiff import Tape, check_gradients
from .drift import DriftConfig, drift_curve, drift_report
from .errors import ConfigError, GeognnError, NumericError
from .graph import build_csr, split_edges, message_passing_graph
from .model import GeoGNN, ModelConfig
from .smoothing import AggregatorKind, smooth
from .synth import SynthSpec, generate
from .training import (
    TrainConfig,
    evaluate_accuracy,
    evaluate_hit_at_k,
    grid_search,
    split_nodes,
    train_link_predictor,
    train_node_classifier,
)

logger = logging.getLogger("geognn")

GRID_DEFAULT = "1e-4,1e-3,1e-2,1e-1,1,10,100"


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _float_list(text):
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated float list, got {text!r}")


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args):
    spec = SynthSpec(
        n=args.nodes,
        d=args.dim,
        n_classes=args.classes,
        kappa=args.kappa,
        p_in=args.p_in,
        p_out=args.p_out,
        seed=args.seed,
    )
    dataset = generate(spec)
    out = _ensure_dir(args.out)
    gio.write_embeddings(dataset.features, os.path.join(out, "features.gemb"))
    gio.write_labels_tsv(dataset.labels, os.path.join(out, "labels.tsv"))
    gio.write_edges_tsv(dataset.edges, os.path.join(out, "edges.tsv"))
    gio.write_json(dataclasses.asdict(spec), os.path.join(out, "spec.json"))
    print(
        f"synth: n={spec.n} d={spec.d} classes={spec.n_classes} "
        f"edges={dataset.edges.shape[0]} -> {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# smooth


def cmd_smooth(args):
    features = gio.read_embeddings(args.features)
    edges = gio.read_edges_tsv(args.edges, n=features.shape[0])
    graph = build_csr(edges, features.shape[0], add_self_loops=not args.no_self_loops)
    kind = AggregatorKind.parse(args.aggregator, tau=args.tau, alpha=args.alpha)
    trace = smooth(features, graph, kind, args.layers)
    out = _ensure_dir(args.out)
    files = []
    for layer, snapshot in enumerate(trace):
        name = f"layer_{layer}.gemb"
        gio.write_embeddings(snapshot, os.path.join(out, name))
        files.append(name)
    manifest = {
        "aggregator": args.aggregator,
        "tau": args.tau,
        "alpha": args.alpha,
        "layers": args.layers,
        "self_loops": not args.no_self_loops,
        "features": os.path.abspath(args.features),
        "edges": os.path.abspath(args.edges),
        "files": files,
    }
    gio.write_json(manifest, os.path.join(out, "manifest.json"))
    print(f"smooth: {args.aggregator}, {len(files)} layer files -> {out}")
    return 0


# ---------------------------------------------------------------------------
# drift


def _drift_config(args):
    return DriftConfig(k=args.k, r=args.r, epsilon=args.epsilon)


def _curve_rows(aggregator, reports):
    return [
        {"layer": r.layer, "aggregator": aggregator, "mean_drift": repr(r.mean_drift)}
        for r in reports
    ]


def cmd_drift(args):
    config = _drift_config(args)
    if args.manifest and args.aggregator:
        raise ConfigError("give either --manifest or --aggregator, not both")

    if args.manifest:
        manifest = gio.read_json(args.manifest)
        base = os.path.dirname(os.path.abspath(args.manifest))
        reference = gio.read_embeddings(manifest["features"])
        snapshots = [
            gio.read_embeddings(os.path.join(base, name))
            for name in manifest["files"]
        ]
        reports = drift_curve(snapshots, reference, config)
        rows = _curve_rows(manifest["aggregator"], reports)
        gio.write_csv_rows(rows, ["layer", "aggregator", "mean_drift"], args.out)
        print(f"drift: {len(rows)} layers -> {args.out}")
        return 0

    if args.aggregator:
        if args.edges is None or args.features is None:
            raise ConfigError("--aggregator mode needs --features and --edges")
        features = gio.read_embeddings(args.features)
        edges = gio.read_edges_tsv(args.edges, n=features.shape[0])
        graph = build_csr(
            edges, features.shape[0], add_self_loops=not args.no_self_loops
        )
        kind = AggregatorKind.parse(args.aggregator, tau=args.tau, alpha=args.alpha)
        trace = smooth(features, graph, kind, args.layers)
        reports = drift_curve(trace.snapshots, features, config)
        rows = _curve_rows(args.aggregator, reports)
        gio.write_csv_rows(rows, ["layer", "aggregator", "mean_drift"], args.out)
        print(f"drift: {len(rows)} layers -> {args.out}")
        return 0

    if args.features is None:
        raise ConfigError("drift needs --features (or --manifest)")
    features = gio.read_embeddings(args.features)
    if args.embeddings:
        current = gio.read_embeddings(args.embeddings)
    else:
        current = features
    report = drift_report(current, features, config, layer=args.layer)
    gio.write_json(report.to_dict(), args.out)
    print(f"drift: mean={report.mean_drift:.6f} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train / eval


def _load_dataset(run, need_labels):
    for key in ("features", "edges") + (("labels",) if need_labels else ()):
        if key not in run.data:
            raise ConfigError(f"config data.{key} is required for this task")
    features = gio.read_embeddings(run.data["features"])
    n = features.shape[0]
    edges = gio.read_edges_tsv(run.data["edges"], n=n)
    labels = gio.read_labels_tsv(run.data["labels"], n=n) if need_labels else None
    return features, edges, labels


def _write_metrics(out, record):
    for run_record in record.runs:
        gio.write_json(
            run_record.to_dict(), os.path.join(out, f"metrics_seed{run_record.seed}.json")
        )
    rows = [
        {
            "seed": r.seed,
            "best_epoch": r.best_epoch,
            "val": repr(r.epochs[r.best_epoch - 1].val),
            "test": repr(r.test),
        }
        for r in record.runs
    ]
    gio.write_csv_rows(rows, ["seed", "best_epoch", "val", "test"],
                       os.path.join(out, "metrics.csv"))


def cmd_train(args):
    run = gio.load_run_config(args.config)
    train_config = run.train
    if args.task:
        train_config = dataclasses.replace(train_config, task=args.task)
    out = _ensure_dir(args.out)
    splits_dir = _ensure_dir(os.path.join(out, "splits"))

    if train_config.task == "node":
        features, edges, labels = _load_dataset(run, need_labels=True)
        n = features.shape[0]
        graph = build_csr(edges, n, add_self_loops=True)
        splits = split_nodes(n, seed=args.split_seed)
        for name in ("train", "val", "test"):
            gio.write_split_ids(
                getattr(splits, name), os.path.join(splits_dir, f"{name}.txt")
            )
        model, record = train_node_classifier(
            run.model, train_config, features, graph, labels, splits
        )
    else:
        features, edges, _ = _load_dataset(run, need_labels=False)
        n = features.shape[0]
        graph = build_csr(edges, n, add_self_loops=False)
        split = split_edges(
            graph, neg_per_pos=train_config.neg_per_pos, seed=args.split_seed
        )
        for name in ("train", "val", "test"):
            gio.write_edges_tsv(
                split.positives(name), os.path.join(splits_dir, f"{name}_edges.tsv")
            )
        model, record = train_link_predictor(
            run.model, train_config, features, graph, split
        )

    gio.save_checkpoint(model, os.path.join(out, "checkpoint.ckpt"))
    _write_metrics(out, record)
    print(
        f"train: task={train_config.task} seeds={len(record.runs)} "
        f"mean_test={record.aggregate_mean:.4f} -> {out}"
    )
    return 0


def cmd_eval(args):
    model = gio.load_checkpoint(args.checkpoint)
    features = gio.read_embeddings(args.features)
    n = features.shape[0]
    edges = gio.read_edges_tsv(args.edges, n=n)

    if args.task == "node":
        if not args.labels or not args.test_ids:
            raise ConfigError("node eval needs --labels and --test-ids")
        labels = gio.read_labels_tsv(args.labels, n=n)
        test_ids = gio.read_split_ids(args.test_ids)
        graph = build_csr(edges, n, add_self_loops=True)
        probs = model.classify(features, graph)
        value = evaluate_accuracy(probs, labels, test_ids)
        payload = {"task": "node", "metric": "accuracy", "value": value}
    else:
        graph = build_csr(edges, n, add_self_loops=False)
        split = split_edges(graph, neg_per_pos=args.neg_per_pos, seed=args.split_seed)
        msg_graph = message_passing_graph(split, n)
        embeddings = model.forward(features, msg_graph, training=False)
        value = evaluate_hit_at_k(embeddings, split.test, split.neg_test, args.k)
        payload = {
            "task": "link",
            "metric": f"hit_at_{args.k}",
            "neg_per_pos": args.neg_per_pos,
            "value": value,
        }

    payload["checkpoint"] = os.path.abspath(args.checkpoint)
    gio.write_json(payload, args.out)
    print(f"eval: {payload['metric']}={value:.4f} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# gridsearch / gradcheck


def cmd_gridsearch(args):
    run = gio.load_run_config(args.config)
    features, edges, labels = _load_dataset(run, need_labels=True)
    n = features.shape[0]
    graph = build_csr(edges, n, add_self_loops=True)
    splits = split_nodes(n, seed=args.split_seed)
    taus = _float_list(args.taus)
    alphas = _float_list(args.alphas)
    layer_counts = [int(x) for x in _float_list(args.layers_list)] \
        if args.layers_list else [run.model.layers]
    head_counts = [int(x) for x in _float_list(args.heads_list)] \
        if args.heads_list else [run.model.heads]

    rows = []
    for layers in layer_counts:
        for heads in head_counts:
            base = dataclasses.replace(run.model, layers=layers, heads=heads)
            for cell in grid_search(
                base, run.train, features, graph, labels, splits,
                taus=taus, alphas=alphas,
            ):
                row = {"layers": layers, "heads": heads}
                row.update(cell)
                rows.append(row)
    gio.write_csv_rows(
        rows, ["layers", "heads", "tau", "alpha", "status", "val", "test"], args.out
    )
    failures = sum(r["status"] != "ok" for r in rows)
    print(f"gridsearch: {len(rows)} cells, {failures} numeric failures -> {args.out}")
    return 0


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    n, d_in, n_classes = 12, 6, 3
    features = rng.normal(size=(n, d_in))
    features /= np.linalg.norm(features, axis=1, keepdims=True)
    coin = rng.random((n, n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if coin[i, j] < 0.3]
    graph = build_csr(pairs, n, add_self_loops=True)
    labels = rng.integers(0, n_classes, n)
    config = ModelConfig(layers=2, heads=2, d_h=4, tau=1.0, alpha=1.0, seed=args.seed)
    model = GeoGNN(config, d_in=d_in, n_classes=n_classes)

    def build_loss():
        tape = Tape()
        emb = model.forward_tape(tape, features, graph, training=False)
        logits = model.logits_tape(tape, emb)
        return tape.apply("cross_entropy", logits, labels)

    error = check_gradients(build_loss, model.parameters())
    print(f"gradcheck: max relative error {error:.3e} (threshold {args.threshold:g})")
    if not error < args.threshold:
        return 3
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="geognn",
        description="Spherical message passing and semantic-drift analysis.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log config defaulting and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic sphere dataset")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--p-in", type=float, default=0.05)
    p.add_argument("--p-out", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("smooth", help="run parameter-free smoothing layers")
    p.add_argument("--features", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--aggregator", required=True,
                   choices=["mean", "laplacian", "attention", "geodesic"])
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--no-self-loops", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("drift", help="local-PCA drift report or per-layer curve")
    p.add_argument("--features", help="original features (kNN reference)")
    p.add_argument("--embeddings", help="states to score; defaults to --features")
    p.add_argument("--manifest", help="smooth manifest for a per-layer curve")
    p.add_argument("--aggregator",
                   choices=["mean", "laplacian", "attention", "geodesic"],
                   help="smooth in-process, then emit the per-layer curve")
    p.add_argument("--edges")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--no-self-loops", action="store_true")
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--r", type=int, default=8)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--layer", type=int, default=0,
                   help="layer label recorded in a one-shot report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_drift)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--task", choices=["node", "link"])
    p.add_argument("--config", required=True)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--task", choices=["node", "link"], required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--labels")
    p.add_argument("--test-ids")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--neg-per-pos", type=int, default=100)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gridsearch", help="sweep tau/alpha (and layers/heads)")
    p.add_argument("--config", required=True)
    p.add_argument("--taus", default=GRID_DEFAULT)
    p.add_argument("--alphas", default=GRID_DEFAULT)
    p.add_argument("--layers-list")
    p.add_argument("--heads-list")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("gradcheck", help="finite-difference check on a small model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return exc.exit_code
    except GeognnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
