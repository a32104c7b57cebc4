"""Training loops, evaluation metrics, and the hyperparameter grid sweep.

Full-batch training with Adam, deterministic per seed. Node task: softmax
cross-entropy on labeled train nodes. Link task: BCE over train positives
plus 1:1 negatives resampled every epoch; message passing sees the
train-positive graph only. Reported test metrics always come from the epoch
with the best validation metric.
"""

import csv
import io as _io
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Adam, Parameter, Tape, grad
from .errors import ConfigError, NumericError, ValidationError
from .graph import message_passing_graph, sample_negative_pairs
from .model import GeoGNN, glorot_uniform, softmax_rows

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    lr: float = 1e-3
    dropout: float = 0.5
    seeds: tuple = DEFAULT_SEEDS
    task: str = "node"
    patience: int = 0  # 0 disables early stopping
    neg_per_pos: int = 100
    eval_k: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if len(self.seeds) == 0:
            raise ValidationError("need at least one seed")
        if self.task not in ("node", "link"):
            raise ValidationError(f"task must be 'node' or 'link', got {self.task!r}")
        if self.patience < 0:
            raise ValidationError(f"patience must be >= 0, got {self.patience}")
        if self.eval_k < 1 or self.neg_per_pos < self.eval_k:
            raise ValidationError(
                f"need neg_per_pos >= eval_k >= 1, got {self.neg_per_pos}/{self.eval_k}"
            )


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val: float


@dataclass
class RunRecord:
    task: str
    seed: int
    config: dict
    epochs: list
    test: float
    best_epoch: int

    def to_dict(self):
        return {
            "task": self.task,
            "seed": self.seed,
            "config": self.config,
            "epochs": [
                {"epoch": e.epoch, "train_loss": e.train_loss, "val": e.val}
                for e in self.epochs
            ],
            "test": self.test,
        }


@dataclass
class MetricsRecord:
    task: str
    runs: list
    aggregate_mean: float


@dataclass(frozen=True)
class NodeSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_nodes(n, ratios=(0.6, 0.2, 0.2), seed=0):
    """Seeded permutation split; sizes are cumulative floors of the ratios."""
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r <= 0 for r in ratios):
        raise ValidationError(f"ratios must be positive and sum to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(n)
    c1 = int(n * ratios[0])
    c2 = c1 + int(n * ratios[1])
    return NodeSplit(
        train=np.sort(order[:c1]),
        val=np.sort(order[c1:c2]),
        test=np.sort(order[c2:]),
    )


def evaluate_accuracy(probabilities, labels, node_ids):
    """Fraction of argmax matches; argmax takes the lowest class id on ties."""
    node_ids = np.asarray(node_ids, dtype=np.int64)
    if node_ids.size == 0:
        raise ValidationError("node id list is empty")
    predicted = np.argmax(np.asarray(probabilities)[node_ids], axis=1)
    return float(np.mean(predicted == np.asarray(labels)[node_ids]))


def pair_scores(embeddings, pairs, similarity="dot"):
    emb = np.asarray(embeddings)
    pairs = np.asarray(pairs, dtype=np.int64)
    hu = emb[pairs[..., 0]]
    hv = emb[pairs[..., 1]]
    s = np.sum(hu * hv, axis=-1)
    if similarity == "cosine":
        s = s / (np.linalg.norm(hu, axis=-1) * np.linalg.norm(hv, axis=-1))
    elif similarity != "dot":
        raise ValidationError(f"similarity must be 'dot' or 'cosine', got {similarity!r}")
    return s


def evaluate_hit_at_k(embeddings, positives, negative_pools, k, similarity="dot"):
    """Hit@k against each positive's own negative pool, pessimistic ties.

    rank = 1 + #{negatives scoring >= positive}; hit iff rank <= k, so a tie
    with the k-th negative counts as a miss.
    """
    negative_pools = np.asarray(negative_pools)
    if negative_pools.shape[1] < k:
        raise ConfigError(
            f"need at least k={k} negatives per positive, got {negative_pools.shape[1]}"
        )
    pos = pair_scores(embeddings, positives, similarity)
    neg = pair_scores(embeddings, negative_pools, similarity)
    ranks = 1 + np.sum(neg >= pos[:, None], axis=1)
    return float(np.mean(ranks <= k))


def _config_summary(model_config, train_config, seed):
    d = dict(vars(model_config))
    d.update(
        {
            "lr": train_config.lr,
            "epochs": train_config.epochs,
            "train_dropout": train_config.dropout,
            "run_seed": seed,
        }
    )
    return d


def _nonfinite(loss, epoch, model):
    return NumericError(
        f"non-finite loss {loss} at epoch {epoch}; "
        f"diagnostics: degenerate_rows={model.last_diagnostics.degenerate_rows}, "
        f"antipodal_pairs={model.last_diagnostics.antipodal_pairs}"
    )


def _train_node_one(model_config, train_config, features, graph, labels, splits, seed):
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1
    mc = replace(model_config, seed=seed, dropout=train_config.dropout)
    model = GeoGNN(mc, d_in=features.shape[1], n_classes=n_classes)
    opt = Adam(model.parameters(), lr=train_config.lr)
    drop_rng = np.random.default_rng([seed, 1])

    logs = []
    best_val = -1.0
    best_epoch = -1
    best_test = 0.0
    since_best = 0
    for epoch in range(1, train_config.epochs + 1):
        tape = Tape()
        emb = model.forward_tape(tape, features, graph, training=True, rng=drop_rng)
        logits = model.logits_tape(tape, emb)
        train_logits = tape.apply("slice_rows", logits, splits.train)
        loss = tape.apply("cross_entropy", train_logits, labels[splits.train])
        if not np.isfinite(loss.value):
            raise _nonfinite(loss.value, epoch, model)
        loss_value = float(loss.value)
        grad(loss, model.parameters())
        opt.step()
        tape.release()

        probs = model.classify(features, graph)
        val_acc = evaluate_accuracy(probs, labels, splits.val)
        logs.append(EpochLog(epoch, loss_value, val_acc))
        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_test = evaluate_accuracy(probs, labels, splits.test)
            since_best = 0
        else:
            since_best += 1
            if train_config.patience and since_best >= train_config.patience:
                break
    record = RunRecord(
        task="node",
        seed=seed,
        config=_config_summary(model_config, train_config, seed),
        epochs=logs,
        test=best_test,
        best_epoch=best_epoch,
    )
    return model, best_val, record


def train_node_classifier(model_config, train_config, features, graph, labels, splits):
    """One run per seed; returns the best-validation run's model plus the
    per-seed records and their aggregate mean test accuracy."""
    features = np.asarray(features, dtype=np.float64)
    runs = []
    best = None
    for seed in train_config.seeds:
        model, val, record = _train_node_one(
            model_config, train_config, features, graph, labels, splits, seed
        )
        runs.append(record)
        if best is None or val > best[1]:
            best = (model, val)
    record = MetricsRecord(
        task="node",
        runs=runs,
        aggregate_mean=float(np.mean([r.test for r in runs])),
    )
    return best[0], record


def _train_link_one(model_config, train_config, features, full_graph, split, seed):
    n = full_graph.n
    msg_graph = message_passing_graph(split, n)
    forbidden = full_graph.edge_set()
    forbidden.update((i, i) for i in range(n))
    forbidden = np.sort(
        np.fromiter((a * n + b for a, b in forbidden), dtype=np.int64, count=len(forbidden))
    )
    mc = replace(model_config, seed=seed, dropout=train_config.dropout)
    model = GeoGNN(mc, d_in=features.shape[1])
    opt = Adam(model.parameters(), lr=train_config.lr)
    drop_rng = np.random.default_rng([seed, 1])
    neg_rng = np.random.default_rng([seed, 2])

    from .model import link_scores_tape

    pos_pairs = split.train
    targets_pos = np.ones(len(pos_pairs))
    targets_neg = np.zeros(len(pos_pairs))

    logs = []
    best_val = -1.0
    best_epoch = -1
    best_test = 0.0
    since_best = 0
    for epoch in range(1, train_config.epochs + 1):
        negs = sample_negative_pairs(n, len(pos_pairs), forbidden, neg_rng)
        tape = Tape()
        emb = model.forward_tape(tape, features, msg_graph, training=True, rng=drop_rng)
        pos_s = link_scores_tape(tape, emb, pos_pairs)
        neg_s = link_scores_tape(tape, emb, negs)
        loss = (
            tape.apply("bce_with_logits", pos_s, targets_pos)
            + tape.apply("bce_with_logits", neg_s, targets_neg)
        ) * 0.5
        if not np.isfinite(loss.value):
            raise _nonfinite(loss.value, epoch, model)
        loss_value = float(loss.value)
        grad(loss, model.parameters())
        opt.step()
        tape.release()

        eval_emb = model.forward(features, msg_graph, training=False)
        val_hit = evaluate_hit_at_k(
            eval_emb, split.val, split.neg_val, train_config.eval_k
        )
        logs.append(EpochLog(epoch, loss_value, val_hit))
        if val_hit > best_val:
            best_val = val_hit
            best_epoch = epoch
            best_test = evaluate_hit_at_k(
                eval_emb, split.test, split.neg_test, train_config.eval_k
            )
            since_best = 0
        else:
            since_best += 1
            if train_config.patience and since_best >= train_config.patience:
                break
    record = RunRecord(
        task="link",
        seed=seed,
        config=_config_summary(model_config, train_config, seed),
        epochs=logs,
        test=best_test,
        best_epoch=best_epoch,
    )
    return model, best_val, record


def train_link_predictor(model_config, train_config, features, graph, edge_split):
    features = np.asarray(features, dtype=np.float64)
    runs = []
    best = None
    for seed in train_config.seeds:
        model, val, record = _train_link_one(
            model_config, train_config, features, graph, edge_split, seed
        )
        runs.append(record)
        if best is None or val > best[1]:
            best = (model, val)
    record = MetricsRecord(
        task="link",
        runs=runs,
        aggregate_mean=float(np.mean([r.test for r in runs])),
    )
    return best[0], record


class MLPReference:
    """One-hidden-layer MLP on raw features; the graph-free baseline."""

    def __init__(self, d_in, hidden, n_classes, seed=0):
        rng = np.random.default_rng(seed)
        self.w1 = Parameter(glorot_uniform(rng, hidden, d_in), name="mlp_w1")
        self.w2 = Parameter(glorot_uniform(rng, n_classes, hidden), name="mlp_w2")

    def parameters(self):
        return [self.w1, self.w2]

    def logits_tape(self, tape, features, training=False, dropout=0.0, rng=None):
        h = tape.apply("matmul", tape.constant(features), tape.leaf(self.w1), transpose_b=True)
        h = tape.apply("clamp", h, 0.0, np.inf)  # ReLU
        if training and dropout > 0.0:
            h = tape.apply("dropout", h, dropout, rng)
        return tape.apply("matmul", h, tape.leaf(self.w2), transpose_b=True)

    def predict_proba(self, features):
        hidden = np.maximum(features @ self.w1.value.T, 0.0)
        return softmax_rows(hidden @ self.w2.value.T)


def train_mlp_reference(train_config, features, labels, splits, hidden=64):
    """Same protocol as the node task (Adam, best-val checkpoint, seeds)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1
    runs = []
    best = None
    for seed in train_config.seeds:
        mlp = MLPReference(features.shape[1], hidden, n_classes, seed=seed)
        opt = Adam(mlp.parameters(), lr=train_config.lr)
        drop_rng = np.random.default_rng([seed, 1])
        logs = []
        best_val = -1.0
        best_epoch = -1
        best_test = 0.0
        for epoch in range(1, train_config.epochs + 1):
            tape = Tape()
            logits = mlp.logits_tape(
                tape, features, training=True, dropout=train_config.dropout, rng=drop_rng
            )
            train_logits = tape.apply("slice_rows", logits, splits.train)
            loss = tape.apply("cross_entropy", train_logits, labels[splits.train])
            if not np.isfinite(loss.value):
                raise NumericError(f"non-finite MLP loss at epoch {epoch}")
            loss_value = float(loss.value)
            grad(loss, mlp.parameters())
            opt.step()
            tape.release()
            probs = mlp.predict_proba(features)
            val_acc = evaluate_accuracy(probs, labels, splits.val)
            logs.append(EpochLog(epoch, loss_value, val_acc))
            if val_acc > best_val:
                best_val = val_acc
                best_epoch = epoch
                best_test = evaluate_accuracy(probs, labels, splits.test)
        runs.append(
            RunRecord(
                task="node",
                seed=seed,
                config={"reference": "mlp", "hidden": hidden, "run_seed": seed},
                epochs=logs,
                test=best_test,
                best_epoch=best_epoch,
            )
        )
        if best is None or best_val > best[1]:
            best = (mlp, best_val)
    record = MetricsRecord(
        task="node",
        runs=runs,
        aggregate_mean=float(np.mean([r.test for r in runs])),
    )
    return best[0], record


GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)


def grid_search(model_config, train_config, features, graph, labels, splits,
                taus=GRID, alphas=GRID):
    """Sweep (tau, alpha) on the node task; one row per cell.

    A numeric failure inside a cell is recorded in its row rather than
    aborting the sweep, so the output always covers the full grid.
    """
    rows = []
    for tau in taus:
        for alpha in alphas:
            cell = replace(model_config, tau=float(tau), alpha=float(alpha))
            try:
                _, record = train_node_classifier(
                    cell, train_config, features, graph, labels, splits
                )
                rows.append(
                    {
                        "tau": float(tau),
                        "alpha": float(alpha),
                        "status": "ok",
                        "val": max(e.val for r in record.runs for e in r.epochs),
                        "test": record.aggregate_mean,
                    }
                )
            except NumericError:
                rows.append(
                    {
                        "tau": float(tau),
                        "alpha": float(alpha),
                        "status": "numeric_failure",
                        "val": float("nan"),
                        "test": float("nan"),
                    }
                )
    return rows


def grid_rows_to_csv(rows):
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["tau", "alpha", "status", "val", "test"])
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()
