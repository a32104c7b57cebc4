"""Trainable spherical message-passing model.

Each layer: per-head linear projection, projection onto the unit sphere,
log-map of neighbors into the anchor's tangent space, attention weights
softmax(cos theta / tau), tangent aggregation, exp-map update with step
alpha, head concatenation. Three ablation switches degrade the layer back
toward ordinary mean aggregation. All arithmetic runs through the tape so
the whole model is differentiable end to end.
"""

from dataclasses import dataclass, field

import numpy as np

from . import sphere
from .autodiff import Parameter, Tape, grad
from .errors import ConfigError, NumericError, ValidationError


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    heads: int = 4
    d_h: int = 16
    tau: float = 1.0
    alpha: float = 1.0
    dropout: float = 0.0
    no_geodesic: bool = False
    no_cos: bool = False
    no_normalization: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ValidationError(f"layers must be >= 1, got {self.layers}")
        if self.heads < 1:
            raise ValidationError(f"heads must be >= 1, got {self.heads}")
        if self.d_h < 2:
            raise ValidationError(f"d_h must be >= 2, got {self.d_h}")
        if not self.tau > 0:
            raise ValidationError(f"tau must be > 0, got {self.tau}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def width(self):
        return self.heads * self.d_h


def glorot_uniform(rng, fan_out, fan_in):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_out, fan_in))


@dataclass
class LayerDiagnostics:
    degenerate_rows: int = 0
    antipodal_pairs: int = 0


class GeoGNN:
    """L stacked geodesic layers plus an optional linear classification head.

    Weight shapes are fixed at construction (input d -> width, width -> width,
    ...), so dimension chain mismatches surface as ConfigError before any
    training step.
    """

    def __init__(self, config, d_in, n_classes=None):
        self.config = config
        self.d_in = d_in
        self.n_classes = n_classes
        rng = np.random.default_rng(config.seed)
        self.weights = []
        fan_in = d_in
        for layer in range(config.layers):
            w = Parameter(glorot_uniform(rng, config.width, fan_in), name=f"W{layer}")
            self.weights.append(w)
            fan_in = config.width
        self.head = None
        if n_classes is not None:
            if n_classes < 2:
                raise ValidationError(f"need >= 2 classes, got {n_classes}")
            self.head = Parameter(
                glorot_uniform(rng, n_classes, config.width), name="W_o"
            )
        self.last_diagnostics = LayerDiagnostics()

    def parameters(self):
        params = list(self.weights)
        if self.head is not None:
            params.append(self.head)
        return params

    def _uniform_weights(self, tape, graph):
        deg = graph.degrees().astype(np.float64)
        return tape.constant(1.0 / deg[graph.anchors])

    def _layer(self, tape, h, graph, layer_idx, training, rng):
        cfg = self.config
        w = tape.leaf(self.weights[layer_idx])
        heads = []
        euclidean = cfg.no_geodesic or cfg.no_normalization
        for head in range(cfg.heads):
            rows = np.arange(head * cfg.d_h, (head + 1) * cfg.d_h, dtype=np.int64)
            w_h = tape.apply("slice_rows", w, rows)
            z = tape.apply("matmul", h, w_h, transpose_b=True)

            if cfg.no_normalization:
                x = z
                unit = tape.apply("row_normalize", z)  # cosines only
            else:
                x = tape.apply("row_normalize", z)
                unit = x
                self.last_diagnostics.degenerate_rows += tape.nodes[x.id].meta[
                    "n_degenerate"
                ]

            xa = tape.apply("slice_rows", unit, graph.anchors)
            xs = tape.apply("slice_rows", unit, graph.col_indices)
            raw = tape.apply("rowsum", tape.apply("mul", xa, xs))
            self.last_diagnostics.antipodal_pairs += int(
                np.count_nonzero(raw.value < sphere.ANTIPODAL_DOT)
            )
            cosine = tape.apply(
                "clamp", raw, -sphere.COS_CLAMP, sphere.COS_CLAMP
            )

            if cfg.no_cos:
                weights = self._uniform_weights(tape, graph)
            else:
                weights = tape.apply(
                    "segment_softmax", cosine * (1.0 / cfg.tau), graph.row_offsets
                )

            if euclidean:
                # weighted Euclidean mean replaces the whole log/exp cycle
                vals = tape.apply("slice_rows", x, graph.col_indices)
                out = tape.apply(
                    "segment_sum",
                    tape.apply("scale_rows", vals, weights),
                    graph.row_offsets,
                    graph.anchors,
                )
            else:
                # log map: v = (theta/sin theta) (x_j - <x_i,x_j> x_i);
                # raw dot in the difference keeps self-loop tangents exactly 0
                xa_full, xs_full = xa, xs
                theta = tape.apply("arccos", cosine)
                diff = tape.apply(
                    "sub", xs_full, tape.apply("scale_rows", xa_full, raw)
                )
                tangents = tape.apply(
                    "scale_rows", diff, tape.apply("arc_scale", theta)
                )
                u = tape.apply(
                    "segment_sum",
                    tape.apply("scale_rows", tangents, weights),
                    graph.row_offsets,
                    graph.anchors,
                )
                norm_u = tape.apply("rownorm", u)
                am = norm_u * cfg.alpha
                moved = tape.apply(
                    "add",
                    tape.apply("scale_rows", x, tape.apply("cos", am)),
                    tape.apply(
                        "scale_rows", u, tape.apply("sinc", am) * cfg.alpha
                    ),
                )
                out = tape.apply("row_normalize", moved)
            heads.append(out)
        merged = heads[0] if len(heads) == 1 else tape.apply("concat_cols", heads)
        if np.isnan(merged.value).any():
            raise NumericError(
                f"NaN in layer {layer_idx} output "
                f"(degenerate_rows={self.last_diagnostics.degenerate_rows}, "
                f"antipodal_pairs={self.last_diagnostics.antipodal_pairs})"
            )
        if training and cfg.dropout > 0.0 and layer_idx < cfg.layers - 1:
            merged = tape.apply("dropout", merged, cfg.dropout, rng)
        return merged

    def forward_tape(self, tape, features, graph, training=False, rng=None, capture=None):
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] != graph.n:
            raise ValidationError(
                f"feature rows ({features.shape[0]}) != graph nodes ({graph.n})"
            )
        if features.shape[1] != self.d_in:
            raise ConfigError(
                f"model built for d_in={self.d_in}, features have d={features.shape[1]}"
            )
        if training and self.config.dropout > 0.0 and rng is None:
            raise ValidationError("training with dropout needs an rng")
        self.last_diagnostics = LayerDiagnostics()
        h = tape.constant(features)
        for layer_idx in range(self.config.layers):
            h = self._layer(tape, h, graph, layer_idx, training, rng)
            if capture is not None:
                capture.append(h.value.copy())
        return h

    def forward(self, features, graph, training=False, rng=None, capture=None):
        tape = Tape()
        out = self.forward_tape(
            tape, features, graph, training=training, rng=rng, capture=capture
        ).value
        tape.release()
        return out

    def logits_tape(self, tape, embeddings):
        if self.head is None:
            raise ConfigError("model was built without a classification head")
        return tape.apply("matmul", embeddings, tape.leaf(self.head), transpose_b=True)

    def classify(self, features, graph):
        """Class probabilities per node; rows sum to 1."""
        emb = self.forward(features, graph, training=False)
        return softmax_rows(emb @ self.head.value.T)


def softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def classify(embeddings, head_weights):
    """softmax(W_o h) for a standalone head matrix."""
    return softmax_rows(np.asarray(embeddings) @ np.asarray(head_weights).T)


def score_link(h_u, h_v, similarity="dot"):
    """sigma(sim(h_u, h_v)) for vectors or row-matched matrices."""
    h_u = np.asarray(h_u, dtype=np.float64)
    h_v = np.asarray(h_v, dtype=np.float64)
    if similarity == "dot":
        sim = np.sum(h_u * h_v, axis=-1)
    elif similarity == "cosine":
        nu = np.linalg.norm(h_u, axis=-1)
        nv = np.linalg.norm(h_v, axis=-1)
        sim = np.sum(h_u * h_v, axis=-1) / (nu * nv)
    else:
        raise ValidationError(f"similarity must be 'dot' or 'cosine', got {similarity!r}")
    return 1.0 / (1.0 + np.exp(-sim))


def link_scores_tape(tape, embeddings, pairs, similarity="dot"):
    """Raw (pre-sigmoid) pair scores as a tape tensor, for BCE training."""
    pairs = np.asarray(pairs, dtype=np.int64)
    hu = tape.apply("slice_rows", embeddings, pairs[:, 0])
    hv = tape.apply("slice_rows", embeddings, pairs[:, 1])
    if similarity == "cosine":
        hu = tape.apply("row_normalize", hu)
        hv = tape.apply("row_normalize", hv)
    elif similarity != "dot":
        raise ValidationError(f"similarity must be 'dot' or 'cosine', got {similarity!r}")
    return tape.apply("rowsum", tape.apply("mul", hu, hv))
