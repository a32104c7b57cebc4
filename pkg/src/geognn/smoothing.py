"""Parameter-free layered propagation with four aggregation schemes.

Produces per-layer feature snapshots so the drift metric can track how far
each scheme pushes representations off the original feature manifold.
Self-loop policy, neighbor order, and softmax stabilization are shared with
the trainable model through graph.Graph and kernels.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels, sphere
from .errors import DegenerateInputError, ValidationError


class Aggregator(Enum):
    MEAN = "mean"
    LAPLACIAN = "laplacian"
    ATTENTION = "attention"
    GEODESIC = "geodesic"


@dataclass(frozen=True)
class AggregatorKind:
    """Aggregation scheme plus its (fixed) knobs.

    tau is the attention temperature (attention/geodesic), alpha the
    geodesic step size. Both default to the neutral value 1.
    """

    kind: Aggregator
    tau: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError(f"tau must be > 0, got {self.tau}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")

    @classmethod
    def parse(cls, name, tau=1.0, alpha=1.0):
        try:
            kind = Aggregator(name.lower())
        except ValueError:
            raise ValidationError(
                f"unknown aggregator {name!r}; expected one of "
                f"{[a.value for a in Aggregator]}"
            )
        return cls(kind, tau=tau, alpha=alpha)


@dataclass
class LayerTrace:
    """Snapshots [layer 0 .. layer L]; snapshot 0 is the (possibly sphere-
    projected, for the geodesic scheme) input."""

    kind: AggregatorKind
    snapshots: list

    def __iter__(self):
        return iter(self.snapshots)

    def __len__(self):
        return len(self.snapshots)


def _check_nonzero_rows(features, scheme):
    norms = np.linalg.norm(features, axis=1)
    bad = np.nonzero(norms < sphere.ZERO_NORM)[0]
    if bad.size:
        raise DegenerateInputError(
            f"{scheme} smoothing needs nonzero rows; node {bad[0]} has zero norm"
        )


def mean_step(h, graph):
    """h_i <- mean over N(i); rows with empty N(i) are left unchanged."""
    deg = graph.degrees().astype(np.float64)
    summed = kernels.segment_sum(h[graph.col_indices], graph.row_offsets)
    out = summed / np.maximum(deg, 1.0)[:, None]
    empty = deg == 0
    if empty.any():
        out[empty] = h[empty]
    return out


def laplacian_step(h, graph):
    """Symmetric-normalized propagation D^-1/2 (A+I) D^-1/2 h.

    Self-loops are part of A+I; if the graph already stores them they are
    not added twice.
    """
    deg = graph.degrees().astype(np.float64)
    if not graph.has_self_loops:
        deg = deg + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    scaled = h * inv_sqrt[:, None]
    out = kernels.segment_sum(scaled[graph.col_indices], graph.row_offsets)
    if not graph.has_self_loops:
        out += scaled
    return out * inv_sqrt[:, None]


def cosine_attention_weights(h, graph, tau):
    """softmax_j(cos(h_i, h_j)/tau) over each neighbor list."""
    _check_nonzero_rows(h, "attention")
    unit = h / np.linalg.norm(h, axis=1)[:, None]
    cos = np.einsum(
        "ij,ij->i", unit[graph.anchors], unit[graph.col_indices]
    )
    cos = np.clip(cos, -sphere.COS_CLAMP, sphere.COS_CLAMP)
    return kernels.segment_softmax(cos / tau, graph.row_offsets)


def attention_step(h, graph, tau):
    w = cosine_attention_weights(h, graph, tau)
    out = kernels.segment_sum(w[:, None] * h[graph.col_indices], graph.row_offsets)
    empty = graph.degrees() == 0
    if empty.any():
        out[empty] = h[empty]
    return out


def geodesic_step(x, graph, tau, alpha):
    """One log -> attention-weighted tangent mean -> exp cycle on unit rows.

    Returns (next_x, n_antipodal). The same arithmetic is what the trainable
    layer evaluates through the tape, so the two paths agree to fp noise.
    """
    xa = x[graph.anchors]
    xs = x[graph.col_indices]
    raw = np.einsum("ij,ij->i", xa, xs)
    clamped = np.clip(raw, -sphere.COS_CLAMP, sphere.COS_CLAMP)
    n_antipodal = int(np.count_nonzero(raw < sphere.ANTIPODAL_DOT))
    theta = np.arccos(clamped)
    weights = kernels.segment_softmax(clamped / tau, graph.row_offsets)
    scale = sphere.arc_scale(theta)
    tangents = scale[:, None] * (xs - raw[:, None] * xa)
    u = kernels.segment_sum(weights[:, None] * tangents, graph.row_offsets)
    return sphere.exp_map(x, u, alpha), n_antipodal


def smooth(features, graph, kind, layers):
    """Propagate `layers` times, recording every intermediate snapshot.

    Mean/Laplacian/Attention run on the raw features; the geodesic scheme
    projects rows to the unit sphere once up front and stays there.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != graph.n:
        raise ValidationError(
            f"feature rows ({features.shape[0]}) != graph nodes ({graph.n})"
        )
    if layers < 1:
        raise ValidationError(f"need at least 1 layer, got {layers}")

    agg = kind.kind
    if agg is Aggregator.GEODESIC:
        _check_nonzero_rows(features, "geodesic")
        current = sphere.project_to_sphere(features)
    else:
        current = features.copy()
    snapshots = [current.copy()]
    for _ in range(layers):
        if agg is Aggregator.MEAN:
            current = mean_step(current, graph)
        elif agg is Aggregator.LAPLACIAN:
            current = laplacian_step(current, graph)
        elif agg is Aggregator.ATTENTION:
            current = attention_step(current, graph, kind.tau)
        else:
            current, _ = geodesic_step(current, graph, kind.tau, kind.alpha)
        snapshots.append(current.copy())
    return LayerTrace(kind=kind, snapshots=snapshots)
