"""Semantic-drift metric: how far features moved off the original manifold.

For each node, fit a rank-r PCA tangent model on its k nearest neighbors in
the ORIGINAL feature space (cosine similarity; the reference never tracks
aggregated features), then score any current representation by normalized
reconstruction error D = ||z - VV'z||^2 / (||z||^2 + eps) with z = h - mean.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    ConfigError,
    DegenerateInputError,
    RankDeficientError,
    ValidationError,
)

ZERO_NORM = 1e-12


@dataclass(frozen=True)
class DriftConfig:
    k: int = 15
    r: int = 8
    epsilon: float = 1e-8
    include_self_in_knn: bool = False

    def __post_init__(self):
        # k > r and k <= n-1 involve the data and are checked at use time
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.r < 1:
            raise ValidationError(f"r must be >= 1, got {self.r}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class LocalTangentModel:
    owner: int
    mean: np.ndarray   # (d,)
    basis: np.ndarray  # (d, r_used), column-orthonormal


class DriftScore(NamedTuple):
    value: float
    reconstruction_error: float
    centered_norm_sq: float


@dataclass
class DriftReport:
    per_node: np.ndarray  # (n,) float64, NaN where excluded
    mean_drift: float
    config: DriftConfig
    layer: int
    excluded_nodes: list
    reduced_rank_nodes: list

    def to_dict(self):
        per_node = [
            None if math.isnan(v) else float(v) for v in self.per_node
        ]
        return {
            "mean_drift": self.mean_drift,
            "k": self.config.k,
            "r": self.config.r,
            "epsilon": self.config.epsilon,
            "layer": self.layer,
            "excluded_nodes": [int(i) for i in self.excluded_nodes],
            "per_node": per_node,
        }


def knn_reference(plm_features, config):
    """(n, k) neighbor ids by descending cosine, ties toward smaller id."""
    feats = np.asarray(plm_features, dtype=np.float64)
    n = feats.shape[0]
    limit = n if config.include_self_in_knn else n - 1
    if config.k > limit:
        raise ValidationError(
            f"k={config.k} exceeds available neighbors ({limit}) for n={n}"
        )
    norms = np.linalg.norm(feats, axis=1)
    bad = np.nonzero(norms < ZERO_NORM)[0]
    if bad.size:
        raise DegenerateInputError(
            f"kNN reference needs nonzero rows; node {bad[0]} has zero norm"
        )
    unit = feats / norms[:, None]
    sims = unit @ unit.T
    if not config.include_self_in_knn:
        np.fill_diagonal(sims, -2.0)  # below any cosine, so self sorts last
    ids = np.broadcast_to(np.arange(n), sims.shape)
    order = np.lexsort((ids, -sims), axis=-1)
    return np.ascontiguousarray(order[:, : config.k]).astype(np.int64)


def _svd_fit(neighbors):
    mean = neighbors.mean(axis=0)
    centered = neighbors - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        rank = 0
    else:
        tol = s[0] * max(centered.shape) * np.finfo(np.float64).eps
        rank = int(np.count_nonzero(s > tol))
    return mean, vt, rank


def _signed_basis(vt, r):
    basis = vt[:r].T.copy()
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def fit_local_tangent(plm_features, neighbor_ids, r, owner=-1):
    """Rank-r tangent model from the neighbor rows; deterministic sign.

    Raises RankDeficientError (carrying the achieved rank) when the centered
    neighbor matrix cannot support r directions.
    """
    neighbor_ids = np.asarray(neighbor_ids)
    if neighbor_ids.shape[0] < r + 1:
        raise ValidationError(
            f"need at least r+1={r + 1} neighbors, got {neighbor_ids.shape[0]}"
        )
    neighbors = np.asarray(plm_features, dtype=np.float64)[neighbor_ids]
    mean, vt, rank = _svd_fit(neighbors)
    if rank < r:
        raise RankDeficientError(
            f"node {owner}: centered neighbors have rank {rank} < r={r}",
            achieved_rank=rank,
        )
    return LocalTangentModel(owner=int(owner), mean=mean, basis=_signed_basis(vt, r))


def drift_score(h, model, epsilon):
    z = np.asarray(h, dtype=np.float64) - model.mean
    recon = model.basis @ (model.basis.T @ z)
    residual = z - recon
    err = float(residual @ residual)
    norm_sq = float(z @ z)
    return DriftScore(err / (norm_sq + epsilon), err, norm_sq)


def _fit_all(plm_features, config):
    """Tangent model per node with the rank fallback applied.

    Returns (models, excluded, reduced) where models[i] is None for excluded
    nodes. Models depend only on the original features, so one fit serves
    every layer snapshot.
    """
    feats = np.asarray(plm_features, dtype=np.float64)
    n, d = feats.shape
    if config.r >= d:
        raise ValidationError(f"need r < d, got r={config.r} d={d}")
    if config.k <= config.r:
        raise ValidationError(f"need k > r, got k={config.k} r={config.r}")
    knn = knn_reference(feats, config)
    models = []
    excluded = []
    reduced = []
    for i in range(n):
        mean, vt, rank = _svd_fit(feats[knn[i]])
        if rank >= config.r:
            models.append(LocalTangentModel(i, mean, _signed_basis(vt, config.r)))
        elif rank >= 1:
            # duplicate-heavy neighborhoods: lower r to what the data supports
            models.append(LocalTangentModel(i, mean, _signed_basis(vt, rank)))
            reduced.append(i)
        else:
            models.append(None)
            excluded.append(i)
    return models, excluded, reduced


def _score_layer(current, models, config):
    n = current.shape[0]
    per_node = np.full(n, np.nan)
    for i, model in enumerate(models):
        if model is not None:
            per_node[i] = drift_score(current[i], model, config.epsilon).value
    return per_node


def drift_report(current_features, plm_features, config, layer=0):
    current = np.asarray(current_features, dtype=np.float64)
    plm = np.asarray(plm_features, dtype=np.float64)
    if current.shape[0] != plm.shape[0]:
        raise ValidationError(
            f"row mismatch: current {current.shape[0]} vs reference {plm.shape[0]}"
        )
    if current.shape[1] != plm.shape[1]:
        raise ValidationError(
            "drift requires matching dimensions "
            f"(current d={current.shape[1]}, reference d={plm.shape[1]}); "
            "measure drift on same-width representations"
        )
    models, excluded, reduced = _fit_all(plm, config)
    if len(excluded) == plm.shape[0]:
        raise ConfigError("every node was rank-deficient; nothing to score")
    per_node = _score_layer(current, models, config)
    scored = per_node[~np.isnan(per_node)]
    return DriftReport(
        per_node=per_node,
        mean_drift=float(scored.mean()),
        config=config,
        layer=layer,
        excluded_nodes=excluded,
        reduced_rank_nodes=reduced,
    )


def drift_curve(snapshots, plm_features, config):
    """One DriftReport per snapshot, fitting the reference models once."""
    plm = np.asarray(plm_features, dtype=np.float64)
    models, excluded, reduced = _fit_all(plm, config)
    if len(excluded) == plm.shape[0]:
        raise ConfigError("every node was rank-deficient; nothing to score")
    reports = []
    for layer, snap in enumerate(snapshots):
        snap = np.asarray(snap, dtype=np.float64)
        if snap.shape != plm.shape:
            raise ValidationError(
                f"layer {layer} snapshot shape {snap.shape} != reference {plm.shape}"
            )
        per_node = _score_layer(snap, models, config)
        scored = per_node[~np.isnan(per_node)]
        reports.append(
            DriftReport(
                per_node=per_node,
                mean_drift=float(scored.mean()),
                config=config,
                layer=layer,
                excluded_nodes=list(excluded),
                reduced_rank_nodes=list(reduced),
            )
        )
    return reports
