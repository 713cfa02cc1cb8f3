"""Correspondence search and the unsupervised registration losses.

Nearest-neighbor matching runs on a KD-tree over the target cloud (exact,
verified against linear scan in the tests); the pixel-to-pixel variant
matches identical map coordinates. The point-to-plane loss sums absolute
projections of match residuals onto target normals; the plane-to-plane loss
sums squared differences of matched unit normals. Gradients treat the
correspondences as frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, rotation_derivatives
from .preprocess import PreprocessedCloud
from .range_image import NormalMap, VertexMap


class EmptyMatchError(RuntimeError):
    """No correspondences survived the rejection threshold."""


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0   # point-to-plane
    lam: float = 0.1     # plane-to-plane

    def __post_init__(self):
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class CorrespondenceSet:
    src_points: np.ndarray    # (M, 3) transformed source points
    src_normals: np.ndarray   # (M, 3)
    tgt_points: np.ndarray    # (M, 3)
    tgt_normals: np.ndarray   # (M, 3)
    distances: np.ndarray     # (M,)
    src_index: np.ndarray     # (M,) indices into the source cloud, -1 for pixel matches

    def __len__(self):
        return len(self.distances)


class KdIndex:
    """Exact nearest-neighbor index over a target cloud."""

    def __init__(self, cloud: PreprocessedCloud):
        if len(cloud) == 0:
            raise ValueError("cannot index an empty cloud")
        self.cloud = cloud
        self._tree = cKDTree(cloud.points)

    def query(self, points: np.ndarray):
        """(distances, target indices) of the exact nearest neighbors."""
        return self._tree.query(np.asarray(points, dtype=float))


def build_index(target: PreprocessedCloud) -> KdIndex:
    return KdIndex(target)


def match_nearest(
    source: PreprocessedCloud,
    index: KdIndex,
    max_dist: float = 1.0,
    src_index: np.ndarray | None = None,
) -> CorrespondenceSet:
    """Match each (already transformed) source point to its nearest target.

    Pairs farther apart than max_dist are dropped; an empty result raises
    EmptyMatchError so a zero loss can never reward divergence.
    """
    dist, tgt_idx = index.query(source.points)
    keep = dist <= max_dist
    if not keep.any():
        raise EmptyMatchError(f"no matches within {max_dist} m")
    tgt = index.cloud
    sidx = np.flatnonzero(keep) if src_index is None else np.asarray(src_index)[keep]
    return CorrespondenceSet(
        src_points=source.points[keep],
        src_normals=source.normals[keep],
        tgt_points=tgt.points[tgt_idx[keep]],
        tgt_normals=tgt.normals[tgt_idx[keep]],
        distances=dist[keep],
        src_index=sidx,
    )


def match_pixel(
    v_last: VertexMap,
    v_cur: VertexMap,
    n_last: NormalMap,
    n_cur: NormalMap,
) -> CorrespondenceSet:
    """Match the points sharing a pixel in the last and remapped current maps."""
    if v_last.shape != v_cur.shape:
        raise ValueError("maps must share dimensions")
    both = v_last.valid & v_cur.valid & n_last.valid & n_cur.valid
    sp = v_cur.grid[both]
    tp = v_last.grid[both]
    return CorrespondenceSet(
        src_points=sp,
        src_normals=n_cur.grid[both],
        tgt_points=tp,
        tgt_normals=n_last.grid[both],
        distances=np.linalg.norm(sp - tp, axis=1),
        src_index=np.full(int(both.sum()), -1, dtype=np.int64),
    )


def point_to_plane_loss(corr: CorrespondenceSet) -> float:
    """Sum of |n_target . (p_source - p_target)| over correspondences."""
    if len(corr) == 0:
        raise EmptyMatchError("empty correspondence set")
    residual = np.einsum("mi,mi->m", corr.tgt_normals, corr.src_points - corr.tgt_points)
    return float(np.abs(residual).sum())


def plane_to_plane_loss(corr: CorrespondenceSet) -> float:
    """Sum of squared differences between matched unit normals."""
    if len(corr) == 0:
        raise EmptyMatchError("empty correspondence set")
    diff = corr.src_normals - corr.tgt_normals
    return float(np.einsum("mi,mi->", diff, diff))


def total_loss(corr: CorrespondenceSet, weights: LossWeights = LossWeights()) -> float:
    """alpha * point-to-plane + lambda * plane-to-plane."""
    return weights.alpha * point_to_plane_loss(corr) + weights.lam * plane_to_plane_loss(corr)


def frozen_correspondences(corr: CorrespondenceSet, source: PreprocessedCloud):
    """Original source points/normals for the matched indices."""
    if (corr.src_index < 0).any():
        raise ValueError("correspondence set lacks source indices")
    return source.points[corr.src_index], source.normals[corr.src_index]


def loss_at_pose(
    p: np.ndarray,
    source: PreprocessedCloud,
    corr: CorrespondenceSet,
    weights: LossWeights = LossWeights(),
) -> float:
    """Total loss with matches frozen, as a function of the pose 6-vector."""
    pose = Pose.from_vector(p)
    sp, sn = frozen_correspondences(corr, source)
    moved = sp @ pose.rotation.T + pose.t
    rotated = sn @ pose.rotation.T
    res = np.einsum("mi,mi->m", corr.tgt_normals, moved - corr.tgt_points)
    diff = rotated - corr.tgt_normals
    return float(weights.alpha * np.abs(res).sum() + weights.lam * np.einsum("mi,mi->", diff, diff))


def loss_gradient(
    p: np.ndarray,
    source: PreprocessedCloud,
    corr: CorrespondenceSet,
    weights: LossWeights = LossWeights(),
) -> np.ndarray:
    """Gradient of loss_at_pose with respect to p, matches frozen.

    The absolute value in the point-to-plane term uses subgradient 0 at
    exactly-zero residuals.
    """
    p = np.asarray(p, dtype=float).reshape(6)
    pose = Pose.from_vector(p)
    R = pose.rotation
    dRs = rotation_derivatives(p[:3])
    sp, sn = frozen_correspondences(corr, source)
    moved = sp @ R.T + pose.t
    res = np.einsum("mi,mi->m", corr.tgt_normals, moved - corr.tgt_points)
    sign = np.sign(res)
    grad = np.zeros(6)
    # point-to-plane: d|r|/dp = sign(r) * n_t^T dp'/dp
    for i, dR in enumerate(dRs):
        grad[i] += weights.alpha * np.sum(sign * np.einsum("mi,mi->m", corr.tgt_normals, sp @ dR.T))
    grad[3:] += weights.alpha * (sign[:, None] * corr.tgt_normals).sum(axis=0)
    # plane-to-plane: d||Rn - n_t||^2/dq = 2 (Rn - n_t) . (dR n)
    diff = sn @ R.T - corr.tgt_normals
    for i, dR in enumerate(dRs):
        grad[i] += weights.lam * 2.0 * np.einsum("mi,mi->", diff, sn @ dR.T)
    return grad
