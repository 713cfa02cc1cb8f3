"""Classical frame-to-frame registration by minimizing the unsupervised loss.

Gauss-Newton on squared point-to-plane residuals plus the weighted normal
term, with halving line search; the absolute-value loss is used only for
reporting. Outer iterations re-match, inner iterations descend under a
fixed matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, rotation_derivatives
from .matching import (
    CorrespondenceSet,
    EmptyMatchError,
    KdIndex,
    LossWeights,
    build_index,
    frozen_correspondences,
    loss_at_pose,
    match_nearest,
)
from .preprocess import PreprocessedCloud


@dataclass(frozen=True)
class RegistrationOptions:
    max_outer: int = 10
    max_inner: int = 5
    tolerance: float = 1e-6
    max_match_dist: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration bounds must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class RegistrationDiagnostics:
    loss_trace: list = field(default_factory=list)
    match_counts: list = field(default_factory=list)
    outer_iterations: int = 0
    converged: bool = False


class RegistrationError(RuntimeError):
    def __init__(self, message: str, pose: Pose):
        super().__init__(message)
        self.pose = pose


def _transform_cloud(cloud: PreprocessedCloud, pose: Pose) -> PreprocessedCloud:
    R = pose.rotation
    return PreprocessedCloud(
        points=cloud.points @ R.T + pose.t,
        normals=cloud.normals @ R.T,
    )


def _gauss_newton_system(p, source, corr: CorrespondenceSet, w: LossWeights):
    """Stacked residuals/Jacobian of the squared-loss surrogate at pose p."""
    pose = Pose.from_vector(p)
    R = pose.rotation
    dRs = rotation_derivatives(p[:3])
    sp, sn = frozen_correspondences(corr, source)
    m = len(corr)
    moved = sp @ R.T + pose.t
    r1 = np.sqrt(w.alpha) * np.einsum("mi,mi->m", corr.tgt_normals, moved - corr.tgt_points)
    J1 = np.empty((m, 6))
    for i, dR in enumerate(dRs):
        J1[:, i] = np.einsum("mi,mi->m", corr.tgt_normals, sp @ dR.T)
    J1[:, 3:] = corr.tgt_normals
    J1 *= np.sqrt(w.alpha)
    if w.lam > 0:
        r2 = np.sqrt(w.lam) * (sn @ R.T - corr.tgt_normals).ravel()
        J2 = np.zeros((3 * m, 6))
        for i, dR in enumerate(dRs):
            J2[:, i] = np.sqrt(w.lam) * (sn @ dR.T).ravel()
        return np.concatenate([r1, r2]), np.vstack([J1, J2])
    return r1, J1


def _squared_cost(p, source, corr, w: LossWeights):
    r, _ = _gauss_newton_system(p, source, corr, w)
    return float(r @ r)


def register(
    source: PreprocessedCloud,
    target: PreprocessedCloud,
    init: Pose = Pose.identity(),
    opts: RegistrationOptions = RegistrationOptions(),
):
    """Estimate the pose aligning source onto target; returns (Pose, diagnostics)."""
    index = build_index(target)
    p = init.as_vector()
    diag = RegistrationDiagnostics()
    for outer in range(opts.max_outer):
        diag.outer_iterations = outer + 1
        try:
            corr = match_nearest(_transform_cloud(source, Pose.from_vector(p)),
                                 index, max_dist=opts.max_match_dist)
        except EmptyMatchError as exc:
            if outer == 0:
                raise RegistrationError(str(exc), init) from exc
            break
        diag.match_counts.append(len(corr))
        moved_outer = False
        for _ in range(opts.max_inner):
            r, J = _gauss_newton_system(p, source, corr, opts.weights)
            A = J.T @ J + 1e-9 * np.eye(6)
            delta = np.linalg.solve(A, -(J.T @ r))
            cost = float(r @ r)
            step = 1.0
            for _ in range(12):
                candidate = p + step * delta
                if _squared_cost(candidate, source, corr, opts.weights) < cost:
                    break
                step *= 0.5
            else:
                break
            p = p + step * delta
            moved_outer = True
            if np.linalg.norm(step * delta) < opts.tolerance:
                break
        diag.loss_trace.append(loss_at_pose(p, source, corr, opts.weights))
        if not moved_outer:
            diag.converged = True
            break
    return Pose.from_vector(p), diag
