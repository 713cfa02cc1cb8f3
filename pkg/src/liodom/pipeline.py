"""End-to-end odometry dataflow, unsupervised training, and sequence inference.

Per frame pair: the IMU branch predicts an initial pose, the current maps
are remapped by it, residual rotation/translation come from encoder
features through the configured heads, and the final estimate is the
composition residual * initial. Training backpropagates the registration
loss through the composition into both branches with correspondences
frozen; gradients are not propagated through the discrete remap.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import Pose, compose, rotation_derivatives
from .matching import (
    CorrespondenceSet,
    EmptyMatchError,
    KdIndex,
    LossWeights,
    build_index,
    loss_gradient,
    match_nearest,
    total_loss,
)
from .nn import LSTM, Adam, AttentionHead, FcActivationHead, Linear, MapEncoder, StepLR
from .preprocess import PreprocessedCloud, VoxelParams
from .range_image import NormalMap, ProjectionConfig, VertexMap, compute_normal_map, project, project_with_indices, remap
from .registration import RegistrationError, RegistrationOptions, register

IMU_MODES = ("initial-pose", "feature-concat", "none")
HEAD_MODES = ("two-branch", "merged", "vertex-only")
HEAD_TYPES = ("attention", "fc-activation")
MATCHING = ("nearest", "pixel")


@dataclass(frozen=True)
class TrainParams:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 1e-5
    lr_step_size: int = 20
    lr_gamma: float = 0.5
    batch_size: int = 20
    epochs: int = 100
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    imu_mode: str = "initial-pose"
    head_mode: str = "two-branch"
    head_type: str = "attention"
    matching: str = "nearest"
    feature_dim: int = 256
    encoder_widths: tuple = (16, 32, 64)
    lstm_hidden: int = 64
    imu_window: int = 15
    q_scale: float = 0.1        # keeps raw head outputs in the small-angle regime
    max_match_dist: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    voxel: VoxelParams = field(default_factory=VoxelParams)
    train: TrainParams = field(default_factory=TrainParams)

    def __post_init__(self):
        if self.imu_mode not in IMU_MODES:
            raise ValueError(f"imu_mode must be one of {IMU_MODES}")
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"head_mode must be one of {HEAD_MODES}")
        if self.head_type not in HEAD_TYPES:
            raise ValueError(f"head_type must be one of {HEAD_TYPES}")
        if self.matching not in MATCHING:
            raise ValueError(f"matching must be one of {MATCHING}")

    def describe(self) -> dict:
        d = asdict(self)
        d["weights"] = {"alpha": self.weights.alpha, "lam": self.weights.lam}
        return d


@dataclass
class FramePair:
    """Everything one training/inference step needs for a scan pair."""

    v_last: VertexMap
    n_last: NormalMap
    v_cur: VertexMap
    n_cur: NormalMap
    last_cloud: PreprocessedCloud
    cur_cloud: PreprocessedCloud
    imu: np.ndarray | None = None      # (S, 6): lin acc 0-2, ang vel 3-5
    _index: KdIndex | None = None

    def target_index(self) -> KdIndex:
        if self._index is None:
            self._index = build_index(self.last_cloud)
        return self._index


def _make_head(head_type: str, dim: int, rng):
    return AttentionHead(dim, rng) if head_type == "attention" else FcActivationHead(dim, rng)


class OdometryModel:
    """Siamese IMU LSTMs, map-pair encoders, and residual-pose heads.

    Output FC layers are zero-initialized so the untrained network emits
    the identity pose.
    """

    def __init__(self, cfg: PipelineConfig, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(cfg.train.seed)
        self.cfg = cfg
        F = cfg.feature_dim
        self.lstm_gyro = LSTM(3, cfg.lstm_hidden, rng)
        self.lstm_acc = LSTM(3, cfg.lstm_hidden, rng)
        self.fc_q_init = Linear(cfg.lstm_hidden, 3, zero_init=True)
        self.fc_t_init = Linear(cfg.lstm_hidden, 3, zero_init=True)
        self.vertex_encoder = MapEncoder(cfg.encoder_widths, F, rng=rng)
        self.normal_encoder = None
        if cfg.head_mode != "vertex-only":
            self.normal_encoder = MapEncoder(cfg.encoder_widths, F, rng=rng)
        imu_extra = 2 * cfg.lstm_hidden if cfg.imu_mode == "feature-concat" else 0
        if cfg.head_mode == "two-branch":
            self.t_dim = F + imu_extra
            self.q_dim = 2 * F + imu_extra
            self.head_t = _make_head(cfg.head_type, self.t_dim, rng)
            self.head_q = _make_head(cfg.head_type, self.q_dim, rng)
        else:
            shared = (2 * F if cfg.head_mode == "merged" else F) + imu_extra
            self.t_dim = self.q_dim = shared
            self.head_t = self.head_q = _make_head(cfg.head_type, shared, rng)
        self.out_t = Linear(self.t_dim, 3, zero_init=True)
        self.out_q = Linear(self.q_dim, 3, zero_init=True)
        self._cache = None

    # -- parameter plumbing -------------------------------------------------

    def _submodules(self) -> dict:
        mods = {
            "lstm_gyro": self.lstm_gyro, "lstm_acc": self.lstm_acc,
            "fc_q_init": self.fc_q_init, "fc_t_init": self.fc_t_init,
            "vertex_encoder": self.vertex_encoder,
            "out_t": self.out_t, "out_q": self.out_q,
            "head_t": self.head_t,
        }
        if self.head_q is not self.head_t:
            mods["head_q"] = self.head_q
        if self.normal_encoder is not None:
            mods["normal_encoder"] = self.normal_encoder
        return mods

    def parameters(self):
        out = {}
        for name, mod in self._submodules().items():
            for sub, p in mod.parameters().items():
                out[f"{name}.{sub}"] = p
        return out

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad[...] = 0.0

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters().values())

    def set_training(self, flag: bool):
        self.vertex_encoder.set_training(flag)
        if self.normal_encoder is not None:
            self.normal_encoder.set_training(flag)

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: p.value for name, p in self.parameters().items()}
        for enc_name in ("vertex_encoder", "normal_encoder"):
            enc = getattr(self, enc_name)
            if enc is None:
                continue
            norms = [("stem_norm", enc.stem_norm)]
            for i, b in enumerate(enc.blocks):
                norms += [(f"blocks.{i}.norm1", b.norm1), (f"blocks.{i}.norm2", b.norm2)]
                if b.proj_norm is not None:
                    norms.append((f"blocks.{i}.proj_norm", b.proj_norm))
            for nname, norm in norms:
                arrays[f"{enc_name}.{nname}.running_mean"] = norm.running_mean
                arrays[f"{enc_name}.{nname}.running_var"] = norm.running_var
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for name, value in arrays.items():
            target = self.state_arrays().get(name)
            if target is None:
                raise KeyError(f"unknown parameter {name}")
            if target.shape != np.shape(value):
                raise ValueError(f"{name}: shape {np.shape(value)} != {target.shape}")
        params = self.parameters()
        for name, value in arrays.items():
            if name in params:
                params[name].value[...] = value
        state = self.state_arrays()
        for name, value in arrays.items():
            if name not in params:
                state[name][...] = value

    # -- forward / backward -------------------------------------------------

    def imu_initial_pose(self, window: np.ndarray) -> Pose:
        """Angular-velocity LSTM -> q, linear-acceleration LSTM -> t."""
        window = np.asarray(window, dtype=float)
        _, h_g = self.lstm_gyro(window[None, :, 3:6])
        _, h_a = self.lstm_acc(window[None, :, 0:3])
        q_hat = self.fc_q_init(h_g)[0]
        t_hat = self.fc_t_init(h_a)[0]
        self._imu_hidden = (h_g, h_a)
        return Pose(q=q_hat, t=t_hat)

    def _imu_features(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=float)
        _, h_g = self.lstm_gyro(window[None, :, 3:6])
        _, h_a = self.lstm_acc(window[None, :, 0:3])
        return np.concatenate([h_g[0], h_a[0]])

    def residual_pose(self, v_pair: np.ndarray, n_pair: np.ndarray | None,
                      imu_feats: np.ndarray | None) -> Pose:
        """Residual pose from stacked map pairs (6, H, W) and optional IMU features."""
        cfg = self.cfg
        fv = self.vertex_encoder(v_pair[None])[0]
        fn = None
        if self.normal_encoder is not None:
            if n_pair is None:
                raise ValueError("head mode requires a normal-map pair")
            fn = self.normal_encoder(n_pair[None])[0]
        extra = [imu_feats] if imu_feats is not None else []
        if cfg.head_mode == "two-branch":
            x_t = np.concatenate([fv] + extra)
            x_q = np.concatenate([fv, fn] + extra)
            h_t = self.head_t(x_t[None])
            h_q = self.head_q(x_q[None])
        elif cfg.head_mode == "merged":
            x = np.concatenate([fv, fn] + extra)
            h_t = h_q = self.head_t(x[None])
        else:
            x = np.concatenate([fv] + extra)
            h_t = h_q = self.head_t(x[None])
        dt = self.out_t(h_t)[0]
        dq = cfg.q_scale * self.out_q(h_q)[0]
        self._res_cache = (fv.shape[0], None if fn is None else fn.shape[0],
                           0 if imu_feats is None else imu_feats.shape[0])
        return Pose(q=dq, t=dt)

    def residual_backward(self, grad_q: np.ndarray, grad_t: np.ndarray):
        """Backprop residual-pose gradients; returns grad on IMU features."""
        cfg = self.cfg
        nv, nn_dim, nimu = self._res_cache
        gh_q = self.out_q.backward(np.atleast_2d(cfg.q_scale * grad_q))
        gh_t = self.out_t.backward(np.atleast_2d(grad_t))
        if cfg.head_mode == "two-branch":
            gx_t = self.head_t.backward(gh_t)[0]
            gx_q = self.head_q.backward(gh_q)[0]
            g_fv = gx_t[:nv] + gx_q[:nv]
            g_fn = gx_q[nv:nv + nn_dim]
            g_imu = gx_t[nv:] + gx_q[nv + nn_dim:] if nimu else None
        else:
            gx = self.head_t.backward(gh_t + gh_q)[0]
            g_fv = gx[:nv]
            g_fn = gx[nv:nv + nn_dim] if nn_dim else None
            g_imu = gx[-nimu:] if nimu else None
        self.vertex_encoder.backward(g_fv[None])
        if self.normal_encoder is not None and g_fn is not None:
            self.normal_encoder.backward(g_fn[None])
        return g_imu

    def imu_backward(self, grad_q_hat=None, grad_t_hat=None, grad_features=None):
        """Backprop into the siamese LSTM branch (whichever path was used)."""
        H = self.cfg.lstm_hidden
        gh_g = np.zeros((1, H))
        gh_a = np.zeros((1, H))
        if grad_q_hat is not None:
            gh_g += self.fc_q_init.backward(np.atleast_2d(grad_q_hat))
        if grad_t_hat is not None:
            gh_a += self.fc_t_init.backward(np.atleast_2d(grad_t_hat))
        if grad_features is not None:
            gh_g += grad_features[None, :H]
            gh_a += grad_features[None, H:]
        self.lstm_gyro.backward(grad_h_final=gh_g)
        self.lstm_acc.backward(grad_h_final=gh_a)


@dataclass
class PairDiagnostics:
    initial: Pose = field(default_factory=Pose.identity)
    residual: Pose = field(default_factory=Pose.identity)
    matches: int = 0
    loss: float = float("nan")


def estimate_pair(fp: FramePair, model: OdometryModel, cfg: PipelineConfig):
    """Forward pass for one pair: returns (Pose, PairDiagnostics)."""
    t_hat = Pose.identity()
    imu_feats = None
    if cfg.imu_mode == "initial-pose":
        if fp.imu is None:
            raise ValueError("imu_mode=initial-pose requires an IMU window")
        t_hat = model.imu_initial_pose(fp.imu)
        v_cur, n_cur = remap(fp.v_cur, fp.n_cur, t_hat, cfg.projection)
    else:
        # feature-concat and none skip the remap step entirely
        v_cur, n_cur = fp.v_cur, fp.n_cur
        if cfg.imu_mode == "feature-concat":
            if fp.imu is None:
                raise ValueError("imu_mode=feature-concat requires an IMU window")
            imu_feats = model._imu_features(fp.imu)
    v_pair = np.concatenate([_map_tensor(fp.v_last), _map_tensor(v_cur)])
    n_pair = None
    if model.normal_encoder is not None:
        n_pair = np.concatenate([_map_tensor(fp.n_last), _map_tensor(n_cur)])
    delta = model.residual_pose(v_pair, n_pair, imu_feats)
    pose = compose(delta, t_hat)
    return pose, PairDiagnostics(initial=t_hat, residual=delta)


def _map_tensor(m) -> np.ndarray:
    return np.transpose(m.grid, (2, 0, 1))


def transformed_cloud(cloud: PreprocessedCloud, pose: Pose) -> PreprocessedCloud:
    R = pose.rotation
    return PreprocessedCloud(cloud.points @ R.T + pose.t, cloud.normals @ R.T)


def pixel_correspondences(fp: FramePair, pose: Pose, cfg: ProjectionConfig):
    """Pixel-to-pixel matching, frozen at `pose`, over the loss clouds' maps.

    Source points are the current map's vertices; the transformed copies
    are scattered back onto the grid and matched against the last map at
    identical pixels. Returns (source pseudo-cloud, CorrespondenceSet).
    """
    src_mask = fp.v_cur.valid & fp.n_cur.valid
    source = PreprocessedCloud(fp.v_cur.grid[src_mask], fp.n_cur.grid[src_mask])
    moved = transformed_cloud(source, pose)
    vmap, winner = project_with_indices(moved.points, cfg)
    both = (winner >= 0) & fp.v_last.valid & fp.n_last.valid
    if not both.any():
        raise EmptyMatchError("pixel matching found no shared valid pixels")
    idx = winner[both]
    sp = moved.points[idx]
    tp = fp.v_last.grid[both]
    corr = CorrespondenceSet(
        src_points=sp, src_normals=moved.normals[idx],
        tgt_points=tp, tgt_normals=fp.n_last.grid[both],
        distances=np.linalg.norm(sp - tp, axis=1), src_index=idx,
    )
    return source, corr


def pair_loss(fp: FramePair, pose: Pose, cfg: PipelineConfig):
    """(source cloud, correspondences, loss value) at a predicted pose."""
    if cfg.matching == "pixel":
        source, corr = pixel_correspondences(fp, pose, cfg.projection)
    else:
        source = fp.cur_cloud
        moved = transformed_cloud(source, pose)
        corr = match_nearest(moved, fp.target_index(), max_dist=cfg.max_match_dist)
    return source, corr, total_loss(corr, cfg.weights)


def composed_pose_gradients(p_delta: np.ndarray, p_hat: np.ndarray,
                            source: PreprocessedCloud, corr: CorrespondenceSet,
                            weights: LossWeights):
    """Loss gradients w.r.t. both composition factors, matches frozen.

    The composed transform is p = R_d (R_h s + t_h) + t_d, so the delta
    gradient is the plain pose gradient over the hat-transformed source,
    and the hat gradient chains through R_d.
    """
    hat = Pose.from_vector(p_hat)
    delta = Pose.from_vector(p_delta)
    hat_source = transformed_cloud(source, hat)
    grad_delta = loss_gradient(p_delta, hat_source, corr, weights)

    R_d = delta.rotation
    R_h = hat.rotation
    dR_h = rotation_derivatives(p_hat[:3])
    sp = source.points[corr.src_index]
    sn = source.normals[corr.src_index]
    moved = (sp @ R_h.T + hat.t) @ R_d.T + delta.t
    res = np.einsum("mi,mi->m", corr.tgt_normals, moved - corr.tgt_points)
    sign = np.sign(res)
    diff = (sn @ R_h.T) @ R_d.T - corr.tgt_normals
    grad_hat = np.zeros(6)
    for i, dR in enumerate(dR_h):
        dp = (sp @ dR.T) @ R_d.T
        grad_hat[i] += weights.alpha * np.sum(sign * np.einsum("mi,mi->m", corr.tgt_normals, dp))
        grad_hat[i] += weights.lam * 2.0 * np.einsum("mi,mi->", diff, (sn @ dR.T) @ R_d.T)
    grad_hat[3:] = weights.alpha * ((sign[:, None] * corr.tgt_normals) @ R_d).sum(axis=0)
    return grad_delta, grad_hat


@dataclass
class EpochStats:
    mean_loss: float
    mean_po2pl: float
    mean_pl2pl: float
    pairs_used: int
    pairs_skipped: int
    learning_rate: float


def train_step(fp: FramePair, model: OdometryModel, cfg: PipelineConfig):
    """Forward + backward for one pair; gradients accumulate on the model."""
    from .matching import plane_to_plane_loss, point_to_plane_loss

    pose, diag = estimate_pair(fp, model, cfg)
    source, corr, loss = pair_loss(fp, pose, cfg)
    diag.matches = len(corr)
    diag.loss = loss
    p_delta = diag.residual.as_vector()
    p_hat = diag.initial.as_vector()
    grad_delta, grad_hat = composed_pose_gradients(p_delta, p_hat, source, corr, cfg.weights)
    g_imu = model.residual_backward(grad_delta[:3], grad_delta[3:])
    if cfg.imu_mode == "initial-pose":
        model.imu_backward(grad_q_hat=grad_hat[:3], grad_t_hat=grad_hat[3:])
    elif cfg.imu_mode == "feature-concat" and g_imu is not None:
        model.imu_backward(grad_features=g_imu)
    terms = (point_to_plane_loss(corr), plane_to_plane_loss(corr))
    return loss, terms, diag


def train_epoch(pairs, model: OdometryModel, optimizer: Adam,
                cfg: PipelineConfig, epoch: int = 0,
                scheduler: StepLR | None = None) -> EpochStats:
    """One pass over the dataset in batches; Adam step per batch."""
    if scheduler is not None:
        scheduler.set_epoch(epoch)
    model.set_training(True)
    bs = cfg.train.batch_size
    losses, po, pl = [], [], []
    skipped = 0
    for start in range(0, len(pairs), bs):
        batch = pairs[start:start + bs]
        model.zero_grad()
        used = 0
        for fp in batch:
            try:
                loss, terms, _ = train_step(fp, model, cfg)
            except EmptyMatchError:
                skipped += 1
                continue
            losses.append(loss)
            po.append(terms[0])
            pl.append(terms[1])
            used += 1
        if used == 0:
            continue
        for p in model.parameters().values():
            p.grad /= used
        optimizer.step()
    model.set_training(False)
    return EpochStats(
        mean_loss=float(np.mean(losses)) if losses else float("nan"),
        mean_po2pl=float(np.mean(po)) if po else float("nan"),
        mean_pl2pl=float(np.mean(pl)) if pl else float("nan"),
        pairs_used=len(losses), pairs_skipped=skipped,
        learning_rate=optimizer.lr,
    )


def build_frame_pairs(scans, cfg: PipelineConfig, imu_windows=None,
                      clouds=None) -> list[FramePair]:
    """Assemble FramePairs from sensor-frame scans.

    `scans` is a list of (N, 3) arrays (or objects with .points/.normals
    such as synthetic scenes). Loss-side clouds may be passed precomputed;
    otherwise scans with analytic normals use them directly and raw arrays
    go through the full preprocess pipeline.
    """
    from .preprocess import adaptive_voxel_downsample, preprocess_cloud

    def points_of(s):
        return s.points if hasattr(s, "points") else np.asarray(s, dtype=float)

    maps = []
    for s in scans:
        vm = project(points_of(s), cfg.projection)
        maps.append((vm, compute_normal_map(vm)))
    if clouds is None:
        clouds = []
        for s in scans:
            if hasattr(s, "normals"):
                clouds.append(adaptive_voxel_downsample(points_of(s), s.normals, cfg.voxel))
            else:
                clouds.append(preprocess_cloud(points_of(s), cfg.voxel))
    pairs = []
    for k in range(len(scans) - 1):
        pairs.append(FramePair(
            v_last=maps[k][0], n_last=maps[k][1],
            v_cur=maps[k + 1][0], n_cur=maps[k + 1][1],
            last_cloud=clouds[k], cur_cloud=clouds[k + 1],
            imu=None if imu_windows is None else imu_windows[k],
        ))
    return pairs


def run_sequence(pairs, mode: str, cfg: PipelineConfig,
                 model: OdometryModel | None = None):
    """Chain per-pair estimates into absolute poses (first pose identity).

    Modes: learned (network only), classical (registration from identity),
    hybrid (registration warm-started from the learned pose). Registration
    failures substitute the identity relative pose and are flagged.
    """
    if mode not in ("learned", "classical", "hybrid"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode in ("learned", "hybrid") and model is None:
        raise ValueError(f"mode {mode!r} needs a model")
    opts = RegistrationOptions(max_match_dist=cfg.max_match_dist, weights=cfg.weights)
    relatives = []
    flags = []
    for fp in pairs:
        init = Pose.identity()
        if mode in ("learned", "hybrid"):
            init, _ = estimate_pair(fp, model, cfg)
        if mode == "learned":
            relatives.append(init)
            flags.append("ok")
            continue
        try:
            pose, _ = register(fp.cur_cloud, fp.last_cloud, init=init, opts=opts)
            relatives.append(pose)
            flags.append("ok")
        except RegistrationError:
            relatives.append(Pose.identity())
            flags.append("registration-failed")
    from .evaluation import accumulate

    return accumulate(relatives), relatives, flags
