"""
Phase 5: Synthetic World
Deterministic box worlds, an ego trajectory, a toy camera rig and a noisy
sensor producing per-ray features and depth distributions, plus the
ground-truth occupancy to score against.

Coordinates: the grid at frame t is ego-centric. `Trajectory.pose(t)` maps
grid_t coordinates to world coordinates; the world frame equals grid_1.
"""

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from phase1_parsing import parse_world
from phase1_parsing.schemas import BoxSpec, CameraModel, ClassInfo, ConfigError, DepthConfig, PipelineConfig, WorldSpec
from phase2_tensors import RigidTransform
from phase3_fusion import CameraPose, DepthDistribution
from phase4_pipeline import FrameInput, ViewInput, camera_motion


logger = logging.getLogger(__name__)

MARCH_STEP = 0.1
# distance from the pinhole to the image plane, in voxels
FOCAL = 4.0
# image plane sits this far in front of the grid face
STANDOFF = 1.5


class SensorNoise(BaseModel):
    sigma_depth: float = Field(0.0, ge=0.0, description="Std of score-space depth perturbation")
    sigma_feat: float = Field(0.0, ge=0.0, description="Std of additive feature noise")
    sharpness: float = Field(0.5, gt=0.0, description="tau, in squared bin widths")
    seed: int = 0
    stream: int = Field(0, ge=0, description="Independent noise realisation of the same sequence")

    @property
    def noiseless(self) -> bool:
        return self.sigma_depth == 0.0 and self.sigma_feat == 0.0


class Trajectory(BaseModel):
    """Constant ego velocity and yaw rate about the grid centre."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw_rate: float = 0.0
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def pose(self, t: int) -> RigidTransform:
        """grid_t -> world."""
        elapsed = t - 1
        translation = np.asarray(self.velocity, dtype=np.float64) * elapsed
        return RigidTransform.from_yaw(self.yaw_rate * elapsed, translation, np.asarray(self.center))

    def to_previous(self, t: int) -> RigidTransform:
        """R_{t->t-1}: grid_t -> grid_{t-1}; identity at the first frame."""
        if t <= 1:
            return RigidTransform.identity()
        return self.pose(t - 1).inverse().compose(self.pose(t))


class ViewGeometry(BaseModel):
    """Fixed ray bundle of one camera and its mounting on the grid."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    cam_to_grid: RigidTransform
    origins: np.ndarray
    directions: np.ndarray


# camera z is the viewing axis; each mounting is a cyclic axis permutation
_MOUNTS = {
    0: (np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), (1, 2), 0),
    1: (np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]), (2, 0), 1),
}


def build_rig(extents: tuple[int, int, int], views: int, model: CameraModel) -> list[ViewGeometry]:
    """
    Toy camera rig: view 0 looks along +x, view 1 along +y.

    Parallel cameras cast one ray through every voxel column of the facing
    grid side; pinhole cameras cast the same pixel grid from a single centre
    FOCAL voxels behind the image plane.
    """
    rig = []
    for index in range(views):
        rotation, (u_axis, v_axis), depth_axis = _MOUNTS[index]
        translation = np.zeros(3)
        translation[depth_axis] = -STANDOFF
        cam_to_grid = RigidTransform(rotation=rotation, translation=translation)

        uu, vv = np.meshgrid(
            np.arange(extents[u_axis], dtype=np.float64),
            np.arange(extents[v_axis], dtype=np.float64),
            indexing='ij',
        )
        pixels = np.stack([uu.ravel(), vv.ravel(), np.zeros(uu.size)], axis=1)

        if model == CameraModel.PARALLEL:
            origins = pixels
            directions = np.tile([0.0, 0.0, 1.0], (pixels.shape[0], 1))
        else:
            center = np.array([(extents[u_axis] - 1) / 2.0, (extents[v_axis] - 1) / 2.0, -FOCAL])
            origins = np.tile(center, (pixels.shape[0], 1))
            rays = pixels - center
            directions = rays / np.linalg.norm(rays, axis=1, keepdims=True)
        rig.append(ViewGeometry(cam_to_grid=cam_to_grid, origins=origins, directions=directions))
    return rig


def default_world(extents: tuple[int, int, int] = (16, 16, 8)) -> WorldSpec:
    """
    Built-in scene: two static classes and one slow dynamic box, laid out
    as fractions of the grid so any extents work.
    """
    X, Y, Z = extents

    def box(fx, fy, sx, sy, sz, name, velocity=(0.0, 0.0, 0.0)):
        size = (max(1, round(sx * X)), max(1, round(sy * Y)), max(1, round(sz * Z)))
        origin = (
            float(min(round(fx * X), X - size[0])),
            float(min(round(fy * Y), Y - size[1])),
            0.0,
        )
        return BoxSpec(origin=origin, size=size, class_name=name, velocity=velocity)

    return WorldSpec(
        extents=extents,
        classes=[
            ClassInfo(name='empty', empty=True),
            ClassInfo(name='static_a'),
            ClassInfo(name='static_b'),
            ClassInfo(name='dynamic', dynamic=True),
        ],
        boxes=[
            box(0.25, 0.125, 0.1875, 0.25, 0.5, 'static_a'),
            box(0.5625, 0.5625, 0.25, 0.1875, 0.375, 'static_b'),
            box(0.375, 0.75, 0.125, 0.1875, 0.625, 'static_b'),
            box(0.125, 0.4375, 0.125, 0.125, 0.25, 'dynamic', velocity=(0.1, 0.0, 0.0)),
        ],
    )


def ground_truth_occupancy(world: WorldSpec, t: int, trajectory: Optional[Trajectory] = None) -> np.ndarray:
    """
    Class label per voxel of grid_t, dims (X, Y, Z).

    A voxel belongs to a box when its centre, mapped to world coordinates,
    lies in [origin - 0.5, origin + size - 0.5) on every axis. Boxes listed
    later win on overlap.
    """
    if t < 1:
        raise ValueError(f"frame index must be >= 1, got {t}")
    trajectory = trajectory or Trajectory()
    X, Y, Z = world.extents

    centers = np.stack(np.meshgrid(np.arange(X), np.arange(Y), np.arange(Z), indexing='ij'), axis=-1)
    points = trajectory.pose(t).apply_points(centers.reshape(-1, 3).astype(np.float64))

    labels = np.full(points.shape[0], world.empty_index, dtype=np.int64)
    for spec in world.boxes:
        lo = spec.origin_at(t) - 0.5
        hi = lo + np.asarray(spec.size, dtype=np.float64)
        inside = np.all((points >= lo) & (points < hi), axis=1)
        labels[inside] = world.class_index(spec.class_name)
    return labels.reshape(X, Y, Z)


def class_embeddings(world: WorldSpec, channels: int, rng: np.random.Generator) -> np.ndarray:
    """Random unit vector per class; the empty class embeds to zero."""
    emb = rng.standard_normal((len(world.classes), channels))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    emb[world.empty_index] = 0.0
    return emb


def cast_rays(labels: np.ndarray, empty_index: int, view: ViewGeometry, max_depth: float) -> tuple[np.ndarray, np.ndarray]:
    """
    March each ray through the label grid.

    Returns:
        (true depth per ray, hit class per ray). Misses report max_depth and
        the empty class.
    """
    origins = view.cam_to_grid.apply_points(view.origins)
    directions = view.directions @ view.cam_to_grid.rotation.T
    steps = np.arange(0.0, max_depth + MARCH_STEP, MARCH_STEP)

    points = origins[:, None, :] + steps[None, :, None] * directions[:, None, :]
    idx = np.rint(points).astype(np.int64)
    extents = np.asarray(labels.shape)
    inside = np.all((idx >= 0) & (idx < extents), axis=-1)
    clipped = np.clip(idx, 0, extents - 1)
    hit_labels = labels[clipped[..., 0], clipped[..., 1], clipped[..., 2]]
    occupied = inside & (hit_labels != empty_index)

    rays = origins.shape[0]
    depth = np.full(rays, max_depth)
    hit_class = np.full(rays, empty_index, dtype=np.int64)
    any_hit = occupied.any(axis=1)
    first = np.argmax(occupied, axis=1)

    rows = np.nonzero(any_hit)[0]
    voxel = idx[rows, first[rows]]
    depth[rows] = np.einsum('rk,rk->r', voxel - origins[rows], directions[rows])
    hit_class[rows] = hit_labels[rows, first[rows]]
    return depth, hit_class


def depth_distribution(true_depth: np.ndarray, depth: DepthConfig, noise: SensorNoise, rng: np.random.Generator) -> np.ndarray:
    """softmax_k(-((d_k - d_true) / Δ)² / τ + sigma_depth · N(0, 1))."""
    centers = depth.bin_centers()
    scores = -(((centers[None, :] - true_depth[:, None]) / depth.bin_width) ** 2) / noise.sharpness
    if noise.sigma_depth > 0:
        scores = scores + noise.sigma_depth * rng.standard_normal(scores.shape)
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    return weights / weights.sum(axis=1, keepdims=True)


def render_frame(
    world: WorldSpec,
    ego: Trajectory,
    noise: SensorNoise,
    t: int,
    rig: list[ViewGeometry],
    depth: DepthConfig,
    embeddings: np.ndarray,
    dt: float = 0.5,
) -> FrameInput:
    """
    Observe the world at frame t from every view of the rig.

    Noise for (seed, stream, t, view) comes from its own generator, so any
    frame can be rendered independently of the others.
    """
    labels = ground_truth_occupancy(world, t, ego)
    ego_delta = ego.to_previous(t)
    max_depth = float(depth.bin_centers()[-1])

    views = []
    for index, view in enumerate(rig):
        rng = np.random.default_rng([noise.seed, 2, noise.stream, t, index])
        true_depth, hit_class = cast_rays(labels, world.empty_index, view, max_depth)
        probs = depth_distribution(true_depth, depth, noise, rng)

        features = embeddings[hit_class]
        if noise.sigma_feat > 0:
            features = features + noise.sigma_feat * rng.standard_normal(features.shape)

        views.append(ViewInput(
            features=features,
            geometry=DepthDistribution(probs=probs, bin_centers=depth.bin_centers()),
            camera=CameraPose(
                transform=camera_motion(ego_delta, view.cam_to_grid),
                origins=view.origins,
                directions=view.directions,
            ),
            cam_to_grid=view.cam_to_grid,
        ))
    return FrameInput(views=views, ego=ego_delta, frame_index=t, dt=dt)


class SyntheticWorld:
    """
    A world plus everything needed to observe it: trajectory, rig, class
    embeddings and the configured sensor noise.
    """

    def __init__(self, cfg: PipelineConfig, world: Optional[WorldSpec] = None, seed: Optional[int] = None):
        self.cfg = cfg
        self.seed = cfg.run.seed if seed is None else seed

        if world is None:
            world = parse_world(cfg.world.spec_file) if cfg.world.spec_file else default_world(tuple(cfg.grid.extents))
        if tuple(world.extents) != tuple(cfg.grid.extents):
            raise ConfigError(f"world extents {world.extents} differ from grid extents {cfg.grid.extents}")
        if len(world.classes) != cfg.grid.classes:
            raise ConfigError(f"world has {len(world.classes)} classes, config expects {cfg.grid.classes}")
        self.world = world

        center = (np.asarray(world.extents, dtype=np.float64) - 1.0) / 2.0
        self.trajectory = Trajectory(
            velocity=tuple(cfg.world.ego_velocity),
            yaw_rate=cfg.world.ego_yaw_rate,
            center=tuple(center),
        )
        self.rig = build_rig(tuple(world.extents), cfg.world.views, cfg.world.camera)
        self.embeddings = class_embeddings(world, cfg.grid.channels, np.random.default_rng([self.seed, 0]))
        self.noise = SensorNoise(
            sigma_depth=cfg.noise.sigma_depth,
            sigma_feat=cfg.noise.sigma_feat,
            sharpness=cfg.noise.sharpness,
            seed=self.seed,
        )
        logger.info(
            "world ready: %d boxes, %d classes, %d view(s), seed %d",
            len(world.boxes), len(world.classes), len(self.rig), self.seed,
        )

    def render(self, t: int, noiseless: bool = False, stream: int = 0) -> FrameInput:
        """Frame t; `stream` picks an independent realisation of the sensor noise."""
        if noiseless:
            noise = SensorNoise(sharpness=self.noise.sharpness, seed=self.seed)
        else:
            noise = self.noise.model_copy(update={'stream': stream})
        return render_frame(
            self.world, self.trajectory, noise, t, self.rig, self.cfg.depth, self.embeddings, self.cfg.voxel.dt
        )

    def frames(self, count: int, noiseless: bool = False, start: int = 1, stream: int = 0) -> list[FrameInput]:
        return [self.render(t, noiseless, stream) for t in range(start, start + count)]

    def labels(self, count: int, start: int = 1) -> list[np.ndarray]:
        return [ground_truth_occupancy(self.world, t, self.trajectory) for t in range(start, start + count)]
