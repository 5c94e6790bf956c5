"""Synthetic crowded-pedestrian scenes and detector-noise corruption.

Scenes are generated by a parent-offspring cluster process whose parameters
are solved against a closed-form expected-neighbor-count model, so the
crowding level (mean neighbor count within 2 m) is controllable. Pedestrians
move with piecewise-constant velocities: cluster anchors wander the area and
members hold loosely around their anchor, which keeps the crowding level
roughly stationary over the sequence. Everything is deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Box3D, normalize_yaw
from .targets import (
    GtObject,
    MotionOffset,
    RelationshipOffset,
    make_motion_offsets,
    make_relationship_offsets,
)
from .tracker import Detection

# Radius (meters) at which the crowding target is defined.
DENSITY_RADIUS = 2.0

# Hard floor on pedestrian center separation, held in every frame.
MIN_SEPARATION = 0.3

# Nominal pedestrian box (length, width, height) with +-10% per-axis jitter.
BOX_PRIOR = (0.6, 0.6, 1.7)
BOX_JITTER = 0.1

# Cluster-solver knobs: preferred/maximal per-pair capture probability and
# the sigma search bracket for the bisection.
_Q_PREF = 0.75
_Q_MAX = 0.97
_SIGMA_LO = 0.18
_SIGMA_HI = 200.0

# Relative (member-to-anchor) motion: speed noise and hard cap, m/s.
_REL_SPEED_SIGMA = 0.05
_REL_SPEED_CAP = 0.3

# Pedestrians are kept this far inside the area; cluster anchors keep a
# larger margin so member spreads rarely clip the walls.
_WALL_INSET = 0.3


class InfeasibleSceneError(ValueError):
    """The requested density/area/count combination cannot be generated."""


@dataclass(frozen=True)
class SimConfig:
    """Scene-generation parameters. `area` is (x_min, x_max, y_min, y_max)."""

    n_pedestrians: int
    n_frames: int
    area: tuple[float, float, float, float] = (-96.0, 96.0, -48.0, 48.0)
    target_density2: float = 1.0
    speed_min: float = 0.5
    speed_max: float = 1.5
    frame_rate: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        x_min, x_max, y_min, y_max = self.area
        if x_max <= x_min or y_max <= y_min:
            raise ValueError(f"degenerate area {self.area}")
        if self.n_pedestrians < 0 or self.n_frames <= 0:
            raise ValueError("n_pedestrians must be >= 0 and n_frames positive")
        if self.target_density2 < 0:
            raise ValueError("target_density2 must be non-negative")
        if not (0 < self.speed_min <= self.speed_max):
            raise ValueError("need 0 < speed_min <= speed_max")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")


@dataclass(frozen=True)
class NoiseConfig:
    """Detector-corruption parameters applied on top of a GT scene."""

    pos_sigma: float = 0.0
    offset_sigma: float = 0.0
    p_miss: float = 0.0
    clutter_rate: float = 0.0
    score_true_mean: float = 0.9
    score_true_sigma: float = 0.05
    score_clutter_mean: float = 0.3
    score_clutter_sigma: float = 0.1
    emit_rel: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_miss <= 1.0:
            raise ValueError(f"p_miss {self.p_miss} outside [0, 1]")
        if self.pos_sigma < 0 or self.offset_sigma < 0 or self.clutter_rate < 0:
            raise ValueError("sigmas and clutter_rate must be non-negative")


@dataclass(frozen=True, eq=False)
class SceneSequence:
    """Ground-truth frames with persistent instance ids and timestamps."""

    frames: list[list[GtObject]]
    timestamps: list[float]
    frame_rate: float

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.timestamps):
            raise ValueError("frames and timestamps length mismatch")
        for t0, t1 in zip(self.timestamps, self.timestamps[1:]):
            if t1 <= t0:
                raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)


def expected_density(sigma: float, cluster_size: int, n: int, area_m2: float) -> float:
    """Closed-form mean neighbor count within DENSITY_RADIUS.

    Two members of one cluster are separated by a Gaussian with per-axis
    std sigma*sqrt(2), so the within-cluster term is
    (m-1) * (1 - exp(-r^2 / (4 sigma^2))); pedestrians from other clusters
    contribute like a uniform process.
    """
    r2 = DENSITY_RADIUS * DENSITY_RADIUS
    within = (cluster_size - 1) * (1.0 - math.exp(-r2 / (4.0 * sigma * sigma)))
    across = (n - cluster_size) * math.pi * r2 / area_m2
    return within + across


def _capture_prob(sigma: float) -> float:
    """Probability that two members of one cluster are within DENSITY_RADIUS."""
    r2 = DENSITY_RADIUS * DENSITY_RADIUS
    return 1.0 - math.exp(-r2 / (4.0 * sigma * sigma))


def _expected_density_mixed(sigma: float, sizes: list[int], area_m2: float) -> float:
    """expected_density generalized to a mixed cluster-size distribution."""
    n = sum(sizes)
    pairs_per_member = sum(s * (s - 1) for s in sizes) / n
    mean_own = sum(s * s for s in sizes) / n
    r2 = DENSITY_RADIUS * DENSITY_RADIUS
    return pairs_per_member * _capture_prob(sigma) + (n - mean_own) * math.pi * r2 / area_m2


def solve_cluster_params(cfg: SimConfig) -> tuple[list[int], float]:
    """Choose cluster sizes and spread hitting cfg.target_density2.

    Picks the smallest cluster size whose per-pair capture probability stays
    below _Q_MAX, then bisects on the Gaussian spread until the closed-form
    expected neighbor count meets the target. Raises InfeasibleSceneError
    when no parameters can reach the target.
    """
    n = cfg.n_pedestrians
    x_min, x_max, y_min, y_max = cfg.area
    area_m2 = (x_max - x_min) * (y_max - y_min)
    if n * (2.0 * MIN_SEPARATION) ** 2 > 0.5 * area_m2:
        raise InfeasibleSceneError(
            f"{n} pedestrians with {MIN_SEPARATION} m separation cannot fit "
            f"a {area_m2:.0f} m^2 area"
        )
    csr = (n - 1) * math.pi * DENSITY_RADIUS**2 / area_m2 if n > 1 else 0.0
    target = cfg.target_density2
    if target < 0.9 * csr:
        raise InfeasibleSceneError(
            f"target_density2={target} is below the uniform-placement floor "
            f"{csr:.3f} for {n} pedestrians in {area_m2:.0f} m^2; "
            "enlarge the area or reduce n_pedestrians"
        )

    gap = target - csr
    if n <= 1 or gap <= 0.02:
        return [1] * n, _SIGMA_HI

    m = max(2, math.ceil(1.0 + gap / _Q_PREF))
    if gap / (m - 1) > _Q_MAX:
        m = math.ceil(1.0 + gap / _Q_MAX)
    if m > n:
        raise InfeasibleSceneError(
            f"target_density2={target} needs clusters of {m} pedestrians but "
            f"only n_pedestrians={n} are available"
        )

    n_clusters = math.ceil(n / m)
    sizes = [n // n_clusters] * n_clusters
    for i in range(n - sum(sizes)):
        sizes[i] += 1

    lo, hi = _SIGMA_LO, _SIGMA_HI
    if _expected_density_mixed(lo, sizes, area_m2) < target:
        raise InfeasibleSceneError(
            f"target_density2={target} unreachable even at minimal cluster spread"
        )
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _expected_density_mixed(mid, sizes, area_m2) >= target:
            lo = mid
        else:
            hi = mid
    return sizes, 0.5 * (lo + hi)


def _reflect(value: float, vel: float, lo: float, hi: float) -> tuple[float, float]:
    """Bounce a coordinate off [lo, hi] walls, flipping its velocity."""
    for _ in range(4):
        if value < lo:
            value, vel = 2.0 * lo - value, -vel
        elif value > hi:
            value, vel = 2.0 * hi - value, -vel
        else:
            break
    return min(max(value, lo), hi), vel


def _repair_separation(pos: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Push pedestrian pairs apart until every pair is >= MIN_SEPARATION."""
    n = pos.shape[0]
    if n < 2:
        return pos
    gap = MIN_SEPARATION * 1.01
    for _ in range(32):
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        iu = np.triu_indices(n, k=1)
        bad = dist[iu] < MIN_SEPARATION
        if not bad.any():
            return pos
        for a, b in zip(iu[0][bad], iu[1][bad]):
            d = dist[a, b]
            if d < 1e-12:
                # Coincident pair: split along a fixed direction.
                direction = np.array([1.0, 0.0])
                d = 0.0
            else:
                direction = diff[a, b] / d
            push = 0.5 * (gap - d)
            pos[a] += direction * push
            pos[b] -= direction * push
        np.clip(pos, lo, hi, out=pos)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    if dist.min() < MIN_SEPARATION:
        raise InfeasibleSceneError(
            "could not maintain minimum pedestrian separation; "
            "the scene is too densely packed for the area"
        )
    return pos


# Kernel width (m) of the smooth neighbor count used by placement calibration.
_SOFT_W = 0.25


def _soft_kernel(d: np.ndarray) -> np.ndarray:
    z = (d - DENSITY_RADIUS) / _SOFT_W
    return 1.0 / (1.0 + np.exp(np.clip(z, -60.0, 60.0)))


def _soft_within_density(pos: np.ndarray, cluster_of: np.ndarray) -> float:
    """Smooth within-cluster neighbor count: a sigmoid ramp at the radius.

    Used only for placement calibration; the sharp count would park marginal
    pairs exactly on the radius, where any subsequent motion loses them.
    Cross-cluster pairs are excluded because anchor placement, not member
    spread, determines them.
    """
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    same = cluster_of[:, None] == cluster_of[None, :]
    kernel = _soft_kernel(np.sqrt(d2))
    return float(kernel[same].sum() / pos.shape[0])


def _soft_capture(sigma: float) -> float:
    """Model expectation of the smooth kernel for one within-cluster pair.

    The pair distance is Rayleigh with scale sigma*sqrt(2); integrated
    numerically against the kernel.
    """
    s2 = 2.0 * sigma * sigma
    upper = DENSITY_RADIUS + 12.0 * _SOFT_W + 8.0 * sigma
    d = np.linspace(1e-6, upper, 4096)
    pdf = d / s2 * np.exp(-(d * d) / (2.0 * s2))
    return float(np.trapezoid(_soft_kernel(d) * pdf, d))


def _calibrate_spread(
    anchors: np.ndarray,
    cluster_of: np.ndarray,
    offsets: np.ndarray,
    sizes: list[int],
    sigma_c: float,
    lo: np.ndarray,
    hi: np.ndarray,
) -> np.ndarray:
    """Rescale member offsets until the placed layout matches the solver model.

    Separation thinning, wall truncation and mixed cluster sizes all pull the
    realized spread away from the solved Gaussian; a deterministic bisection
    on a radial scale factor pins the placed smooth neighbor count to its
    closed-form expectation, so the hard count inherits the solver accuracy.
    """
    n = sum(sizes)
    pairs_per_member = sum(s * (s - 1) for s in sizes) / n
    goal = pairs_per_member * _soft_capture(sigma_c)

    def placed(beta: float) -> np.ndarray:
        pos = anchors[cluster_of] + beta * offsets
        np.clip(pos, lo, hi, out=pos)
        return _repair_separation(pos, lo, hi)

    def density(beta: float) -> float:
        try:
            return _soft_within_density(placed(beta), cluster_of)
        except InfeasibleSceneError:
            return math.inf

    b_lo, b_hi = 0.5, 2.5
    if density(b_lo) < goal:
        return placed(b_lo)
    if density(b_hi) > goal:
        return placed(b_hi)
    for _ in range(24):
        mid = 0.5 * (b_lo + b_hi)
        if density(mid) >= goal:
            b_lo = mid
        else:
            b_hi = mid
    return placed(0.5 * (b_lo + b_hi))


def gen_scene(cfg: SimConfig) -> SceneSequence:
    """Generate a ground-truth pedestrian sequence for the given config."""
    x_min, x_max, y_min, y_max = cfg.area
    dt = 1.0 / cfg.frame_rate
    timestamps = [i * dt for i in range(cfg.n_frames)]
    if cfg.n_pedestrians == 0:
        return SceneSequence([[] for _ in range(cfg.n_frames)], timestamps, cfg.frame_rate)

    sizes, sigma_c = solve_cluster_params(cfg)
    rng = np.random.default_rng([cfg.seed, 0xC0FFEE])

    lo = np.array([x_min + _WALL_INSET, y_min + _WALL_INSET])
    hi = np.array([x_max - _WALL_INSET, y_max - _WALL_INSET])
    uniform_mode = sigma_c >= 0.5 * _SIGMA_HI
    if uniform_mode:
        margin = 2.0 * _WALL_INSET
    else:
        margin = min(min(2.0 * sigma_c + 0.5, 0.25 * (x_max - x_min)), 0.25 * (y_max - y_min))
    anchor_lo = np.array([x_min + margin, y_min + margin])
    anchor_hi = np.array([x_max - margin, y_max - margin])

    # Placement: uniform cluster anchors, Gaussian member offsets, rejection
    # against the separation floor and the walls. When the solver asked for
    # no clustering, members sit on their own uniformly drawn anchors.
    anchors = rng.uniform(anchor_lo, anchor_hi, size=(len(sizes), 2))
    positions = np.zeros((cfg.n_pedestrians, 2))
    homes = np.zeros_like(positions)
    cluster_of = np.zeros(cfg.n_pedestrians, dtype=int)
    placed = 0
    for ci, size in enumerate(sizes):
        for _ in range(size):
            for _ in range(2000):
                if uniform_mode:
                    anchors[ci] = rng.uniform(anchor_lo, anchor_hi)
                    offset = np.zeros(2)
                else:
                    offset = rng.normal(0.0, sigma_c, 2)
                cand = anchors[ci] + offset
                if not ((lo <= cand) & (cand <= hi)).all():
                    continue
                if placed and (np.hypot(*(positions[:placed] - cand).T).min() < MIN_SEPARATION):
                    continue
                break
            else:
                raise InfeasibleSceneError(
                    f"could not place pedestrian {placed} with "
                    f"{MIN_SEPARATION} m separation (cluster spread {sigma_c:.2f} m)"
                )
            positions[placed] = cand
            homes[placed] = offset
            cluster_of[placed] = ci
            placed += 1

    if not uniform_mode and cfg.n_pedestrians > 1:
        positions = _calibrate_spread(anchors, cluster_of, homes, sizes, sigma_c, lo, hi)
        homes = positions - anchors[cluster_of]

    sizes_lwh = np.stack(
        [
            prior * rng.uniform(1.0 - BOX_JITTER, 1.0 + BOX_JITTER, cfg.n_pedestrians)
            for prior in BOX_PRIOR
        ],
        axis=1,
    )

    # Motion state: per-cluster anchor velocity, per-member relative velocity,
    # each piecewise constant with its own resample clock (2-5 s segments).
    anchor_vel = np.zeros((len(sizes), 2))
    anchor_heading = rng.uniform(-math.pi, math.pi, len(sizes))
    anchor_clock = np.zeros(len(sizes))
    rel = positions - anchors[cluster_of]
    rel_vel = np.zeros((cfg.n_pedestrians, 2))
    member_clock = np.zeros(cfg.n_pedestrians)

    frames: list[list[GtObject]] = []
    for fi in range(cfg.n_frames):
        for ci in range(len(sizes)):
            if anchor_clock[ci] <= 0.0:
                anchor_clock[ci] = rng.uniform(2.0, 5.0)
                if fi > 0:
                    anchor_heading[ci] = normalize_yaw(
                        anchor_heading[ci] + rng.uniform(-1.2, 1.2)
                    )
                speed = rng.uniform(cfg.speed_min, cfg.speed_max)
                anchor_vel[ci] = speed * np.array(
                    [math.cos(anchor_heading[ci]), math.sin(anchor_heading[ci])]
                )
        for pi in range(cfg.n_pedestrians):
            if member_clock[pi] <= 0.0:
                member_clock[pi] = rng.uniform(2.0, 5.0)
                pull = (homes[pi] - rel[pi]) / member_clock[pi]
                vel = pull + rng.normal(0.0, _REL_SPEED_SIGMA, 2)
                speed = float(np.hypot(*vel))
                if speed > _REL_SPEED_CAP:
                    vel *= _REL_SPEED_CAP / speed
                rel_vel[pi] = vel

        if fi > 0:
            for ci in range(len(sizes)):
                for axis in range(2):
                    nxt = anchors[ci, axis] + anchor_vel[ci, axis] * dt
                    anchors[ci, axis], anchor_vel[ci, axis] = _reflect(
                        nxt, anchor_vel[ci, axis], anchor_lo[axis], anchor_hi[axis]
                    )
            rel += rel_vel * dt
            positions = anchors[cluster_of] + rel
            np.clip(positions, lo, hi, out=positions)
            positions = _repair_separation(positions, lo, hi)
            rel = positions - anchors[cluster_of]

        anchor_clock -= dt
        member_clock -= dt

        frame_objs = []
        for pi in range(cfg.n_pedestrians):
            vel = anchor_vel[cluster_of[pi]] + rel_vel[pi]
            length, width, height = sizes_lwh[pi]
            frame_objs.append(
                GtObject(
                    instance_id=pi,
                    box=Box3D(
                        cx=float(positions[pi, 0]),
                        cy=float(positions[pi, 1]),
                        cz=float(height / 2.0),
                        length=float(length),
                        height=float(height),
                        width=float(width),
                        yaw=math.atan2(vel[1], vel[0]),
                    ),
                    frame=fi,
                )
            )
        frames.append(frame_objs)

    return SceneSequence(frames, timestamps, cfg.frame_rate)


def corrupt(scene: SceneSequence, noise: NoiseConfig) -> list[list[Detection]]:
    """Turn a GT scene into noisy per-frame detections.

    Boxes are jittered, dropped, and mixed with uniform clutter; each kept
    detection carries its true inter-frame displacement plus offset noise
    as the predicted motion offset. With all-zero noise the detections are
    bitwise equal to the GT boxes with exact offsets.
    """
    rng = np.random.default_rng([noise.seed, 0xD1CE])
    # Clutter is spawned over the bounding extent of the scene, padded a little.
    all_x = [o.box.cx for f in scene.frames for o in f]
    all_y = [o.box.cy for f in scene.frames for o in f]
    if all_x:
        cl_lo = (min(all_x) - 2.0, min(all_y) - 2.0)
        cl_hi = (max(all_x) + 2.0, max(all_y) + 2.0)
    else:
        cl_lo, cl_hi = (-10.0, -10.0), (10.0, 10.0)

    out: list[list[Detection]] = []
    prev_objs: list[GtObject] = []
    for fi, objs in enumerate(scene.frames):
        ordered = sorted(objs, key=lambda o: o.instance_id)
        true_offsets = make_motion_offsets(ordered, prev_objs)
        rel_map = make_relationship_offsets(ordered) if noise.emit_rel else {}
        dets: list[Detection] = []
        for obj in ordered:
            miss_u = rng.uniform()
            jitter = rng.standard_normal(3) * noise.pos_sigma
            off_noise = rng.standard_normal(3) * noise.offset_sigma
            score = float(
                np.clip(
                    noise.score_true_mean + rng.standard_normal() * noise.score_true_sigma,
                    0.0,
                    1.0,
                )
            )
            if miss_u < noise.p_miss:
                continue
            true_off = true_offsets[obj.instance_id]
            box = obj.box
            dets.append(
                Detection(
                    box=Box3D(
                        cx=box.cx + jitter[0],
                        cy=box.cy + jitter[1],
                        cz=box.cz + jitter[2],
                        length=box.length,
                        height=box.height,
                        width=box.width,
                        yaw=box.yaw,
                    ),
                    score=score,
                    offset=MotionOffset(
                        true_off.ox + off_noise[0],
                        true_off.oy + off_noise[1],
                        true_off.oz + off_noise[2],
                        newborn=true_off.newborn,
                    ),
                    frame=fi,
                    relationship=rel_map.get(obj.instance_id) if noise.emit_rel else None,
                )
            )
        n_clutter = int(rng.poisson(noise.clutter_rate))
        for _ in range(n_clutter):
            cx = rng.uniform(cl_lo[0], cl_hi[0])
            cy = rng.uniform(cl_lo[1], cl_hi[1])
            dims = [p * rng.uniform(1.0 - BOX_JITTER, 1.0 + BOX_JITTER) for p in BOX_PRIOR]
            yaw = rng.uniform(-math.pi, math.pi)
            off_noise = rng.standard_normal(3) * noise.offset_sigma
            score = float(
                np.clip(
                    noise.score_clutter_mean
                    + rng.standard_normal() * noise.score_clutter_sigma,
                    0.0,
                    1.0,
                )
            )
            dets.append(
                Detection(
                    box=Box3D(cx, cy, dims[2] / 2.0, dims[0], dims[2], dims[1], yaw),
                    score=score,
                    offset=MotionOffset(off_noise[0], off_noise[1], off_noise[2], newborn=True),
                    frame=fi,
                    relationship=RelationshipOffset.undefined() if noise.emit_rel else None,
                )
            )
        out.append(dets)
        prev_objs = ordered
    return out


def density_sweep(base: SimConfig, densities: list[float]) -> list[SceneSequence]:
    """One scene per density target, with per-target seeds derived from base."""
    scenes = []
    for i, density in enumerate(densities):
        seed = int(np.random.SeedSequence([base.seed, i]).generate_state(1)[0])
        scenes.append(gen_scene(replace(base, target_density2=density, seed=seed)))
    return scenes
