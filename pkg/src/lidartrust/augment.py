"""Instance transplanting between LiDAR datasets via billboard occlusion masks.

An instance extracted from an auxiliary dataset is posed into a target frame
(azimuth rotation about the sensor axis plus ground alignment).  A 2D
occupancy mask on the plane orthogonal to the beam through the instance
center acts as an occluder: every target point whose ray pierces an occupied
cell from behind is pulled onto the instance surface along its own beam, so
the target sensor's scan pattern is preserved exactly.
"""

from __future__ import annotations

import json
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInstance, EmptyBank, ExhaustedTrials, NoOcclusion
from .lidar_io import (
    FrameEntry,
    LabelFrame,
    PointFrame,
    read_label_frame,
    read_point_frame,
    write_frame_pair,
    write_manifest,
)
from .taxonomy import ClassTable, merge_labels

MIN_CENTER_RANGE = 0.1


@dataclass(frozen=True)
class AugmentConfig:
    cell_size: float = 0.05
    margin: float = 0.2
    road_support_fraction: float = 0.8
    min_points: int = 30
    max_pose_trials: int = 16
    ground_band: float = 0.3  # height above the lowest disc point treated as ground
    interp_neighbors: int = 3
    road_class: str = "road"
    ground_plants_class: str = "plants"  # low points of this class do not block placement


@dataclass
class Instance:
    """An extracted object point cloud in its source sensor coordinates."""

    points: np.ndarray  # (K, 3) float64
    intensity: np.ndarray  # (K,) float32
    class_id: int
    source_frame_id: str
    instance_id: int

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.intensity = np.ascontiguousarray(self.intensity, dtype=np.float32)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def center_range(self) -> float:
        return float(np.linalg.norm(self.center))


@dataclass(frozen=True)
class PlacementPose:
    """Azimuth rotation about the sensor z-axis plus a vertical ground shift."""

    theta: float
    dz: float = 0.0

    def __post_init__(self):
        if not -np.pi <= self.theta < np.pi:
            raise ValueError("theta must lie in [-pi, pi)")


@dataclass
class BillboardMask:
    """Occupancy grid on the plane through the instance center, orthogonal to
    the beam toward it.  Occupied cells carry the closest mapped point's range
    and intensity; a one-cell 8-neighborhood dilation closes pinholes."""

    normal: np.ndarray  # (3,) unit beam direction to the center
    u: np.ndarray  # (3,) plane basis
    v: np.ndarray  # (3,) plane basis
    center: np.ndarray  # (3,)
    plane_offset: float  # normal . center
    cell_size: float
    origin: tuple[int, int]  # grid index offset (row 0 / col 0 cell indices)
    occupancy: np.ndarray  # (H, W) bool
    depth: np.ndarray  # (H, W) float64, inf where unoccupied
    cell_intensity: np.ndarray  # (H, W) float32

    def cell_of(self, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        row = np.floor(a / self.cell_size).astype(np.int64) - self.origin[0]
        col = np.floor(b / self.cell_size).astype(np.int64) - self.origin[1]
        return row, col

    def occupied_cells(self):
        """(P, 2) plane coordinates of occupied cell centers, with depths and
        intensities aligned to them."""
        rows, cols = np.nonzero(self.occupancy)
        a = (rows + self.origin[0] + 0.5) * self.cell_size
        b = (cols + self.origin[1] + 0.5) * self.cell_size
        return np.column_stack([a, b]), self.depth[rows, cols], self.cell_intensity[rows, cols]


def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0])
    if abs(normal @ ref) > 0.999:
        ref = np.array([1.0, 0.0, 0.0])
    u = np.cross(normal, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def rotate_z(points: np.ndarray, theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return points @ rot.T


def apply_pose(instance: Instance, pose: PlacementPose) -> Instance:
    pts = rotate_z(instance.points, pose.theta)
    pts[:, 2] += pose.dz
    return Instance(
        points=pts,
        intensity=instance.intensity,
        class_id=instance.class_id,
        source_frame_id=instance.source_frame_id,
        instance_id=instance.instance_id,
    )


def build_instance_bank(
    entries: list[FrameEntry],
    table: ClassTable,
    wanted,
    min_points: int = 30,
) -> list[Instance]:
    """Extract every labeled instance of the wanted classes from a manifest.

    One Instance per (frame, instance id, merged class) with at least
    min_points points.  Frames lacking wanted classes contribute nothing.
    """
    wanted = sorted(set(wanted))
    bank: list[Instance] = []
    for entry in entries:
        frame = read_point_frame(entry.points, frame_id=entry.frame_id)
        labels = read_label_frame(entry.labels, frame.n)
        merged = merge_labels(labels.labels, table)
        for cid in wanted:
            mask = merged == cid
            if not mask.any():
                continue
            for inst_id in np.unique(labels.instance_ids[mask]):
                sel = mask & (labels.instance_ids == inst_id)
                if int(sel.sum()) < min_points:
                    continue
                bank.append(
                    Instance(
                        points=frame.xyz[sel].astype(np.float64),
                        intensity=frame.intensity[sel].copy(),
                        class_id=cid,
                        source_frame_id=entry.frame_id,
                        instance_id=int(inst_id),
                    )
                )
    return bank


def build_billboard_mask(instance: Instance, cell_size: float = 0.05) -> BillboardMask:
    """Project instance points along their rays onto the center-orthogonal
    plane and grid the hits.  Cell depth is the minimum range among mapped
    points (closest surface wins); intensity follows that point."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    center = instance.center
    rng_center = instance.center_range
    if rng_center < MIN_CENTER_RANGE:
        raise DegenerateInstance(
            f"instance center is {rng_center:.3f} m from the sensor origin"
        )
    normal = center / rng_center
    u, v = _plane_basis(normal)

    pts = instance.points
    denom = pts @ normal
    if (denom <= 1e-9).any():
        raise DegenerateInstance("instance spans the sensor origin; rays cannot project")
    scale = (normal @ center) / denom
    hits = pts * scale[:, None]
    rel = hits - center
    a = rel @ u
    b = rel @ v
    ranges = np.linalg.norm(pts, axis=1)

    a_idx = np.floor(a / cell_size).astype(np.int64)
    b_idx = np.floor(b / cell_size).astype(np.int64)
    a0 = int(a_idx.min()) - 1
    b0 = int(b_idx.min()) - 1
    h = int(a_idx.max()) - a0 + 2
    w = int(b_idx.max()) - b0 + 2

    depth = np.full((h, w), np.inf)
    inten = np.zeros((h, w), dtype=np.float32)
    flat = (a_idx - a0) * w + (b_idx - b0)
    order = np.lexsort((ranges, flat))
    sorted_flat = flat[order]
    first = np.ones(sorted_flat.size, dtype=bool)
    first[1:] = sorted_flat[1:] != sorted_flat[:-1]
    depth.reshape(-1)[sorted_flat[first]] = ranges[order][first]
    inten.reshape(-1)[sorted_flat[first]] = instance.intensity[order][first]
    occupied = np.isfinite(depth)

    # close pinholes: unoccupied cells adopt the nearest (min-depth) occupied
    # 8-neighbor; original cells are left untouched
    neigh_depth = np.full((8, h, w), np.inf)
    neigh_inten = np.zeros((8, h, w), dtype=np.float32)
    k = 0
    for da in (-1, 0, 1):
        for db in (-1, 0, 1):
            if da == 0 and db == 0:
                continue
            src = depth[max(0, -da): h - max(0, da), max(0, -db): w - max(0, db)]
            neigh_depth[k, max(0, da): h - max(0, -da), max(0, db): w - max(0, -db)] = src
            src_i = inten[max(0, -da): h - max(0, da), max(0, -db): w - max(0, db)]
            neigh_inten[k, max(0, da): h - max(0, -da), max(0, db): w - max(0, -db)] = src_i
            k += 1
    best = np.argmin(neigh_depth, axis=0)
    rows, cols = np.indices((h, w))
    fill = ~occupied & np.isfinite(neigh_depth[best, rows, cols])
    depth[fill] = neigh_depth[best, rows, cols][fill]
    inten[fill] = neigh_inten[best, rows, cols][fill]

    return BillboardMask(
        normal=normal,
        u=u,
        v=v,
        center=center,
        plane_offset=float(normal @ center),
        cell_size=cell_size,
        origin=(a0, b0),
        occupancy=np.isfinite(depth),
        depth=depth,
        cell_intensity=inten,
    )


@dataclass(frozen=True)
class PlacementCheck:
    valid: bool
    reason: str | None  # NoGround | NotRoad | Occupied


def check_placement(
    frame: PointFrame,
    merged_labels: np.ndarray,
    instance: Instance,
    pose: PlacementPose,
    table: ClassTable,
    config: AugmentConfig = AugmentConfig(),
) -> PlacementCheck:
    """Validate a posed placement: road support under the footprint and free
    space inside the instance's inflated bounding cylinder.

    merged_labels must already be merged class ids aligned with the frame.
    """
    posed = apply_pose(instance, pose)
    road_id = table.id_of(config.road_class)
    try:
        plants_id = table.id_of(config.ground_plants_class)
    except KeyError:
        plants_id = None

    xy = frame.xyz[:, :2].astype(np.float64)
    z = frame.xyz[:, 2].astype(np.float64)
    centroid = posed.points[:, :2].mean(axis=0)
    foot_r = float(np.linalg.norm(posed.points[:, :2] - centroid, axis=1).max()) + config.margin
    dist = np.linalg.norm(xy - centroid, axis=1)
    in_disc = dist <= foot_r
    if not in_disc.any():
        return PlacementCheck(False, "NoGround")

    z_low = z[in_disc].min()
    ground = in_disc & (z <= z_low + config.ground_band)
    road_frac = float((merged_labels[ground] == road_id).mean())
    if road_frac < config.road_support_fraction:
        return PlacementCheck(False, "NotRoad")
    ground_z = float(np.median(z[ground]))

    z_min = posed.points[:, 2].min() - config.margin
    z_max = posed.points[:, 2].max() + config.margin
    inside = in_disc & (z >= z_min) & (z <= z_max)
    passable = merged_labels == road_id
    if plants_id is not None:
        passable |= (merged_labels == plants_id) & (z <= ground_z + config.ground_band)
    if (inside & ~passable).any():
        return PlacementCheck(False, "Occupied")
    return PlacementCheck(True, None)


def ground_shift(
    frame: PointFrame,
    merged_labels: np.ndarray,
    instance: Instance,
    theta: float,
    table: ClassTable,
    config: AugmentConfig = AugmentConfig(),
) -> float | None:
    """Vertical shift that seats the rotated instance on the local road:
    median road height under the footprint minus the instance's lowest point.
    None when the footprint has no road support at all."""
    rotated = rotate_z(instance.points, theta)
    centroid = rotated[:, :2].mean(axis=0)
    foot_r = float(np.linalg.norm(rotated[:, :2] - centroid, axis=1).max()) + config.margin
    road_id = table.id_of(config.road_class)
    xy = frame.xyz[:, :2].astype(np.float64)
    sel = (np.linalg.norm(xy - centroid, axis=1) <= foot_r) & (merged_labels == road_id)
    if not sel.any():
        return None
    return float(np.median(frame.xyz[sel, 2]) - rotated[:, 2].min())


@dataclass
class Placement:
    class_id: int
    source_frame_id: str
    instance_id: int
    pose: PlacementPose
    replaced: np.ndarray  # sorted point indices

    def ranges(self) -> list[list[int]]:
        """Replaced indices compressed to [start, stop) runs."""
        if self.replaced.size == 0:
            return []
        breaks = np.nonzero(np.diff(self.replaced) != 1)[0]
        starts = np.concatenate([[0], breaks + 1])
        stops = np.concatenate([breaks, [self.replaced.size - 1]])
        return [
            [int(self.replaced[s]), int(self.replaced[e]) + 1] for s, e in zip(starts, stops)
        ]


@dataclass
class AugmentedFrame:
    frame: PointFrame
    labels: LabelFrame
    provenance: list[Placement] = field(default_factory=list)


def transplant_instance(
    frame: PointFrame,
    labels: LabelFrame,
    instance: Instance,
    pose: PlacementPose,
    *,
    config: AugmentConfig = AugmentConfig(),
    out_label: int | None = None,
    new_instance_id: int | None = None,
) -> AugmentedFrame:
    """Replace frame points occluded by the posed instance's billboard mask.

    A point is replaced when its ray pierces an occupied cell and its range
    exceeds both the cell depth and the locally interpolated instance depth;
    the replacement sits at the interpolated range along the original beam, so
    direction is preserved exactly and range strictly shrinks.  Raises
    NoOcclusion if nothing is replaced.

    out_label is the semantic value written for replaced points (defaults to
    the instance's merged class id).
    """
    if frame.n != labels.n:
        raise ValueError("frame and labels disagree on N")
    posed = apply_pose(instance, pose)
    mask = build_billboard_mask(posed, config.cell_size)

    xyz = frame.xyz.astype(np.float64)
    ranges = np.linalg.norm(xyz, axis=1)
    denom = xyz @ mask.normal
    cand = denom > 1e-9
    idx = np.nonzero(cand)[0]

    scale = mask.plane_offset / denom[idx]
    hits = xyz[idx] * scale[:, None]
    rel = hits - mask.center
    a = rel @ mask.u
    b = rel @ mask.v
    row, col = mask.cell_of(a, b)
    h, w = mask.occupancy.shape
    in_grid = (row >= 0) & (row < h) & (col >= 0) & (col < w)
    idx, a, b = idx[in_grid], a[in_grid], b[in_grid]
    row, col = row[in_grid], col[in_grid]
    occ = mask.occupancy[row, col]
    idx, a, b, row, col = idx[occ], a[occ], b[occ], row[occ], col[occ]

    behind = ranges[idx] > mask.depth[row, col]
    idx, a, b = idx[behind], a[behind], b[behind]

    if idx.size:
        centers, depths, intens = mask.occupied_cells()
        k = min(config.interp_neighbors, centers.shape[0])
        tree = cKDTree(centers)
        dist, nn = tree.query(np.column_stack([a, b]), k=k)
        dist = dist.reshape(idx.size, k)
        nn = nn.reshape(idx.size, k)
        weights = 1.0 / np.maximum(dist, 1e-12)
        r_interp = (weights * depths[nn]).sum(axis=1) / weights.sum(axis=1)
        exact = dist[:, 0] < 1e-12
        r_interp[exact] = depths[nn[exact, 0]]
        new_intensity = intens[nn[:, 0]]

        shrink = ranges[idx] > r_interp
        idx, r_interp, new_intensity = idx[shrink], r_interp[shrink], new_intensity[shrink]

    if idx.size == 0:
        raise NoOcclusion("the posed billboard occludes no frame point")

    points = frame.points.copy()
    factor = (r_interp / ranges[idx]).astype(np.float64)
    points[idx, :3] = (xyz[idx] * factor[:, None]).astype(np.float32)
    points[idx, 3] = new_intensity

    out_labels = labels.labels.copy()
    out_instances = labels.instance_ids.copy()
    out_labels[idx] = instance.class_id if out_label is None else out_label
    if new_instance_id is not None:
        out_instances[idx] = new_instance_id

    placement = Placement(
        class_id=instance.class_id,
        source_frame_id=instance.source_frame_id,
        instance_id=instance.instance_id,
        pose=pose,
        replaced=np.sort(idx),
    )
    return AugmentedFrame(
        frame=PointFrame(points, frame_id=frame.frame_id),
        labels=LabelFrame(out_labels, out_instances),
        provenance=[placement],
    )


def _frame_rng(seed: int, frame_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(frame_id.encode())])


def augment_dataset(
    entries: list[FrameEntry],
    bank: list[Instance],
    per_class: dict[int, int],
    table: ClassTable,
    seed: int,
    out_dir,
    config: AugmentConfig = AugmentConfig(),
) -> Path:
    """Transplant sampled instances into every frame of a manifest.

    Each frame draws from an RNG stream derived from (seed, frame_id), so
    results are byte-stable regardless of frame processing order.  Frames
    whose pose trials are exhausted pass through (with a warning).  Returns
    the path of the written output manifest; a provenance JSON sidecar is
    written next to each frame.
    """
    out_dir = Path(out_dir)
    by_class: dict[int, list[Instance]] = {}
    for inst in bank:
        by_class.setdefault(inst.class_id, []).append(inst)
    for cid in per_class:
        if not by_class.get(cid):
            raise EmptyBank(f"no instance of class {table.name_of(cid)} in the bank")

    out_entries = []
    for entry in entries:
        frame = read_point_frame(entry.points, frame_id=entry.frame_id)
        labels = read_label_frame(entry.labels, frame.n)
        merged = merge_labels(labels.labels, table)
        rng = _frame_rng(seed, entry.frame_id)
        next_instance = int(labels.instance_ids.max(initial=0)) + 1

        current = AugmentedFrame(frame, labels, [])
        for cid in sorted(per_class):
            candidates = by_class[cid]
            raw_label = table.canonical_raw_label(cid)
            for _ in range(per_class[cid]):
                placed = False
                for _trial in range(config.max_pose_trials):
                    inst = candidates[int(rng.integers(len(candidates)))]
                    theta = float(rng.uniform(-np.pi, np.pi))
                    dz = ground_shift(current.frame, merged, inst, theta, table, config)
                    if dz is None:
                        continue
                    pose = PlacementPose(theta, dz)
                    check = check_placement(current.frame, merged, inst, pose, table, config)
                    if not check.valid:
                        continue
                    try:
                        step = transplant_instance(
                            current.frame,
                            current.labels,
                            inst,
                            pose,
                            config=config,
                            out_label=raw_label,
                            new_instance_id=next_instance,
                        )
                    except NoOcclusion:
                        continue
                    merged[step.provenance[0].replaced] = cid
                    current = AugmentedFrame(
                        step.frame, step.labels, current.provenance + step.provenance
                    )
                    next_instance += 1
                    placed = True
                    break
                if not placed:
                    warnings.warn(
                        ExhaustedTrials(
                            f"frame {entry.frame_id}: no valid pose found for class "
                            f"{table.name_of(cid)} after {config.max_pose_trials} trials"
                        ),
                        stacklevel=2,
                    )

        bin_path, label_path = write_frame_pair(current.frame, current.labels, out_dir)
        sidecar = out_dir / f"{entry.frame_id}.provenance.json"
        sidecar.write_text(
            json.dumps(
                {
                    "frame_id": entry.frame_id,
                    "placements": [
                        {
                            "class_id": p.class_id,
                            "class": table.name_of(p.class_id),
                            "source_frame_id": p.source_frame_id,
                            "instance_id": p.instance_id,
                            "theta": p.pose.theta,
                            "dz": p.pose.dz,
                            "replaced": p.ranges(),
                        }
                        for p in current.provenance
                    ],
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        out_entries.append(
            FrameEntry(frame_id=entry.frame_id, points=bin_path, labels=label_path)
        )
    return write_manifest(out_entries, out_dir / "manifest.csv")
