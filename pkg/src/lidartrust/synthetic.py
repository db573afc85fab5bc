"""Synthetic scenes, instances, and feature populations.

These generators drive the test suite and the runnable demo scripts: flat-road
frames with box obstacles for transplant checks, and Gaussian feature
populations with an analytic softmax classifier for detection checks.
"""

from __future__ import annotations

import numpy as np

from .augment import Instance
from .lidar_io import LabelFrame, PointFrame, PredictionSet
from .taxonomy import ClassDef, ClassTable
from .trust_scores import softmax

GROUND_Z = -1.7


def scene_table(ood: bool = False) -> ClassTable:
    """Small class table for synthetic scenes; raw labels equal class ids."""
    classes = (
        ClassDef(0, "road", "large"),
        ClassDef(1, "plants", "large"),
        ClassDef(2, "building", "large"),
        ClassDef(3, "car", "large"),
        ClassDef(4, "people", "small"),
    )
    return ClassTable(
        classes=classes,
        merge_map={c.class_id: c.class_id for c in classes},
        ood_set=frozenset({4}) if ood else frozenset(),
    )


def ground_grid(
    x_range=(2.0, 40.0),
    y_range=(-15.0, 15.0),
    spacing: float = 0.3,
    z: float = GROUND_Z,
) -> np.ndarray:
    xs = np.arange(x_range[0], x_range[1], spacing)
    ys = np.arange(y_range[0], y_range[1], spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])
    return pts


def box_cloud(center, size, spacing: float = 0.1) -> np.ndarray:
    """Points sampled on the axis-aligned surface of a box."""
    cx, cy, cz = center
    sx, sy, sz = size
    faces = []
    us = np.arange(-sx / 2, sx / 2 + spacing / 2, spacing)
    vs = np.arange(-sy / 2, sy / 2 + spacing / 2, spacing)
    ws = np.arange(-sz / 2, sz / 2 + spacing / 2, spacing)
    for w in (-sz / 2, sz / 2):
        gu, gv = np.meshgrid(us, vs, indexing="ij")
        faces.append(np.column_stack([gu.ravel() + cx, gv.ravel() + cy,
                                      np.full(gu.size, w + cz)]))
    for u in (-sx / 2, sx / 2):
        gv, gw = np.meshgrid(vs, ws, indexing="ij")
        faces.append(np.column_stack([np.full(gv.size, u + cx), gv.ravel() + cy,
                                      gw.ravel() + cz]))
    for v in (-sy / 2, sy / 2):
        gu, gw = np.meshgrid(us, ws, indexing="ij")
        faces.append(np.column_stack([gu.ravel() + cx, np.full(gu.size, v + cy),
                                      gw.ravel() + cz]))
    return np.vstack(faces)


def road_scene(
    *,
    obstacles: list[tuple[np.ndarray, int]] | None = None,
    patches: list[tuple[np.ndarray, int]] | None = None,
    frame_id: str = "scene",
    spacing: float = 0.3,
    x_range=(2.0, 40.0),
    y_range=(-15.0, 15.0),
    min_range: float = 0.0,
) -> tuple[PointFrame, LabelFrame]:
    """Flat road plane plus optional obstacle clouds and ground label patches.

    obstacles: (points, raw_label) clouds appended to the frame.
    patches: (xy_box [x0, x1, y0, y1], raw_label) regions of the ground
    relabeled, e.g. to fake a non-road surface.
    min_range drops ground points closer than that to the sensor axis.
    """
    ground = ground_grid(x_range=x_range, y_range=y_range, spacing=spacing)
    if min_range > 0:
        ground = ground[np.linalg.norm(ground[:, :2], axis=1) >= min_range]
    labels = np.zeros(ground.shape[0], dtype=np.int32)  # road
    for box, raw in patches or []:
        x0, x1, y0, y1 = box
        sel = (
            (ground[:, 0] >= x0)
            & (ground[:, 0] <= x1)
            & (ground[:, 1] >= y0)
            & (ground[:, 1] <= y1)
        )
        labels[sel] = raw
    parts = [ground]
    label_parts = [labels]
    for cloud, raw in obstacles or []:
        parts.append(cloud)
        label_parts.append(np.full(cloud.shape[0], raw, dtype=np.int32))
    pts = np.vstack(parts)
    lab = np.concatenate(label_parts)
    points = np.column_stack([pts, np.full(pts.shape[0], 0.5)]).astype(np.float32)
    frame = PointFrame(points, frame_id=frame_id)
    return frame, LabelFrame(lab, np.zeros_like(lab))


def pedestrian_instance(
    *,
    n_points: int = 200,
    distance: float = 8.0,
    azimuth: float = 0.0,
    ground_z: float = GROUND_Z,
    class_id: int = 4,
    height: float = 1.7,
    radius: float = 0.25,
    seed: int = 7,
    source_frame_id: str = "aux",
    instance_id: int = 1,
) -> Instance:
    """Roughly cylindrical standing figure sampled at a given range/azimuth."""
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0.0, 2 * np.pi, n_points)
    r = radius * np.sqrt(rng.uniform(0.2, 1.0, n_points))
    z = rng.uniform(0.0, height, n_points)
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z + ground_z])
    pts[:, 0] += distance * np.cos(azimuth)
    pts[:, 1] += distance * np.sin(azimuth)
    return Instance(
        points=pts,
        intensity=rng.uniform(0.2, 0.8, n_points).astype(np.float32),
        class_id=class_id,
        source_frame_id=source_frame_id,
        instance_id=instance_id,
    )


def feature_table(n_id: int = 3) -> ClassTable:
    """n_id in-distribution classes plus one OOD class (the last id)."""
    names = ["alpha", "beta", "gamma", "delta", "epsilon"][:n_id]
    palette = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#17becf"]
    classes = tuple(
        ClassDef(i, name, "middle", color=palette[i]) for i, name in enumerate(names)
    ) + (ClassDef(n_id, "novel", "ood", color="#d62728"),)
    return ClassTable(
        classes=classes,
        merge_map={c.class_id: c.class_id for c in classes},
        ood_set=frozenset({n_id}),
    )


def gaussian_population(
    id_means,
    ood_mean,
    *,
    n_per_class: int = 1500,
    n_ood: int = 1500,
    sigma: float = 1.0,
    seed: int = 0,
) -> PredictionSet:
    """Gaussian feature clusters classified by an analytic softmax head.

    Logits are the negative half squared distances to the ID means (a Bayes
    classifier for equal isotropic covariances), so prediction quality and
    feature geometry are known by construction.  Ground truth ids are
    0..K-1 for the ID classes and K for the OOD cluster.
    """
    id_means = np.asarray(id_means, dtype=np.float64)
    k, dim = id_means.shape
    rng = np.random.default_rng(seed)
    feats = [mu + sigma * rng.standard_normal((n_per_class, dim)) for mu in id_means]
    feats.append(np.asarray(ood_mean, dtype=np.float64)
                 + sigma * rng.standard_normal((n_ood, dim)))
    features = np.vstack(feats)
    gt = np.concatenate(
        [np.full(n_per_class, i) for i in range(k)] + [np.full(n_ood, k)]
    ).astype(np.int32)
    diff = features[:, None, :] - id_means[None, :, :]
    logits = -0.5 * (diff**2).sum(axis=2) / sigma**2
    probs = softmax(logits, axis=1)
    return PredictionSet(
        gt=gt,
        probs=probs[:, None, :].astype(np.float32),
        logits=logits[:, None, :].astype(np.float32),
        features=features.astype(np.float32),
    )
