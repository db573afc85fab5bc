#!/usr/bin/env python3
"""Build a small synthetic dataset pair for exercising the augmentation CLI.

Writes a source split (flat road scenes with car boxes), an auxiliary split
(frames containing labeled pedestrians), and the class-table config, then
prints the augment command that consumes them.
"""

import argparse
from pathlib import Path

import numpy as np

from lidartrust.lidar_io import FrameEntry, LabelFrame, PointFrame, write_frame_pair, write_manifest
from lidartrust.synthetic import GROUND_Z, box_cloud, pedestrian_instance, road_scene, scene_table
from lidartrust.taxonomy import save_class_table


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/synthetic")
    parser.add_argument("--frames", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    table = scene_table()
    table_path = save_class_table(table, out / "class_table.yaml")
    rng = np.random.default_rng(args.seed)
    car = table.id_of("car")
    people = table.id_of("people")

    source_entries = []
    for i in range(args.frames):
        boxes = []
        for _ in range(int(rng.integers(1, 4))):
            center = rng.uniform([-20, -20], [20, 20])
            boxes.append(
                (box_cloud((center[0], center[1], GROUND_Z + 0.75), (1.8, 1.5, 1.5)), car)
            )
        frame, labels = road_scene(
            obstacles=boxes,
            min_range=2.5,
            x_range=(-30.0, 30.0),
            y_range=(-30.0, 30.0),
            frame_id=f"{i:06d}",
        )
        bin_path, label_path = write_frame_pair(frame, labels, out / "source")
        source_entries.append(FrameEntry(f"{i:06d}", bin_path, label_path))
    src_manifest = write_manifest(source_entries, out / "source" / "manifest.csv")

    aux_entries = []
    for i in range(2):
        parts, labs, insts = [], [], []
        for k in range(3):
            inst = pedestrian_instance(
                n_points=int(rng.integers(120, 260)),
                distance=float(rng.uniform(6.0, 18.0)),
                azimuth=float(rng.uniform(-np.pi, np.pi)),
                seed=int(rng.integers(0, 2**31)),
            )
            parts.append(np.column_stack([inst.points, inst.intensity]).astype(np.float32))
            labs.append(np.full(inst.n, people, dtype=np.int32))
            insts.append(np.full(inst.n, k + 1, dtype=np.int32))
        frame = PointFrame(np.vstack(parts), frame_id=f"aux{i:04d}")
        labels = LabelFrame(np.concatenate(labs), np.concatenate(insts))
        bin_path, label_path = write_frame_pair(frame, labels, out / "aux")
        aux_entries.append(FrameEntry(f"aux{i:04d}", bin_path, label_path))
    aux_manifest = write_manifest(aux_entries, out / "aux" / "manifest.csv")

    print(f"wrote {src_manifest} and {aux_manifest}")
    print(
        "next: lidartrust augment"
        f" --source-manifest {src_manifest}"
        f" --aux-manifest {aux_manifest}"
        " --classes people --per-frame 2 --seed 7"
        f" --class-table {table_path}"
        f" --out-dir {out / 'augmented'}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
