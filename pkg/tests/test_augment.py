import numpy as np
import pytest

from lidartrust.augment import (
    AugmentConfig,
    Instance,
    PlacementPose,
    apply_pose,
    augment_dataset,
    build_billboard_mask,
    build_instance_bank,
    check_placement,
    ground_shift,
    transplant_instance,
)
from lidartrust.errors import DegenerateInstance, EmptyBank, ExhaustedTrials, NoOcclusion
from lidartrust.lidar_io import (
    FrameEntry,
    LabelFrame,
    PointFrame,
    read_label_frame,
    read_point_frame,
    write_frame_pair,
    write_manifest,
)
from lidartrust.synthetic import (
    GROUND_Z,
    box_cloud,
    pedestrian_instance,
    road_scene,
    scene_table,
)
from lidartrust.taxonomy import merge_labels

TABLE = scene_table()
PEOPLE = TABLE.id_of("people")


def single_point_instance(xyz, class_id=PEOPLE):
    return Instance(
        points=np.array([xyz], dtype=float),
        intensity=np.array([0.5], dtype=np.float32),
        class_id=class_id,
        source_frame_id="aux",
        instance_id=1,
    )


def wall_instance(x=10.0, half=0.2, spacing=0.02, class_id=PEOPLE):
    ys = np.arange(-half, half + spacing / 2, spacing)
    zs = np.arange(-half, half + spacing / 2, spacing)
    gy, gz = np.meshgrid(ys, zs, indexing="ij")
    pts = np.column_stack([np.full(gy.size, x), gy.ravel(), gz.ravel()])
    return Instance(
        points=pts,
        intensity=np.full(pts.shape[0], 0.7, dtype=np.float32),
        class_id=class_id,
        source_frame_id="aux",
        instance_id=2,
    )


def write_scene(tmp_path, frame, labels, name="000000"):
    frame.frame_id = name
    bin_path, label_path = write_frame_pair(frame, labels, tmp_path)
    return FrameEntry(name, bin_path, label_path)


# ---------------------------------------------------------------- bank


def person_cluster_frame(n_people=1, n_points=50, frame_id="aux0"):
    clouds = []
    rng = np.random.default_rng(9)
    for k in range(n_people):
        base = np.array([8.0 + 3 * k, 2.0 * k, GROUND_Z + 0.9])
        clouds.append(base + 0.3 * rng.standard_normal((n_points, 3)))
    pts = np.vstack(clouds)
    points = np.column_stack([pts, np.full(pts.shape[0], 0.4)]).astype(np.float32)
    labels = np.full(pts.shape[0], PEOPLE, dtype=np.int32)
    instances = np.concatenate(
        [np.full(n_points, 7 + k, dtype=np.int32) for k in range(n_people)]
    )
    return PointFrame(points, frame_id=frame_id), LabelFrame(labels, instances)


def test_bank_extracts_one_person(tmp_path):
    frame, labels = person_cluster_frame()
    entry = write_scene(tmp_path, frame, labels)
    bank = build_instance_bank([entry], TABLE, {PEOPLE}, min_points=30)
    assert len(bank) == 1
    assert bank[0].n == 50
    assert bank[0].class_id == PEOPLE
    assert bank[0].instance_id == 7


def test_bank_min_points_filters_out(tmp_path):
    frame, labels = person_cluster_frame()
    entry = write_scene(tmp_path, frame, labels)
    assert build_instance_bank([entry], TABLE, {PEOPLE}, min_points=100) == []


def test_bank_counts_two_frames_two_each(tmp_path):
    entries = []
    for i in range(2):
        frame, labels = person_cluster_frame(n_people=2, frame_id=f"aux{i}")
        entries.append(write_scene(tmp_path, frame, labels, name=f"aux{i}"))
    bank = build_instance_bank(entries, TABLE, {PEOPLE}, min_points=30)
    assert len(bank) == 4


# ---------------------------------------------------------------- billboard


def test_billboard_single_point_dilation_ring():
    mask = build_billboard_mask(single_point_instance([10.0, 0.0, 0.0]), cell_size=0.05)
    assert mask.plane_offset == pytest.approx(10.0)
    assert int(mask.occupancy.sum()) == 9  # the cell plus its 8-neighborhood
    assert np.allclose(mask.depth[mask.occupancy], 10.0)
    assert np.allclose(mask.normal, [1.0, 0.0, 0.0])


def test_billboard_min_range_wins_in_shared_cell():
    inst = Instance(
        points=np.array([[10.0, 0.0, 0.0], [10.4, 0.0, 0.0]]),
        intensity=np.array([0.9, 0.1], dtype=np.float32),
        class_id=PEOPLE,
        source_frame_id="aux",
        instance_id=1,
    )
    mask = build_billboard_mask(inst, cell_size=0.05)
    # both points project onto the plane center cell; depth is the closer range
    rows, cols = mask.cell_of(np.array([0.0]), np.array([0.0]))
    assert mask.occupancy[rows[0], cols[0]]
    assert mask.depth[rows[0], cols[0]] == pytest.approx(10.0)
    assert mask.cell_intensity[rows[0], cols[0]] == pytest.approx(0.9)


def test_billboard_rejects_origin_instance():
    with pytest.raises(DegenerateInstance):
        build_billboard_mask(single_point_instance([0.0, 0.0, 0.0]))


def test_billboard_every_point_projects_into_occupied_cell():
    inst = pedestrian_instance()
    mask = build_billboard_mask(inst, cell_size=0.05)
    denom = inst.points @ mask.normal
    hits = inst.points * (mask.plane_offset / denom)[:, None]
    rel = hits - mask.center
    rows, cols = mask.cell_of(rel @ mask.u, rel @ mask.v)
    assert mask.occupancy[rows, cols].all()
    assert (mask.depth[mask.occupancy] > 0).all()
    assert np.isfinite(mask.depth[mask.occupancy]).all()


# ---------------------------------------------------------------- placement


def merged_scene(**kwargs):
    frame, labels = road_scene(**kwargs)
    return frame, labels, merge_labels(labels.labels, TABLE)


def test_placement_valid_on_open_road():
    frame, _labels, merged = merged_scene()
    inst = pedestrian_instance()
    dz = ground_shift(frame, merged, inst, 0.0, TABLE)
    check = check_placement(frame, merged, inst, PlacementPose(0.0, dz), TABLE)
    assert check.valid and check.reason is None


def test_placement_not_road_over_building_patch():
    building = TABLE.id_of("building")
    frame, _labels, merged = merged_scene(patches=[((6.0, 10.0, -2.0, 2.0), building)])
    inst = pedestrian_instance()
    check = check_placement(frame, merged, inst, PlacementPose(0.0, 0.0), TABLE)
    assert not check.valid and check.reason == "NotRoad"


def test_placement_occupied_by_car_box():
    # car body above wheel clearance: road is visible below, but the cloud
    # protrudes into the placement cylinder
    car = TABLE.id_of("car")
    box = box_cloud((8.0, 0.0, GROUND_Z + 0.85), (0.4, 0.4, 1.0))
    frame, _labels, merged = merged_scene(obstacles=[(box, car)])
    inst = pedestrian_instance()
    dz = ground_shift(frame, merged, inst, 0.0, TABLE)
    check = check_placement(frame, merged, inst, PlacementPose(0.0, dz), TABLE)
    assert not check.valid and check.reason == "Occupied"


def test_placement_no_ground_outside_scene():
    frame, _labels, merged = merged_scene()  # road only at x >= 2
    inst = pedestrian_instance()
    pose = PlacementPose(-np.pi, 0.0)  # rotate to x = -8: empty space
    check = check_placement(frame, merged, inst, pose, TABLE)
    assert not check.valid and check.reason == "NoGround"


def test_ground_shift_seats_instance_on_road():
    frame, _labels, merged = merged_scene()
    inst = pedestrian_instance()
    dz = ground_shift(frame, merged, inst, 0.0, TABLE)
    posed = apply_pose(inst, PlacementPose(0.0, dz))
    assert posed.points[:, 2].min() == pytest.approx(GROUND_Z, abs=1e-6)


# ---------------------------------------------------------------- transplant


def three_ray_frame():
    pts = np.array(
        [
            [20.0, 0.0, 0.0, 0.5],  # behind the wall on its ray
            [5.0, 0.0, 0.0, 0.5],  # in front of the wall
            [20.0, 5.0, 0.0, 0.5],  # ray misses every occupied cell
        ],
        dtype=np.float32,
    )
    labels = LabelFrame(np.zeros(3, dtype=np.int32), np.zeros(3, dtype=np.int32))
    return PointFrame(pts, frame_id="rays"), labels


def test_transplant_single_ray_geometry():
    frame, labels = three_ray_frame()
    out = transplant_instance(frame, labels, wall_instance(), PlacementPose(0.0, 0.0))
    replaced = out.provenance[0].replaced
    assert replaced.tolist() == [0]
    new_pt = out.frame.points[0, :3]
    assert np.linalg.norm(new_pt - np.array([10.0, 0.0, 0.0])) < 0.02
    assert out.labels.labels[0] == PEOPLE
    # untouched rays
    assert np.array_equal(out.frame.points[1], frame.points[1])
    assert np.array_equal(out.frame.points[2], frame.points[2])
    assert out.labels.labels[1] == 0 and out.labels.labels[2] == 0


def test_transplant_point_count_conserved():
    frame, labels = three_ray_frame()
    out = transplant_instance(frame, labels, wall_instance(), PlacementPose(0.0, 0.0))
    assert out.frame.n == frame.n
    assert out.labels.n == labels.n


def test_transplant_beam_preservation_and_shrink():
    frame, labels, merged = merged_scene(min_range=2.5, x_range=(-30.0, 30.0),
                                         y_range=(-30.0, 30.0))
    inst = pedestrian_instance()
    dz = ground_shift(frame, merged, inst, 0.0, TABLE)
    out = transplant_instance(frame, labels, inst, PlacementPose(0.0, dz))
    idx = out.provenance[0].replaced
    assert idx.size > 0
    before = frame.xyz[idx].astype(np.float64)
    after = out.frame.xyz[idx].astype(np.float64)
    r_before = np.linalg.norm(before, axis=1)
    r_after = np.linalg.norm(after, axis=1)
    assert (r_after < r_before).all()
    cos = (before * after).sum(axis=1) / (r_before * r_after)
    assert (np.arccos(np.clip(cos, -1, 1)) <= 1e-5).all()
    assert (out.labels.labels[idx] == PEOPLE).all()


def test_transplant_no_occlusion_raises():
    pts = np.array([[5.0, 0.0, 0.0, 0.5]], dtype=np.float32)
    frame = PointFrame(pts, frame_id="front")
    labels = LabelFrame(np.zeros(1, dtype=np.int32), np.zeros(1, dtype=np.int32))
    with pytest.raises(NoOcclusion):
        transplant_instance(frame, labels, wall_instance(), PlacementPose(0.0, 0.0))


def test_transplant_custom_output_label_and_instance_id():
    frame, labels = three_ray_frame()
    out = transplant_instance(
        frame, labels, wall_instance(), PlacementPose(0.0, 0.0),
        out_label=30, new_instance_id=12,
    )
    assert out.labels.labels[0] == 30
    assert out.labels.instance_ids[0] == 12


# ---------------------------------------------------------------- dataset


def open_scene_entry(tmp_path, name="000000"):
    frame, labels = road_scene(
        min_range=2.5, x_range=(-30.0, 30.0), y_range=(-30.0, 30.0), frame_id=name
    )
    return write_scene(tmp_path, frame, labels, name=name)


def test_augment_dataset_places_requested_count(tmp_path):
    entry = open_scene_entry(tmp_path / "src")
    bank = [pedestrian_instance(seed=3), pedestrian_instance(seed=4, distance=12.0)]
    out = augment_dataset([entry], bank, {PEOPLE: 2}, TABLE, seed=11,
                          out_dir=tmp_path / "out")
    frame = read_point_frame(tmp_path / "out" / "000000.bin")
    labels = read_label_frame(tmp_path / "out" / "000000.label", frame.n)
    people_instances = set(labels.instance_ids[labels.labels == PEOPLE].tolist())
    assert len(people_instances) == 2
    assert out.exists()
    assert (tmp_path / "out" / "000000.provenance.json").exists()


def test_augment_dataset_deterministic(tmp_path):
    entry = open_scene_entry(tmp_path / "src")
    bank = [pedestrian_instance(seed=3)]
    for run in ("a", "b"):
        augment_dataset([entry], bank, {PEOPLE: 1}, TABLE, seed=5,
                        out_dir=tmp_path / run)
    for name in ("000000.bin", "000000.label", "000000.provenance.json",
                 "manifest.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_augment_dataset_exhausted_trials_passes_frame_through(tmp_path):
    frame, labels = road_scene(frame_id="blocked",
                               patches=[((-100.0, 100.0, -100.0, 100.0),
                                         TABLE.id_of("building"))])
    entry = write_scene(tmp_path / "src", frame, labels, name="blocked")
    bank = [pedestrian_instance(seed=3)]
    with pytest.warns(ExhaustedTrials):
        augment_dataset([entry], bank, {PEOPLE: 1}, TABLE, seed=1,
                        out_dir=tmp_path / "out")
    out_frame = read_point_frame(tmp_path / "out" / "blocked.bin")
    assert np.array_equal(out_frame.points, frame.points)


def test_augment_dataset_empty_bank_rejected(tmp_path):
    entry = open_scene_entry(tmp_path / "src")
    with pytest.raises(EmptyBank):
        augment_dataset([entry], [], {PEOPLE: 1}, TABLE, seed=0,
                        out_dir=tmp_path / "out")


def test_manifest_written_for_augmented_set(tmp_path):
    entry = open_scene_entry(tmp_path / "src")
    bank = [pedestrian_instance(seed=3)]
    manifest = augment_dataset([entry], bank, {PEOPLE: 1}, TABLE, seed=2,
                               out_dir=tmp_path / "out")
    from lidartrust.lidar_io import read_manifest

    entries = read_manifest(manifest)
    assert len(entries) == 1
    assert entries[0].frame_id == "000000"
    assert entries[0].points.exists()
