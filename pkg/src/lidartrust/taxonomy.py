"""Class tables: merged class definitions, raw-label merge maps, scale groups,
OOD partitions, and effective-number class weights."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import DegenerateCount, UnmappedRawLabel

IGNORE = -1

SCALE_GROUPS = ("large", "middle", "small", "ood")


@dataclass(frozen=True)
class ClassDef:
    class_id: int
    name: str
    scale_group: str
    color: str | None = None


@dataclass(frozen=True)
class ClassTable:
    """Merged class set with its raw-label merge map and OOD partition.

    Immutable after construction; safe for unrestricted concurrent reads.
    """

    classes: tuple[ClassDef, ...]
    merge_map: dict[int, int]
    ood_set: frozenset[int] = frozenset()
    beta: float = 0.9
    unit_scale: float = 1.0e6

    def __post_init__(self):
        ids = [c.class_id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ValueError(f"class ids must be contiguous 0..C-1, got {ids}")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        for c in self.classes:
            if c.scale_group not in SCALE_GROUPS:
                raise ValueError(f"unknown scale group {c.scale_group!r} for class {c.name}")
        valid = set(ids) | {IGNORE}
        for raw, target in self.merge_map.items():
            if target not in valid:
                raise ValueError(f"merge map sends raw {raw} to unknown class id {target}")
        if not self.ood_set <= set(ids):
            raise ValueError("ood_set contains unknown class ids")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.unit_scale <= 0:
            raise ValueError("unit_scale must be positive")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def class_ids(self) -> tuple[int, ...]:
        return tuple(c.class_id for c in self.classes)

    @property
    def id_class_ids(self) -> tuple[int, ...]:
        """Class ids that are prediction targets (everything not in the OOD set)."""
        return tuple(c.class_id for c in self.classes if c.class_id not in self.ood_set)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)

    def name_of(self, class_id: int) -> str:
        return self.classes[class_id].name

    def id_of(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.class_id
        raise KeyError(name)

    def scale_group_of(self, class_id: int) -> str:
        return self.classes[class_id].scale_group

    def color_of(self, class_id: int) -> str | None:
        return self.classes[class_id].color

    def canonical_raw_label(self, class_id: int) -> int:
        """Smallest raw label merging into class_id; used when writing label files."""
        raws = [raw for raw, tgt in self.merge_map.items() if tgt == class_id]
        if not raws:
            raise KeyError(f"no raw label maps to class id {class_id}")
        return min(raws)


def merge_labels(raw_labels, table: ClassTable) -> np.ndarray:
    """Map raw dataset labels to merged class ids (IGNORE = -1).

    Every raw value present must be covered by the merge map; an uncovered
    value raises UnmappedRawLabel with the first offending index.
    """
    raw = np.asarray(raw_labels, dtype=np.int64)
    out = np.empty(raw.shape, dtype=np.int32)
    if raw.size == 0:
        return out
    keys = np.fromiter(table.merge_map.keys(), dtype=np.int64)
    unmapped = ~np.isin(raw, keys)
    if raw.min() < 0:
        unmapped |= raw < 0
    if unmapped.any():
        idx = int(np.argmax(unmapped))
        raise UnmappedRawLabel(int(raw[idx]), idx)
    lut = np.full(int(max(raw.max(), keys.max())) + 1, IGNORE, dtype=np.int32)
    for k, v in table.merge_map.items():
        lut[k] = v
    out[:] = lut[raw]
    return out


@dataclass(frozen=True)
class ClassCounts:
    """Per-class point counts, with the unit used by the weighting formula."""

    counts: np.ndarray
    unit_scale: float = 1.0e6

    def __post_init__(self):
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.float64))
        if (self.counts < 0).any():
            raise ValueError("counts must be nonnegative")
        if self.unit_scale <= 0:
            raise ValueError("unit_scale must be positive")


def class_weights(counts: ClassCounts, beta: float, *, normalize: bool = True) -> np.ndarray:
    """Effective-number class weights w_c = (1-beta) / (1 - beta**(N_c/unit)).

    With normalize=True the weights are divided by (1-beta), so the
    largest-count classes approach 1.0 from above.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    n = counts.counts / counts.unit_scale
    if (counts.counts == 0).any():
        raise DegenerateCount("class weight undefined for zero-count class")
    w = (1.0 - beta) / (1.0 - beta**n)
    if normalize:
        w = w / (1.0 - beta)
    return w


def _resolve_target(value, names_to_ids: dict[str, int]) -> int:
    if isinstance(value, str):
        if value.lower() == "ignore":
            return IGNORE
        return names_to_ids[value]
    return int(value)


def load_class_table(path) -> ClassTable:
    """Load a class table from its YAML config.

    Schema: `classes` (list of {id, name, scale, color?}), `merge_map`
    (raw label -> class name | id | "ignore"), `ood` (names or ids),
    `beta`, `unit_scale`. Extra keys (e.g. `counts`) are ignored here.
    """
    doc = yaml.safe_load(Path(path).read_text())
    classes = tuple(
        ClassDef(
            class_id=int(c["id"]),
            name=str(c["name"]),
            scale_group=str(c.get("scale", "middle")),
            color=c.get("color"),
        )
        for c in sorted(doc["classes"], key=lambda c: int(c["id"]))
    )
    names_to_ids = {c.name: c.class_id for c in classes}
    merge_map = {
        int(raw): _resolve_target(tgt, names_to_ids)
        for raw, tgt in doc.get("merge_map", {}).items()
    }
    ood = frozenset(_resolve_target(o, names_to_ids) for o in doc.get("ood", []))
    return ClassTable(
        classes=classes,
        merge_map=merge_map,
        ood_set=ood,
        beta=float(doc.get("beta", 0.9)),
        unit_scale=float(doc.get("unit_scale", 1.0e6)),
    )


def save_class_table(table: ClassTable, path) -> Path:
    """Write a class table to the YAML config schema used by load_class_table."""
    doc = {
        "classes": [
            {
                "id": c.class_id,
                "name": c.name,
                "scale": c.scale_group,
                **({"color": c.color} if c.color else {}),
            }
            for c in table.classes
        ],
        "merge_map": {
            int(raw): ("ignore" if tgt == IGNORE else table.name_of(tgt))
            for raw, tgt in sorted(table.merge_map.items())
        },
        "ood": [table.name_of(i) for i in sorted(table.ood_set)],
        "beta": table.beta,
        "unit_scale": table.unit_scale,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def load_class_counts(path, split: str, table: ClassTable) -> tuple[np.ndarray, ClassCounts]:
    """Read the optional `counts` section (millions of points, keyed by class name).

    Returns (class_ids present, ClassCounts in points) in ascending id order.
    """
    doc = yaml.safe_load(Path(path).read_text())
    section = doc.get("counts", {}).get(split)
    if section is None:
        raise KeyError(f"config {path} has no counts for split {split!r}")
    ids = sorted(table.id_of(name) for name in section)
    pts = np.array([float(section[table.name_of(i)]) * 1.0e6 for i in ids])
    return np.array(ids), ClassCounts(np.round(pts), unit_scale=table.unit_scale)


def default_config_path(name: str) -> Path:
    """Path of a config shipped with the package (e.g. 'semantic_kitti')."""
    return Path(__file__).parent / "configs" / f"{name}.yaml"
