"""AU-to-face-region routing and landmark-derived crop rectangles.

Landmarks follow the 68-point iBUG layout (0-based): jaw 0-16, brows 17-26,
nose 27-35, eyes 36-47, mouth 48-67. Only geometry is produced here; cropping
pixels is left to whatever consumes the manifest.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import N_LANDMARKS, Dataset, check_au
from .errors import DomainError, ShapeError


class Region(str, enum.Enum):
    UPPER_HALF = "UpperHalf"
    MIDDLE = "Middle"
    LOWER_HALF = "LowerHalf"


_AU_REGION = {
    1: Region.UPPER_HALF,
    2: Region.UPPER_HALF,
    4: Region.UPPER_HALF,
    5: Region.UPPER_HALF,
    6: Region.UPPER_HALF,
    9: Region.MIDDLE,
    12: Region.LOWER_HALF,
    15: Region.LOWER_HALF,
    17: Region.LOWER_HALF,
    20: Region.LOWER_HALF,
    25: Region.LOWER_HALF,
    26: Region.LOWER_HALF,
}

REGION_LANDMARKS = {
    Region.UPPER_HALF: tuple(range(17, 27)) + tuple(range(36, 48)),
    Region.MIDDLE: tuple(range(27, 36)),
    Region.LOWER_HALF: tuple(range(4, 13)) + tuple(range(48, 68)),
}

MANIFEST_HEADER = ["subject", "frame", "au", "region", "x_min", "y_min", "x_max", "y_max"]


@dataclass(frozen=True)
class RegionBox:
    region: Region
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DomainError(f"degenerate {self.region.value} box {self.as_tuple()}")

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def contains(self, x, y) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


def region_for_au(au) -> Region:
    return _AU_REGION[check_au(au)]


def compute_region_boxes(landmarks, margin_fraction: float = 0.1) -> dict[Region, RegionBox]:
    """Bounding boxes of each region's landmark subset.

    Each box is grown by ``margin_fraction`` of its own width (height) on the
    left and right (top and bottom), then clamped at zero.
    """
    pts = np.asarray(landmarks, dtype=float)
    if pts.shape != (N_LANDMARKS, 2):
        raise ShapeError(f"expected ({N_LANDMARKS}, 2) landmarks, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise DomainError("landmarks contain non-finite coordinates")
    if margin_fraction < 0:
        raise DomainError("margin_fraction must be non-negative")
    boxes = {}
    for region, index in REGION_LANDMARKS.items():
        sub = pts[list(index)]
        x_lo, y_lo = sub.min(axis=0)
        x_hi, y_hi = sub.max(axis=0)
        if x_lo == x_hi or y_lo == y_hi:
            raise DomainError(f"landmarks of {region.value} span a degenerate box")
        dx = margin_fraction * (x_hi - x_lo)
        dy = margin_fraction * (y_hi - y_lo)
        boxes[region] = RegionBox(
            region,
            max(0.0, float(x_lo - dx)),
            max(0.0, float(y_lo - dy)),
            max(0.0, float(x_hi + dx)),
            max(0.0, float(y_hi + dy)),
        )
    return boxes


def _fmt(v: float) -> str:
    return repr(float(v))


def emit_crop_manifest(dataset: Dataset, au_list, out, margin_fraction: float = 0.1) -> list[str]:
    """Write the crop manifest CSV; return per-frame error messages.

    Frames without usable landmarks are skipped in the manifest and listed
    in ``<out>.errors.csv``. An empty return value means every frame was
    written.
    """
    aus = sorted(check_au(a) for a in au_list)
    out = Path(out)
    if dataset.landmarks is None:
        lms = np.full((len(dataset), N_LANDMARKS, 2), np.nan)
    else:
        lms = dataset.landmarks
    order = np.lexsort((dataset.frame_index, dataset.subjects))
    errors: list[tuple[str, int, str]] = []
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for i in order:
            subject, frame = str(dataset.subjects[i]), int(dataset.frame_index[i])
            try:
                if np.all(np.isnan(lms[i])):
                    raise DomainError("missing landmarks")
                boxes = compute_region_boxes(lms[i], margin_fraction)
            except (DomainError, ShapeError) as exc:
                errors.append((subject, frame, str(exc)))
                continue
            for au in aus:
                box = boxes[region_for_au(au)]
                writer.writerow([subject, frame, au, box.region.value, *map(_fmt, box.as_tuple())])
    err_path = out.with_name(out.name + ".errors.csv")
    if errors:
        with open(err_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["subject", "frame", "error"])
            writer.writerows(errors)
    elif err_path.exists():
        err_path.unlink()
    return [f"{s} frame {f}: {msg}" for s, f, msg in errors]

