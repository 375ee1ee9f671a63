import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aupipe.dataset import AU_IDS, Dataset
from aupipe.errors import DomainError, ShapeError
from aupipe.regions import (
    MANIFEST_HEADER,
    REGION_LANDMARKS,
    Region,
    compute_region_boxes,
    emit_crop_manifest,
    region_for_au,
)
from aupipe.synth import canonical_face

# transcribed from the AU/region table
TABLE = {
    1: "UpperHalf", 2: "UpperHalf", 4: "UpperHalf", 5: "UpperHalf", 6: "UpperHalf",
    9: "Middle",
    12: "LowerHalf", 15: "LowerHalf", 17: "LowerHalf", 20: "LowerHalf", 25: "LowerHalf", 26: "LowerHalf",
}


@pytest.mark.parametrize("au,region", sorted(TABLE.items()))
def test_region_table(au, region):
    assert region_for_au(au).value == region


def grid_face():
    """Integer grid landmarks: upper set in x 30..50, y 10..20."""
    pts = np.zeros((68, 2))
    upper = REGION_LANDMARKS[Region.UPPER_HALF]
    for k, idx in enumerate(upper):
        pts[idx] = (30 + (k * 7) % 21, 10 + (k * 3) % 11)
    pts[upper[0]] = (30, 10)
    pts[upper[1]] = (50, 20)
    for k, idx in enumerate(REGION_LANDMARKS[Region.MIDDLE]):
        pts[idx] = (36 + k, 22 + 2 * k)
    for k in range(68):
        if k not in upper and k not in REGION_LANDMARKS[Region.MIDDLE]:
            pts[k] = (25 + k % 30, 40 + k % 25)
    return pts


def test_upper_box_hand_computed():
    box = compute_region_boxes(grid_face(), 0.1)[Region.UPPER_HALF]
    # width 20 -> 2 px each side, height 10 -> 1 px each side
    assert box.as_tuple() == pytest.approx((28.0, 9.0, 52.0, 21.0), abs=1e-12)


def test_zero_margin_is_exact_bbox():
    pts = canonical_face()
    boxes = compute_region_boxes(pts, 0.0)
    for region, idx in REGION_LANDMARKS.items():
        sub = pts[list(idx)]
        assert boxes[region].as_tuple() == (*sub.min(axis=0), *sub.max(axis=0))


def test_identical_points_rejected():
    with pytest.raises(DomainError):
        compute_region_boxes(np.full((68, 2), 5.0))


def test_bad_inputs():
    with pytest.raises(ShapeError):
        compute_region_boxes(np.zeros((67, 2)))
    pts = canonical_face()
    pts[3, 0] = np.nan
    with pytest.raises(DomainError):
        compute_region_boxes(pts)


def test_clamped_at_zero():
    pts = canonical_face(cx=100.0, cy=100.0)
    box = compute_region_boxes(pts, 0.5)[Region.UPPER_HALF]
    assert box.y_min == 0.0 or box.y_min > 0


def random_face(rng):
    return canonical_face() * rng.uniform(0.5, 1.5) + rng.normal(0, 3, (68, 2)) + 200.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_landmarks_inside_unexpanded_box(seed):
    pts = random_face(np.random.default_rng(seed))
    boxes = compute_region_boxes(pts, 0.0)
    for region, idx in REGION_LANDMARKS.items():
        assert all(boxes[region].contains(*pts[i]) for i in idx)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-100, 100), st.floats(-100, 100))
def test_translation_equivariance(seed, dx, dy):
    pts = random_face(np.random.default_rng(seed))
    a = compute_region_boxes(pts)
    b = compute_region_boxes(pts + [dx, dy])
    for r in Region:
        np.testing.assert_allclose(
            np.array(b[r].as_tuple()), np.array(a[r].as_tuple()) + [dx, dy, dx, dy], atol=1e-9, rtol=0
        )


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10))
def test_scale_equivariance(seed, s):
    pts = random_face(np.random.default_rng(seed))
    a = compute_region_boxes(pts)
    b = compute_region_boxes(pts * s)
    for r in Region:
        np.testing.assert_allclose(np.array(b[r].as_tuple()), np.array(a[r].as_tuple()) * s, atol=1e-9, rtol=1e-12)


def face_dataset(n_subjects=1, frames=2, missing=()):
    n = n_subjects * frames
    lms = np.stack([canonical_face() + k for k in range(n)])
    for i in missing:
        lms[i] = np.nan
    return Dataset(
        np.repeat([f"S{i}" for i in range(n_subjects)], frames),
        np.tile(np.arange(frames), n_subjects),
        np.zeros((n, 12), int),
        landmarks=lms,
    )


def read_rows(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def test_manifest_cardinality_and_routing(tmp_path):
    ds = face_dataset(1, 2)
    out = tmp_path / "m.csv"
    assert emit_crop_manifest(ds, AU_IDS, out) == []
    header, rows = read_rows(out)
    assert header == MANIFEST_HEADER
    assert len(rows) == 24
    boxes = compute_region_boxes(ds.landmarks[1])
    au9 = [r for r in rows if r[2] == "9" and r[1] == "1"][0]
    assert au9[3] == "Middle"
    assert tuple(map(float, au9[4:])) == boxes[Region.MIDDLE].as_tuple()
    for r in rows:
        assert r[3] == TABLE[int(r[2])]


def test_manifest_order_and_determinism(tmp_path):
    ds = face_dataset(2, 3)
    ds = ds.take(np.random.default_rng(0).permutation(len(ds)))
    emit_crop_manifest(ds, [26, 1, 9], tmp_path / "a.csv")
    emit_crop_manifest(ds, [9, 26, 1], tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    _, rows = read_rows(tmp_path / "a.csv")
    keys = [(r[0], int(r[1]), int(r[2])) for r in rows]
    assert keys == sorted(keys)


def test_manifest_missing_landmarks(tmp_path):
    ds = face_dataset(1, 3, missing=[1])
    out = tmp_path / "m.csv"
    errors = emit_crop_manifest(ds, [1, 2], out)
    assert len(errors) == 1 and "frame 1" in errors[0]
    _, rows = read_rows(out)
    assert len(rows) == 4
    assert (tmp_path / "m.csv.errors.csv").exists()
