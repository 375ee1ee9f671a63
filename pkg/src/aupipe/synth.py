"""Seeded synthetic stand-in for DISFA-style data.

Each subject gets, per AU, alternating inactive/active runs with geometric
lengths. Features are unit Gaussian noise plus, for every active AU, a
shift of ``class_separation`` along that AU's (orthonormal, seeded)
direction. Landmarks are a canonical 68-point face with per-subject
scale/offset and per-frame jitter.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import (
    AU_IDS,
    MAX_INTENSITY,
    N_LANDMARKS,
    Dataset,
    default_split,
    write_features,
    write_labels,
    write_landmarks,
    write_split,
)
from .errors import DomainError


@dataclass(frozen=True)
class SyntheticSpec:
    n_subjects: int = 27
    frames_per_subject: int = 500
    feature_dim: int = 64
    class_separation: float = 4.0
    mean_active_run: float = 40.0
    mean_inactive_run: float = 80.0
    landmark_noise: float = 1.0
    seed: int = 0
    network: str = "synthetic"

    def __post_init__(self):
        if min(self.n_subjects, self.frames_per_subject, self.feature_dim) < 1:
            raise DomainError("sizes must be positive")
        if self.class_separation < 0:
            raise DomainError("class_separation must be non-negative")
        if self.mean_active_run < 1 or self.mean_inactive_run < 1:
            raise DomainError("mean run lengths must be at least 1")


def canonical_face(cx: float = 512.0, cy: float = 384.0) -> np.ndarray:
    """A frontal 68-point face in iBUG order, roughly 300 px wide."""
    pts = np.zeros((N_LANDMARKS, 2))
    k = np.arange(17)
    theta = np.pi - np.pi * k / 16
    pts[0:17, 0] = cx + 150 * np.cos(theta)
    pts[0:17, 1] = cy - 20 + 190 * np.sin(np.pi * k / 16)
    u = np.linspace(0, 1, 5)
    pts[17:22, 0] = cx - 120 + 90 * u
    pts[17:22, 1] = cy - 110 - 15 * np.sin(np.pi * u)
    pts[22:27, 0] = cx + 30 + 90 * u
    pts[22:27, 1] = cy - 110 - 15 * np.sin(np.pi * u)
    pts[27:31, 0] = cx
    pts[27:31, 1] = np.linspace(cy - 80, cy - 10, 4)
    pts[31:36, 0] = np.linspace(cx - 30, cx + 30, 5)
    pts[31:36, 1] = cy + 10 + 5 * np.sin(np.pi * u)
    a6 = np.pi - 2 * np.pi * np.arange(6) / 6
    for start, ex in ((36, cx - 65), (42, cx + 65)):
        pts[start:start + 6, 0] = ex + 25 * np.cos(a6)
        pts[start:start + 6, 1] = cy - 70 - 10 * np.sin(a6)
    a12 = np.pi - 2 * np.pi * np.arange(12) / 12
    pts[48:60, 0] = cx + 55 * np.cos(a12)
    pts[48:60, 1] = cy + 80 - 22 * np.sin(a12)
    a8 = np.pi - 2 * np.pi * np.arange(8) / 8
    pts[60:68, 0] = cx + 40 * np.cos(a8)
    pts[60:68, 1] = cy + 80 - 8 * np.sin(a8)
    return pts


def _runs(rng, n, mean_on, mean_off):
    out = np.zeros(n, dtype=bool)
    state = rng.random() < mean_on / (mean_on + mean_off)
    pos = 0
    while pos < n:
        length = int(rng.geometric(1.0 / (mean_on if state else mean_off)))
        out[pos:pos + length] = state
        pos += length
        state = not state
    return out


def au_directions(spec: SyntheticSpec) -> np.ndarray:
    """``12 x D`` unit vectors, orthonormal when ``D >= 12``."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    raw = rng.normal(size=(spec.feature_dim, len(AU_IDS)))
    if spec.feature_dim >= len(AU_IDS):
        q, _ = np.linalg.qr(raw)
        return q.T
    return (raw / np.linalg.norm(raw, axis=0)).T


def generate(spec: SyntheticSpec) -> Dataset:
    label_rng, feat_rng, lm_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence([spec.seed, 0]).spawn(3)
    )
    dirs = au_directions(spec)
    n, d = spec.frames_per_subject, spec.feature_dim
    template = canonical_face()
    subjects, frames, intens, feats, lms = [], [], [], [], []
    for s in range(spec.n_subjects):
        sid = f"S{s + 1:03d}"
        active = np.stack(
            [_runs(label_rng, n, spec.mean_active_run, spec.mean_inactive_run) for _ in AU_IDS], axis=1
        )
        strong = label_rng.integers(2, MAX_INTENSITY + 1, size=active.shape)
        weak = (label_rng.random(active.shape) < 0.2).astype(np.int64)
        intens.append(np.where(active, strong, weak))
        feats.append(feat_rng.normal(size=(n, d)) + spec.class_separation * (active @ dirs))
        scale = lm_rng.uniform(0.9, 1.1)
        shift = lm_rng.normal(0.0, 10.0, size=2)
        face = (template - template.mean(axis=0)) * scale + template.mean(axis=0) + shift
        lms.append(face + lm_rng.normal(0.0, spec.landmark_noise, size=(n, N_LANDMARKS, 2)))
        subjects += [sid] * n
        frames.append(np.arange(n))
    return Dataset(
        subjects,
        np.concatenate(frames),
        np.concatenate(intens),
        np.concatenate(feats),
        np.concatenate(lms),
        network=spec.network,
    )


def write_synthetic(spec: SyntheticSpec, out_dir) -> dict:
    """Generate and write features, labels, landmarks and a split file.

    Returns the written paths keyed by role. With fewer than three subjects
    no split is written and ``paths["splits"]`` is None.
    """
    out = Path(out_dir)
    feat_dir = out / "features" / spec.network
    feat_dir.mkdir(parents=True, exist_ok=True)
    ds = generate(spec)
    for sid in ds.subject_ids:
        rows = ds.subjects == sid
        write_features(feat_dir / f"{sid}.aufe", ds.features[rows])
    paths = {
        "features": feat_dir,
        "labels": out / "labels.csv",
        "landmarks": out / "landmarks.csv",
        "splits": out / "splits.json" if spec.n_subjects >= 3 else None,
    }
    write_labels(paths["labels"], ds.subjects, ds.frame_index, ds.intensities)
    write_landmarks(paths["landmarks"], ds.subjects, ds.frame_index, ds.landmarks)
    # a train/val/test split needs at least one subject per block
    if paths["splits"] is not None:
        write_split(paths["splits"], default_split(ds.subject_ids))
    return paths


def spec_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)
