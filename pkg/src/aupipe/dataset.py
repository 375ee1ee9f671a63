"""Frame-level data: file formats, label binarization, splits, balancing,
standardization and LSTM sequence construction.

A :class:`Dataset` is a column store over frames. Rows are grouped by subject
(in order of first appearance in the label file) and ascending frame index.
"""
from __future__ import annotations

import csv
import json
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence as Seq

import numpy as np

from .errors import (
    CannotBalanceError,
    DomainError,
    FormatError,
    InsufficientDataError,
    OrderingError,
    ShapeError,
    SplitError,
    TruncatedFileError,
    UnknownSubjectError,
)

AU_IDS = (1, 2, 4, 5, 6, 9, 12, 15, 17, 20, 25, 26)
N_LANDMARKS = 68
MAX_INTENSITY = 5
DEFAULT_THRESHOLD = 2

LABEL_HEADER = ["subject", "frame"] + [f"au{a}" for a in AU_IDS]
LANDMARK_HEADER = ["subject", "frame"] + [
    f"{axis}{i}" for i in range(N_LANDMARKS) for axis in ("x", "y")
]

FEATURE_MAGIC = b"AUFE"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIII")

# fc-layer widths per network family
FEATURE_DIMS = {
    "alexnet": 2048,
    "zfnet": 4096,
    "vgg": 4096,
    "googlenet": 1024,
    "resnet": 2048,
}


def check_au(au) -> int:
    """Return ``au`` as an int, raising DomainError if it is not a DISFA AU."""
    try:
        value = int(au)
    except (TypeError, ValueError):
        raise DomainError(f"not an action unit id: {au!r}") from None
    if value != au or value not in AU_IDS:
        raise DomainError(f"AU{au} is not one of {AU_IDS}")
    return value


def au_column(au) -> int:
    return AU_IDS.index(check_au(au))


def expected_feature_dim(network: str) -> int | None:
    """Feature width for a network tag such as ``"resnet-152"`` or ``"vgg_face"``.

    Returns None for tags outside the known families.
    """
    key = re.sub(r"[^a-z]", "", network.lower())
    for family, dim in FEATURE_DIMS.items():
        if key.startswith(family):
            return dim
    return None


# ---------------------------------------------------------------------------
# feature files


def write_features(path, matrix) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    n, d = matrix.shape
    payload = np.ascontiguousarray(matrix, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, n, d))
        fh.write(payload.tobytes(order="C"))


def load_features(path) -> np.ndarray:
    """Read an N x D float32 matrix from a binary feature file."""
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise FormatError(f"{path}: file shorter than the feature header")
    magic, version, n, d = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    expected = n * d * 4
    body = raw[_FEATURE_HEADER.size:]
    if len(body) < expected:
        raise TruncatedFileError(
            f"{path}: payload has {len(body)} bytes, header promises {expected}"
        )
    if len(body) > expected:
        raise FormatError(f"{path}: {len(body) - expected} trailing bytes")
    return np.frombuffer(body, dtype="<f4").reshape(n, d).astype(np.float32)


# ---------------------------------------------------------------------------
# label / landmark / split files


def write_labels(path, subjects, frames, intensities) -> None:
    intensities = np.asarray(intensities, dtype=int)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABEL_HEADER)
        for s, f, row in zip(subjects, frames, intensities):
            writer.writerow([s, int(f), *(int(v) for v in row)])


def read_labels(path):
    """Return ``(subjects, frames, intensities)`` parsed from a label CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LABEL_HEADER:
            raise FormatError(f"{path}: unexpected label header {header}")
        subjects, frames, rows = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(LABEL_HEADER):
                raise FormatError(f"{path}:{lineno}: expected {len(LABEL_HEADER)} fields")
            subjects.append(rec[0])
            frames.append(int(rec[1]))
            rows.append([int(v) for v in rec[2:]])
    intensities = np.array(rows, dtype=np.int64).reshape(-1, len(AU_IDS))
    return subjects, np.array(frames, dtype=np.int64), intensities


def write_landmarks(path, subjects, frames, landmarks) -> None:
    landmarks = np.asarray(landmarks, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LANDMARK_HEADER)
        for s, f, pts in zip(subjects, frames, landmarks):
            writer.writerow([s, int(f), *(repr(float(v)) for v in pts.reshape(-1))])


def read_landmarks(path) -> dict[tuple[str, int], np.ndarray]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LANDMARK_HEADER:
            raise FormatError(f"{path}: unexpected landmark header")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(LANDMARK_HEADER):
                raise FormatError(f"{path}:{lineno}: expected {len(LANDMARK_HEADER)} fields")
            pts = np.array([float(v) for v in rec[2:]]).reshape(N_LANDMARKS, 2)
            out[(rec[0], int(rec[1]))] = pts
    return out


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, tuple(str(s) for s in getattr(self, name)))
        sets = [set(self.train), set(self.val), set(self.test)]
        if sum(map(len, sets)) != len(sets[0] | sets[1] | sets[2]):
            raise SplitError("train/val/test subject sets overlap")
        if any(len(s) != len(lst) for s, lst in zip(sets, (self.train, self.val, self.test))):
            raise SplitError("duplicate subject within a split")

    def to_dict(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


def read_split(path) -> SplitSpec:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        return SplitSpec(data["train"], data["val"], data["test"])
    except KeyError as exc:
        raise FormatError(f"{path}: missing split key {exc}") from None


def write_split(path, spec: SplitSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")


def default_split(subjects: Seq[str], counts=(12, 6, 9)) -> SplitSpec:
    """Consecutive train/val/test blocks of an ordered subject list.

    With 27 subjects the blocks are exactly ``counts``; other totals are
    split in the same proportions, keeping every block non-empty.
    """
    subjects = list(subjects)
    n = len(subjects)
    total = sum(counts)
    if n == total:
        n_train, n_val = counts[0], counts[1]
    else:
        if n < 3:
            raise SplitError(f"need at least 3 subjects to split, got {n}")
        n_train = max(1, round(n * counts[0] / total))
        n_val = max(1, round(n * counts[1] / total))
        while n_train + n_val > n - 1:
            if n_train >= n_val and n_train > 1:
                n_train -= 1
            else:
                n_val -= 1
    return SplitSpec(
        subjects[:n_train], subjects[n_train:n_train + n_val], subjects[n_train + n_val:]
    )


# ---------------------------------------------------------------------------
# in-memory dataset


@dataclass(frozen=True)
class FrameRecord:
    subject: str
    frame_index: int
    features: np.ndarray
    intensities: Mapping[int, int]
    landmarks: np.ndarray | None = None

    def __post_init__(self):
        if set(self.intensities) != set(AU_IDS):
            raise DomainError("intensities must cover all 12 AUs")
        for au, v in self.intensities.items():
            if not 0 <= v <= MAX_INTENSITY:
                raise DomainError(f"AU{au} intensity {v} outside [0, {MAX_INTENSITY}]")
        if self.landmarks is not None and np.shape(self.landmarks) != (N_LANDMARKS, 2):
            raise ShapeError(f"expected {N_LANDMARKS} landmarks, got shape {np.shape(self.landmarks)}")


@dataclass
class Dataset:
    subjects: np.ndarray
    frame_index: np.ndarray
    intensities: np.ndarray
    features: np.ndarray | None = None
    landmarks: np.ndarray | None = None
    network: str | None = field(default=None, compare=False)

    def __post_init__(self):
        self.subjects = np.asarray(self.subjects, dtype=str)
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)
        self.intensities = np.asarray(self.intensities, dtype=np.int64).reshape(-1, len(AU_IDS))
        n = len(self.subjects)
        if self.frame_index.shape != (n,) or self.intensities.shape[0] != n:
            raise ShapeError("subjects, frame_index and intensities must have equal length")
        if n and (self.intensities.min() < 0 or self.intensities.max() > MAX_INTENSITY):
            raise DomainError(f"intensities must lie in [0, {MAX_INTENSITY}]")
        if self.features is not None:
            self.features = np.asarray(self.features)
            if self.features.ndim != 2 or self.features.shape[0] != n:
                raise ShapeError(f"features shape {self.features.shape} does not match {n} frames")
        if self.landmarks is not None:
            self.landmarks = np.asarray(self.landmarks, dtype=float)
            if self.landmarks.shape != (n, N_LANDMARKS, 2):
                raise ShapeError(f"landmarks shape {self.landmarks.shape} != ({n}, {N_LANDMARKS}, 2)")

    def __len__(self):
        return len(self.subjects)

    @property
    def dim(self) -> int:
        if self.features is None:
            raise ShapeError("dataset carries no features")
        return self.features.shape[1]

    @property
    def subject_ids(self) -> list[str]:
        _, first = np.unique(self.subjects, return_index=True)
        return [str(self.subjects[i]) for i in sorted(first)]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            subjects=self.subjects[idx],
            frame_index=self.frame_index[idx],
            intensities=self.intensities[idx],
            features=None if self.features is None else self.features[idx],
            landmarks=None if self.landmarks is None else self.landmarks[idx],
        )

    def for_subjects(self, subjects: Iterable[str]) -> "Dataset":
        wanted = np.isin(self.subjects, list(subjects))
        return self.take(np.flatnonzero(wanted))

    def with_features(self, features) -> "Dataset":
        return replace(self, features=features)

    def labels(self, au, threshold: int = DEFAULT_THRESHOLD) -> np.ndarray:
        return binarize_intensity(self.intensities[:, au_column(au)], threshold).astype(np.int8)

    def records(self) -> Iterator[FrameRecord]:
        for i in range(len(self)):
            yield FrameRecord(
                subject=str(self.subjects[i]),
                frame_index=int(self.frame_index[i]),
                features=None if self.features is None else self.features[i],
                intensities=dict(zip(AU_IDS, map(int, self.intensities[i]))),
                landmarks=None if self.landmarks is None else self.landmarks[i],
            )

    @classmethod
    def from_records(cls, records: Iterable[FrameRecord]) -> "Dataset":
        records = list(records)
        feats = [r.features for r in records]
        has_feats = records and all(f is not None for f in feats)
        if has_feats and len({np.shape(f) for f in feats}) > 1:
            raise ShapeError("feature dimension differs between frames")
        lms = [r.landmarks for r in records]
        has_lms = any(lm is not None for lm in lms)
        return cls(
            subjects=[r.subject for r in records],
            frame_index=[r.frame_index for r in records],
            intensities=[[r.intensities[a] for a in AU_IDS] for r in records],
            features=np.array(feats, dtype=float) if has_feats else None,
            landmarks=(
                np.array([lm if lm is not None else np.full((N_LANDMARKS, 2), np.nan) for lm in lms])
                if has_lms else None
            ),
        )


def load_dataset(labels_path, features=None, landmarks_path=None, network: str | None = None) -> Dataset:
    """Assemble a :class:`Dataset` from label, feature and landmark files.

    ``features`` is either a directory holding ``<subject>.aufe`` files or a
    mapping from subject id to file path. Feature row ``k`` belongs to frame
    ``k`` of that subject. Frames without a landmark row get NaN landmarks.
    """
    subjects, frames, intensities = read_labels(labels_path)
    order_of = {}
    for s in subjects:
        order_of.setdefault(s, len(order_of))
    perm = np.lexsort((frames, np.array([order_of[s] for s in subjects], dtype=np.int64)))
    subjects = np.asarray(subjects, dtype=str)[perm]
    frames = frames[perm]
    intensities = intensities[perm]

    feat_matrix = None
    if features is not None:
        if isinstance(features, Mapping):
            paths = {str(k): Path(v) for k, v in features.items()}
        else:
            paths = {s: Path(features) / f"{s}.aufe" for s in order_of}
        want = expected_feature_dim(network) if network else None
        blocks = []
        for s in order_of:
            if s not in paths:
                raise FormatError(f"no feature file for subject {s}")
            mat = load_features(paths[s])
            if want is not None and mat.shape[1] != want:
                raise FormatError(f"{paths[s]}: {network} features should have {want} dims, got {mat.shape[1]}")
            sub_frames = frames[subjects == s]
            if sub_frames.max() >= mat.shape[0]:
                raise ShapeError(f"{paths[s]}: {mat.shape[0]} rows but label frame {sub_frames.max()}")
            blocks.append(mat[sub_frames])
        dims = {b.shape[1] for b in blocks}
        if len(dims) > 1:
            raise ShapeError(f"feature dimension differs across subjects: {sorted(dims)}")
        feat_matrix = np.concatenate(blocks).astype(np.float64)

    lm_array = None
    if landmarks_path is not None:
        table = read_landmarks(landmarks_path)
        lm_array = np.full((len(subjects), N_LANDMARKS, 2), np.nan)
        for i, (s, f) in enumerate(zip(subjects, frames)):
            pts = table.get((str(s), int(f)))
            if pts is not None:
                lm_array[i] = pts

    return Dataset(subjects, frames, intensities, feat_matrix, lm_array, network=network)


# ---------------------------------------------------------------------------
# labels, splits, balancing


def binarize_intensity(intensity, threshold: int = DEFAULT_THRESHOLD):
    """AU occurrence from intensity: present iff ``intensity >= threshold``.

    Works on scalars (returns bool) and arrays (returns a bool array).
    """
    arr = np.asarray(intensity)
    if arr.size and (arr.min() < 0 or arr.max() > MAX_INTENSITY):
        raise DomainError(f"intensity outside [0, {MAX_INTENSITY}]: {intensity!r}")
    out = arr >= threshold
    return bool(out) if out.ndim == 0 else out


def count_activations(dataset: Dataset, au, threshold: int = DEFAULT_THRESHOLD) -> int:
    col = au_column(au)
    if len(dataset) == 0:
        return 0
    return int(np.count_nonzero(binarize_intensity(dataset.intensities[:, col], threshold)))


def make_splits(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    loaded = set(dataset.subject_ids)
    named = set(spec.train) | set(spec.val) | set(spec.test)
    unknown = sorted(named - loaded)
    if unknown:
        raise UnknownSubjectError(f"split names subjects absent from the data: {unknown}")
    uncovered = sorted(loaded - named)
    if uncovered:
        raise SplitError(f"subjects not assigned to any split: {uncovered}")
    return (
        dataset.for_subjects(spec.train),
        dataset.for_subjects(spec.val),
        dataset.for_subjects(spec.test),
    )


def balance_labels(labels, seed) -> np.ndarray:
    """Indices of all positives plus an equally sized random set of negatives.

    Negatives are the first ``n_pos`` entries of a seeded permutation of the
    negative indices. If there are fewer negatives than positives, all of
    them are kept. Returned indices are sorted.
    """
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0:
        raise CannotBalanceError("no positive examples to balance against")
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(neg)[: len(pos)]
    return np.sort(np.concatenate([pos, chosen]))


def balance(frames: Dataset, au, seed, threshold: int = DEFAULT_THRESHOLD) -> np.ndarray:
    return balance_labels(frames.labels(au, threshold), seed)


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class StandardizationParams:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.shape(self.mean) != np.shape(self.std) or np.ndim(self.mean) != 1:
            raise ShapeError("mean and std must be 1-D vectors of equal length")
        if np.any(np.asarray(self.std) <= 0):
            raise DomainError("standard deviations must be positive")

    @property
    def dim(self) -> int:
        return len(self.mean)

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["mean"], dtype=float), np.array(data["std"], dtype=float))


def fit_standardizer(train_features) -> StandardizationParams:
    """Per-column mean and population std; constant columns get std 1."""
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError("need at least 2 training rows to standardize")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    # tiny residual spread on constant columns comes from rounding in the mean
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    std[flat] = 1.0
    return StandardizationParams(mean, std)


def apply_standardizer(params: StandardizationParams, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != params.dim:
        raise ShapeError(f"feature dimension {x.shape[-1]} != standardizer dimension {params.dim}")
    return (x - params.mean) / params.std


# ---------------------------------------------------------------------------
# LSTM sequences


@dataclass(frozen=True)
class Sequence:
    subject: str
    start_frame: int
    features: np.ndarray
    labels: np.ndarray
    kind: str = "active"

    def __len__(self):
        return len(self.labels)

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.labels) - 1

    @property
    def frames(self) -> list[tuple[np.ndarray, int]]:
        return list(zip(self.features, (int(v) for v in self.labels)))


@dataclass
class SequenceBatch:
    au: int
    sequences: list[Sequence]

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def of_kind(self, kind: str) -> list[Sequence]:
        return [s for s in self.sequences if s.kind == kind]


def activation_intervals(labels, pad: int = 3) -> list[tuple[int, int]]:
    """Inclusive ``(start, end)`` positions of padded, merged positive runs.

    Runs whose padded extents overlap or touch are merged; padding is clamped
    to ``[0, len(labels) - 1]``.
    """
    labels = np.asarray(labels).astype(bool)
    n = len(labels)
    if n == 0:
        return []
    edges = np.diff(np.concatenate([[0], labels.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    merged: list[list[int]] = []
    for s, e in zip(starts, ends):
        lo, hi = max(0, int(s) - pad), min(n - 1, int(e) + pad)
        if merged and lo <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def _subject_blocks(frames: Dataset):
    for subject in frames.subject_ids:
        idx = np.flatnonzero(frames.subjects == subject)
        fi = frames.frame_index[idx]
        if len(fi) > 1 and np.any(np.diff(fi) != 1):
            raise OrderingError(f"frames of subject {subject} are not contiguous and ascending")
        yield subject, idx


def build_sequences(
    frames: Dataset,
    au,
    pad: int = 3,
    inactive_min: int = 500,
    inactive_max: int = 1000,
    *,
    keep_inactive: bool = False,
    drop_longer: bool = True,
    threshold: int = DEFAULT_THRESHOLD,
) -> SequenceBatch:
    """Cut each subject's video into training sequences around AU activations.

    Every maximal positive run, widened by ``pad`` frames each side, becomes an
    ``"active"`` sequence (overlapping or touching runs are merged). With
    ``keep_inactive`` the gaps between them are returned as ``"inactive"``
    sequences, except gaps of length in ``[inactive_min, inactive_max]``, and
    longer gaps too when ``drop_longer`` is set.
    """
    au = check_au(au)
    if frames.features is None:
        raise ShapeError("sequence construction needs features")
    labels_all = frames.labels(au, threshold)
    out = []
    for subject, idx in _subject_blocks(frames):
        labels = labels_all[idx]
        feats = frames.features[idx]
        first = int(frames.frame_index[idx[0]])
        pieces = [(lo, hi, "active") for lo, hi in activation_intervals(labels, pad)]
        if keep_inactive:
            cursor = 0
            gaps = []
            for lo, hi, _ in pieces:
                if lo > cursor:
                    gaps.append((cursor, lo - 1))
                cursor = hi + 1
            if cursor < len(labels):
                gaps.append((cursor, len(labels) - 1))
            for lo, hi in gaps:
                length = hi - lo + 1
                too_long = length >= inactive_min and (length <= inactive_max or drop_longer)
                if not too_long:
                    pieces.append((lo, hi, "inactive"))
            pieces.sort()
        for lo, hi, kind in pieces:
            out.append(Sequence(subject, first + lo, feats[lo:hi + 1], labels[lo:hi + 1], kind))
    return SequenceBatch(au, out)


def full_test_sequence(frames: Dataset, au, threshold: int = DEFAULT_THRESHOLD) -> SequenceBatch:
    """One unfiltered sequence per subject spanning all of its frames."""
    au = check_au(au)
    if frames.features is None:
        raise ShapeError("sequence construction needs features")
    labels_all = frames.labels(au, threshold)
    out = [
        Sequence(subject, int(frames.frame_index[idx[0]]), frames.features[idx], labels_all[idx], "full")
        for subject, idx in _subject_blocks(frames)
    ]
    return SequenceBatch(au, out)
