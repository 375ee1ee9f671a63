"""Hard majority voting over per-AU member classifiers."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import check_au
from .errors import EnsembleError, FormatError, ShapeError

# A scorer maps a frame collection to one real score per frame; score >= 0
# is a "present" vote.
Scorer = Callable[[object], np.ndarray]


@dataclass(frozen=True)
class Member:
    name: str
    family: str
    scorer: Scorer


@dataclass(frozen=True)
class EnsembleSpec:
    au: int
    members: tuple[Member, ...]

    def __post_init__(self):
        object.__setattr__(self, "au", check_au(self.au))
        object.__setattr__(self, "members", tuple(self.members))
        if len(self.members) < 2:
            raise EnsembleError("an ensemble needs at least two members")


@dataclass(frozen=True)
class VoteRecord:
    frame: int
    member_votes: tuple[int, ...]
    member_scores: tuple[float, ...]
    decision: int


def majority_vote(votes: Sequence[int], scores: Sequence[float]) -> int:
    """1 if present-votes outnumber absent-votes.

    A tie is settled by the sign of the mean member score, with a mean of
    exactly 0 counting as present.
    """
    if len(votes) == 0 or len(votes) != len(scores):
        raise ShapeError(f"need equal non-empty votes/scores, got {len(votes)} and {len(scores)}")
    present = sum(1 for v in votes if v)
    absent = len(votes) - present
    if present != absent:
        return int(present > absent)
    return int(float(np.mean(scores)) >= 0.0)


def vote_matrix(votes: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Column-wise :func:`majority_vote` for ``members x frames`` arrays."""
    votes = np.asarray(votes).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    if votes.shape != scores.shape or votes.ndim != 2 or votes.shape[0] == 0:
        raise ShapeError(f"votes {votes.shape} and scores {scores.shape} must be equal, non-empty 2-D")
    present = votes.sum(axis=0)
    absent = votes.shape[0] - present
    tie_break = scores.mean(axis=0) >= 0.0
    return np.where(present == absent, tie_break, present > absent).astype(np.int8)


def ensemble_predict(spec: EnsembleSpec, frames, frame_ids=None):
    """Score ``frames`` with every member and vote frame by frame.

    Returns ``(decisions, records)``. ``frame_ids`` labels the VoteRecords
    and defaults to ``0..n-1``.
    """
    scores = []
    for m in spec.members:
        try:
            s = np.asarray(m.scorer(frames), dtype=np.float64).reshape(-1)
        except Exception as exc:
            raise EnsembleError(f"member {m.name!r} ({m.family}) failed: {exc}") from exc
        if scores and len(s) != len(scores[0]):
            raise EnsembleError(f"member {m.name!r} scored {len(s)} frames, expected {len(scores[0])}")
        scores.append(s)
    scores = np.vstack(scores)
    votes = (scores >= 0.0).astype(np.int8)
    decisions = vote_matrix(votes, scores)
    if frame_ids is None:
        frame_ids = range(scores.shape[1])
    records = [
        VoteRecord(int(f), tuple(int(v) for v in votes[:, j]), tuple(float(x) for x in scores[:, j]), int(decisions[j]))
        for j, f in enumerate(frame_ids)
    ]
    return decisions, records


# ---------------------------------------------------------------------------
# config file: {"name": ..., "members": {"<au>": [{"model": path, "family": tag}, ...]}}


def read_ensemble_config(path) -> dict:
    """Parse an ensemble config into ``{"name", "members": {au: [(path, family), ...]}}``.

    Relative model paths are resolved against the config file's directory.
    """
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    try:
        members = {}
        for au, entries in data["members"].items():
            au = check_au(int(au))
            members[au] = [((path.parent / e["model"]).resolve() if not Path(e["model"]).is_absolute()
                            else Path(e["model"]), e["family"]) for e in entries]
            if len(members[au]) < 2:
                raise EnsembleError(f"AU{au}: an ensemble needs at least two members")
        return {"name": data["name"], "members": members}
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed ensemble config ({exc})") from None


def write_ensemble_config(path, name: str, members: dict) -> None:
    """``members`` maps AU to a list of ``(model_path, family)`` pairs."""
    path = Path(path)
    body = {
        "name": name,
        "members": {
            str(au): [{"model": str(p), "family": fam} for p, fam in entries]
            for au, entries in sorted(members.items())
        },
    }
    path.write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
