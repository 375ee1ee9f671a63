"""Config-driven experiment runner: train, evaluate, ensemble, crop manifest.

Output layout under ``output_dir``::

    models/<classifier>/au<NN>.json|.lstm
    ensembles/<name>.json          resolved ensemble configs
    reports/<name>.json|.txt       evaluation reports
    reports/<ensemble>_audit.csv   per-frame votes
    regions/crop_manifest.csv
    train_log.json, provenance.json
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    AU_IDS,
    DEFAULT_THRESHOLD,
    Dataset,
    apply_standardizer,
    build_sequences,
    check_au,
    default_split,
    fit_standardizer,
    full_test_sequence,
    load_dataset,
    make_splits,
    read_split,
)
from .ensemble import EnsembleSpec, Member, ensemble_predict, read_ensemble_config, write_ensemble_config
from .errors import ConfigError, DomainError
from .evaluation import AuResult, EvaluationReport, comparison_table, macro_report
from .linear_models import SvmTrainConfig, au_seed, decision_value, fit_au, load_model, save_model
from .lstm import LstmConfig, load_lstm, predict_sequence, save_lstm
from .lstm import train as train_lstm
from .regions import emit_crop_manifest

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL, EXIT_FAILED = 0, 1, 2, 3
CLASSIFIER_KINDS = ("lda", "svm", "lstm")


@dataclass
class ClassifierSpec:
    name: str
    kind: str
    network: str
    params: dict = field(default_factory=dict)


@dataclass
class EnsembleConfig:
    name: str
    members: list[str]


@dataclass
class SequenceOptions:
    pad: int = 3
    inactive_min: int = 500
    inactive_max: int = 1000
    drop_longer: bool = True


@dataclass
class ExperimentConfig:
    features: dict[str, str]
    labels: str
    landmarks: str | None = None
    splits: str | None = None
    au_list: list[int] = field(default_factory=lambda: list(AU_IDS))
    classifiers: list[ClassifierSpec] = field(default_factory=list)
    ensembles: list[EnsembleConfig] = field(default_factory=list)
    threshold: int = DEFAULT_THRESHOLD
    seed: int = 0
    output_dir: str = "run"
    margin_fraction: float = 0.1
    sequences: SequenceOptions = field(default_factory=SequenceOptions)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        data = dict(data)
        try:
            data["classifiers"] = [ClassifierSpec(**c) for c in data.get("classifiers", [])]
            data["ensembles"] = [EnsembleConfig(**e) for e in data.get("ensembles", [])]
            data["sequences"] = SequenceOptions(**data.get("sequences", {}))
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if base_dir is not None:
            cfg._resolve(Path(base_dir))
        return cfg

    def _resolve(self, base: Path):
        def fix(p):
            return None if p is None else str(p if Path(p).is_absolute() else base / p)

        self.features = {k: fix(v) for k, v in self.features.items()}
        self.labels = fix(self.labels)
        self.landmarks = fix(self.landmarks)
        self.splits = fix(self.splits)
        self.output_dir = fix(self.output_dir)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def validate(self, *, need_features: bool = True) -> None:
        """Raise ConfigError listing every problem found."""
        problems = []
        if not self.labels or not Path(self.labels).is_file():
            problems.append(f"label file not found: {self.labels}")
        if need_features:
            for tag, path in self.features.items():
                if not Path(path).is_dir():
                    problems.append(f"feature directory for {tag!r} not found: {path}")
        if self.landmarks is not None and not Path(self.landmarks).is_file():
            problems.append(f"landmark file not found: {self.landmarks}")
        if self.splits is not None and not Path(self.splits).is_file():
            problems.append(f"split file not found: {self.splits}")
        for au in self.au_list:
            try:
                check_au(au)
            except DomainError as exc:
                problems.append(str(exc))
        names = [c.name for c in self.classifiers]
        if len(set(names)) != len(names):
            problems.append("classifier names must be unique")
        for c in self.classifiers:
            if c.kind not in CLASSIFIER_KINDS:
                problems.append(f"classifier {c.name!r}: unknown kind {c.kind!r}")
            if c.network not in self.features:
                problems.append(f"classifier {c.name!r}: no features for network {c.network!r}")
            try:
                _classifier_config(c, input_dim=1)
            except (TypeError, DomainError) as exc:
                problems.append(f"classifier {c.name!r}: bad params ({exc})")
        for e in self.ensembles:
            missing = [m for m in e.members if m not in names]
            if missing:
                problems.append(f"ensemble {e.name!r}: unknown members {missing}")
            if len(e.members) < 2:
                problems.append(f"ensemble {e.name!r}: needs at least two members")
        if not 0 <= self.threshold <= 5:
            problems.append("threshold must lie in [0, 5]")
        if problems:
            raise ConfigError("; ".join(problems))


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


def worker_count(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("AU_PIPELINE_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _classifier_config(spec: ClassifierSpec, input_dim: int):
    if spec.kind == "lstm":
        return LstmConfig(input_dim=input_dim, **spec.params)
    if spec.kind in ("lda", "svm"):
        return SvmTrainConfig(**spec.params)
    raise DomainError(f"unknown classifier kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class PreparedData:
    train: Dataset
    val: Dataset
    test: Dataset
    standardizer: object


def prepare(cfg: ExperimentConfig, network: str) -> PreparedData:
    """Load, split and standardize (train-fitted) one network's features."""
    ds = load_dataset(cfg.labels, cfg.features[network], network=network)
    spec = read_split(cfg.splits) if cfg.splits else default_split(ds.subject_ids)
    train, val, test = make_splits(ds, spec)
    std = fit_standardizer(train.features)
    return PreparedData(
        train.with_features(apply_standardizer(std, train.features)),
        val.with_features(apply_standardizer(std, val.features)),
        test,
        std,
    )


def _model_path(out: Path, clf: ClassifierSpec, au: int) -> Path:
    return out / "models" / clf.name / f"au{au:02d}.{'lstm' if clf.kind == 'lstm' else 'json'}"


# ---------------------------------------------------------------------------
# train


def _train_job(cfg, clf, au, data: PreparedData, out: Path):
    t0 = time.perf_counter()
    entry = {"classifier": clf.name, "kind": clf.kind, "au": au}
    try:
        if clf.kind == "lstm":
            lcfg = _classifier_config(clf, data.train.dim)
            lcfg = LstmConfig(**{**asdict(lcfg), "seed": au_seed(cfg.seed + lcfg.seed, au)})
            so = cfg.sequences
            batch = build_sequences(
                data.train, au, so.pad, so.inactive_min, so.inactive_max,
                keep_inactive=True, drop_longer=so.drop_longer, threshold=cfg.threshold,
            )
            if not batch.of_kind("active"):
                raise DomainError(f"no AU{au} activations in the training split")
            val = full_test_sequence(data.val, au, cfg.threshold) if len(data.val) else None
            model = train_lstm(batch.sequences, lcfg, validation=val)
            entry.update(epoch_kept=model.epoch, final_loss=model.loss_history[-1],
                         val_f1=max(model.val_history) if model.val_history else None)
        else:
            model = fit_au(clf.kind, data.train, au, _classifier_config(clf, 0), cfg.seed, cfg.threshold)
            if len(data.val):
                val_pred = decision_value(model, data.val.features) >= 0
                entry["val_f1"] = AuResult.from_predictions(val_pred, data.val.labels(au, cfg.threshold)).f1
        model.au = au
        model.standardizer = data.standardizer
        model.network = clf.network
        path = _model_path(out, clf, au)
        path.parent.mkdir(parents=True, exist_ok=True)
        (save_lstm if clf.kind == "lstm" else save_model)(model, path)
        entry.update(status="ok", model=str(path.relative_to(out)), convergence_flag=bool(model.converged))
    except (ValueError, ArithmeticError) as exc:
        log.warning("%s AU%d failed: %s", clf.name, au, exc)
        entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    entry["seconds"] = round(time.perf_counter() - t0, 3)
    return entry


def run_train(cfg: ExperimentConfig, workers: int | None = None) -> int:
    cfg.validate()
    out = Path(cfg.output_dir)
    aus = [check_au(a) for a in cfg.au_list]
    data = {net: prepare(cfg, net) for net in sorted({c.network for c in cfg.classifiers})}
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(clf, au) for clf in cfg.classifiers for au in aus]
    n_workers = worker_count(workers)
    run = lambda job: _train_job(cfg, job[0], job[1], data[job[0].network], out)  # noqa: E731
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            entries = list(pool.map(run, jobs))
    else:
        entries = [run(j) for j in jobs]
    _write_json(out / "train_log.json", {"config_sha256": cfg.digest(), "jobs": entries})
    _update_provenance(out, cfg, "train")
    failed = sum(e["status"] != "ok" for e in entries)
    if jobs and failed == len(jobs):
        return EXIT_FAILED
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _load_any(path: Path):
    return load_lstm(path) if path.suffix == ".lstm" else load_model(path)


def model_scorer(model, network: str, threshold: int = DEFAULT_THRESHOLD):
    """Frame scorer over ``{network: Dataset}`` maps of raw test frames."""

    def score(frames_by_net):
        frames = frames_by_net[network]
        x = frames.features
        if model.standardizer is not None:
            x = apply_standardizer(model.standardizer, x)
        if model.kind != "lstm":
            return decision_value(model, x)
        scores = []
        for seq in full_test_sequence(frames.with_features(x), model.au, threshold):
            scores.append(predict_sequence(model.params, seq.features)[1])
        return np.concatenate(scores)

    return score


def _check_grouped(ds: Dataset):
    # LSTM scores come back subject by subject; rows must already be in that order
    ids = ds.subject_ids
    expected = np.concatenate([np.flatnonzero(ds.subjects == s) for s in ids]) if ids else np.array([])
    if not np.array_equal(expected, np.arange(len(ds))):
        raise DomainError("test frames are not grouped by subject")


def run_eval(cfg: ExperimentConfig, ensemble_files=()) -> int:
    cfg.validate()
    out = Path(cfg.output_dir)
    aus = [check_au(a) for a in cfg.au_list]
    reports_dir = out / "reports"
    extra = [read_ensemble_config(p) for p in ensemble_files]
    # external ensemble files may reference models of any configured network
    networks = sorted(cfg.features) if extra else sorted({c.network for c in cfg.classifiers})
    test = {}
    for net in networks:
        ds = load_dataset(cfg.labels, cfg.features[net], network=net)
        spec = read_split(cfg.splits) if cfg.splits else default_split(ds.subject_ids)
        test[net] = make_splits(ds, spec)[2]
        _check_grouped(test[net])
    reports_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    total = 0
    reports = []

    for clf in cfg.classifiers:
        per_au = {}
        for au in aus:
            total += 1
            path = _model_path(out, clf, au)
            try:
                model = _load_any(path)
                _check_dims(model, test[clf.network], path)
                pred = model_scorer(model, clf.network, cfg.threshold)(test) >= 0
                per_au[au] = AuResult.from_predictions(pred, test[clf.network].labels(au, cfg.threshold))
            except ConfigError:
                raise
            except (OSError, ValueError) as exc:
                log.warning("evaluating %s AU%d failed: %s", clf.name, au, exc)
                failures += 1
        if per_au:
            rep = macro_report(per_au, clf.name)
            rep.write(reports_dir / clf.name)
            reports.append(rep)

    ensembles = []
    for e in cfg.ensembles:
        members = {}
        for au in aus:
            members[au] = [
                (_model_path(out, c, au).resolve(), c.kind)
                for name in e.members for c in cfg.classifiers if c.name == name
            ]
        cfg_path = out / "ensembles" / f"{e.name}.json"
        cfg_path.parent.mkdir(parents=True, exist_ok=True)
        write_ensemble_config(cfg_path, e.name, {au: [(Path(os.path.relpath(p, cfg_path.parent)), f)
                                                      for p, f in m] for au, m in members.items()})
        ensembles.append((e.name, members, e.members))
    for spec in extra:
        ensembles.append((spec["name"], spec["members"], None))

    for name, members, member_names in ensembles:
        per_au = {}
        audit_rows = []
        width = max(len(m) for m in members.values())
        for au in aus:
            total += 1
            if au not in members:
                failures += 1
                continue
            try:
                mlist = []
                for k, (path, family) in enumerate(members[au]):
                    model = _load_any(Path(path))
                    net = getattr(model, "network", None) or next(iter(test))
                    _check_dims(model, test[net], path)
                    label = member_names[k] if member_names else Path(path).parent.name or f"m{k}"
                    mlist.append((Member(label, family, model_scorer(model, net, cfg.threshold)), net))
                ref = test[mlist[0][1]]
                decisions, records = ensemble_predict(EnsembleSpec(au, [m for m, _ in mlist]), test, ref.frame_index)
                per_au[au] = AuResult.from_predictions(decisions, ref.labels(au, cfg.threshold))
                for subj, rec in zip(ref.subjects, records):
                    pad = width - len(rec.member_votes)
                    audit_rows.append([subj, rec.frame, au, rec.decision, *rec.member_votes, *[""] * pad,
                                       *map(repr, rec.member_scores), *[""] * pad])
            except ConfigError:
                raise
            except (OSError, ValueError, RuntimeError) as exc:
                log.warning("ensemble %s AU%d failed: %s", name, au, exc)
                failures += 1
        if per_au:
            rep = macro_report(per_au, name)
            rep.write(reports_dir / name)
            reports.append(rep)
            header = ["subject", "frame", "au", "decision"]
            labels = member_names or [f"m{k}" for k in range(width)]
            header += [f"vote_{m}" for m in labels] + [f"score_{m}" for m in labels]
            with open(reports_dir / f"{name}_audit.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(audit_rows)

    if reports:
        (reports_dir / "summary.txt").write_text(comparison_table(reports), encoding="utf-8")
    _update_provenance(out, cfg, "eval")
    if total and failures == total:
        return EXIT_FAILED
    return EXIT_PARTIAL if failures else EXIT_OK


def _check_dims(model, frames: Dataset, path):
    dim = model.config.input_dim if model.kind == "lstm" else len(model.weights)
    if frames.dim != dim:
        raise ConfigError(f"{path}: model expects {dim}-d features, test data has {frames.dim}")
    if model.standardizer is not None and model.standardizer.dim != dim:
        raise ConfigError(f"{path}: standardizer dimension {model.standardizer.dim} != model dimension {dim}")


# ---------------------------------------------------------------------------
# regions / report


def run_regions(cfg: ExperimentConfig, out_path=None) -> int:
    cfg.validate(need_features=False)
    if cfg.landmarks is None:
        raise ConfigError("regions needs a landmark file")
    ds = load_dataset(cfg.labels, landmarks_path=cfg.landmarks)
    out = Path(cfg.output_dir)
    target = Path(out_path) if out_path else out / "regions" / "crop_manifest.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    errors = emit_crop_manifest(ds, cfg.au_list, target, cfg.margin_fraction)
    for e in errors[:20]:
        log.warning("%s", e)
    if out_path is None:
        _update_provenance(out, cfg, "regions")
    if errors and len(errors) == len(ds):
        return EXIT_FAILED
    return EXIT_PARTIAL if errors else EXIT_OK


def load_reports(paths) -> list[EvaluationReport]:
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            base = p / "reports" if (p / "reports").is_dir() else p
            found += sorted(base.glob("*.json"))
        else:
            found.append(p)
    return [EvaluationReport.from_dict(json.loads(f.read_text(encoding="utf-8"))) for f in found]


# ---------------------------------------------------------------------------
# provenance


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _update_provenance(out: Path, cfg: ExperimentConfig, command: str) -> None:
    """Record config hash, seeds, versions and a checksum for every output file."""
    prov_path = out / "provenance.json"
    files = {
        str(p.relative_to(out)): _sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name not in ("provenance.json", "train_log.json")
    }
    _write_json(prov_path, {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "versions": {"aupipe": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "files": files,
    })
