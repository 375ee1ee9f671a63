"""Per-AU linear classifiers: shrinkage LDA and a hinge-loss linear SVM
trained by dual coordinate descent.

Both models score a frame as ``w @ x + b`` and call the AU present when the
score is >= 0.
"""
from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (
    DEFAULT_THRESHOLD,
    Dataset,
    StandardizationParams,
    balance_labels,
    check_au,
)
from .errors import DegenerateClassError, DomainError, FormatError, ShapeError

log = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SvmTrainConfig:
    cost: float = 1.0
    tolerance: float = 1e-6
    max_epochs: int = 1000
    ridge: float = 1e-6

    def __post_init__(self):
        for name in ("cost", "tolerance", "max_epochs", "ridge"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass
class LdaModel:
    weights: np.ndarray
    bias: float
    ridge: float = 1e-6
    au: int | None = None
    standardizer: StandardizationParams | None = None
    network: str | None = None

    kind = "lda"
    converged = True


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    cost: float
    config: SvmTrainConfig = field(default_factory=SvmTrainConfig)
    converged: bool = True
    epochs: int = 0
    dual: np.ndarray | None = field(default=None, repr=False)
    objective_history: list[float] = field(default_factory=list, repr=False)
    au: int | None = None
    standardizer: StandardizationParams | None = None
    network: str | None = None

    kind = "svm"


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(bool)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ShapeError(f"X {X.shape} and y {y.shape} do not line up")
    if not np.all(np.isfinite(X)):
        raise DomainError("training features contain non-finite values")
    if y.all() or not y.any():
        raise DegenerateClassError("training labels contain a single class")
    return X, y


def train_lda(X, y, ridge: float = 1e-6) -> LdaModel:
    """Two-class Fisher LDA with a shrunk pooled covariance.

    The shrinkage added to the diagonal is ``ridge * trace(S) / D`` so that
    it scales with the data; it falls back to ``ridge`` when S is zero.
    The threshold sits halfway between the projected class means.
    """
    if ridge < 0:
        raise DomainError("ridge must be non-negative")
    X, y = _check_xy(X, y)
    pos, neg = X[y], X[~y]
    mu_pos, mu_neg = pos.mean(axis=0), neg.mean(axis=0)
    cp, cn = pos - mu_pos, neg - mu_neg
    scatter = cp.T @ cp + cn.T @ cn
    cov = scatter / max(len(X) - 2, 1)
    d = X.shape[1]
    trace = np.trace(cov)
    shrink = ridge * trace / d if trace > 0 else ridge
    try:
        w = np.linalg.solve(cov + shrink * np.eye(d), mu_pos - mu_neg)
    except np.linalg.LinAlgError as exc:
        raise DegenerateClassError(f"pooled covariance is singular: {exc}") from None
    b = -float(w @ (mu_pos + mu_neg)) / 2.0
    return LdaModel(w, b, ridge)


def _dual_objective(w, alpha):
    return 0.5 * float(w @ w) - float(alpha.sum())


def train_svm(X, y, config: SvmTrainConfig | None = None) -> SvmModel:
    """L1-loss linear SVM by dual coordinate descent.

    The bias is learned as the weight of a constant unit feature, so the
    objective is ``0.5 * (|w|^2 + b^2) + C * sum(hinge)``. Coordinates are
    swept in ascending order. Training stops once every projected gradient
    is within ``config.tolerance`` of zero.
    """
    config = config or SvmTrainConfig()
    X, y = _check_xy(X, y)
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    ys = np.where(y, 1.0, -1.0)
    Z = Xa * ys[:, None]            # rows y_i * x_i
    qdiag = np.einsum("ij,ij->i", Z, Z)
    C = float(config.cost)
    alpha = np.zeros(n)
    w = np.zeros(d + 1)
    history = [_dual_objective(w, alpha)]
    converged = False
    epochs = 0
    rows = [Z[i] for i in range(n)]
    for epoch in range(config.max_epochs):
        if _max_violation(Z @ w - 1.0, alpha, C) <= config.tolerance:
            converged = True
            break
        for i in range(n):
            zi = rows[i]
            g = float(zi @ w) - 1.0
            a = alpha[i]
            if (a == 0.0 and g >= 0.0) or (a == C and g <= 0.0):
                continue
            new = min(max(a - g / qdiag[i], 0.0), C)
            if new != a:
                w += (new - a) * zi
                alpha[i] = new
        epochs = epoch + 1
        history.append(_dual_objective(w, alpha))
    else:
        converged = _max_violation(Z @ w - 1.0, alpha, C) <= config.tolerance
    if not converged:
        warnings.warn(
            f"SVM dual coordinate descent did not reach tolerance {config.tolerance} "
            f"in {config.max_epochs} epochs",
            ConvergenceWarning,
            stacklevel=2,
        )
    return SvmModel(
        weights=w[:d].copy(),
        bias=float(w[d]),
        cost=C,
        config=config,
        converged=converged,
        epochs=epochs,
        dual=alpha,
        objective_history=history,
    )


def _max_violation(grad, alpha, C):
    pg = np.where(alpha <= 0.0, np.minimum(grad, 0.0), np.where(alpha >= C, np.maximum(grad, 0.0), grad))
    return float(np.abs(pg).max())


def kkt_violation(model: SvmModel, X, y) -> float:
    """Largest projected-gradient magnitude of the dual at the model's solution."""
    X = np.asarray(X, dtype=np.float64)
    ys = np.where(np.asarray(y).astype(bool), 1.0, -1.0)
    grad = ys * (X @ model.weights + model.bias) - 1.0
    return _max_violation(grad, model.dual, model.cost)


def primal_objective(w, b, X, y, cost) -> float:
    """``0.5 * (|w|^2 + b^2) + C * sum(hinge)``, the problem train_svm solves."""
    ys = np.where(np.asarray(y).astype(bool), 1.0, -1.0)
    margins = ys * (np.asarray(X, dtype=float) @ w + b)
    return 0.5 * (float(w @ w) + b * b) + cost * float(np.maximum(0.0, 1.0 - margins).sum())


def decision_value(model, x):
    """``w @ x + b`` for a single vector or each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != len(model.weights):
        raise ShapeError(f"input dimension {x.shape[-1]} != model dimension {len(model.weights)}")
    return x @ model.weights + model.bias


def predict(model, x):
    return np.asarray(decision_value(model, x) >= 0.0)


# ---------------------------------------------------------------------------
# per-AU training


def au_seed(seed: int, au: int) -> int:
    """Independent, order-free seed for one AU's sampling."""
    return int(np.random.SeedSequence([int(seed), int(au)]).generate_state(1)[0])


def fit_au(kind: str, train: Dataset, au, config, seed: int = 0, threshold: int = DEFAULT_THRESHOLD):
    """Balance ``train`` for one AU (seeded) and fit an LDA or SVM model."""
    labels = train.labels(au, threshold)
    idx = balance_labels(labels, au_seed(seed, au))
    X, y = train.features[idx], labels[idx]
    if kind == "lda":
        model = train_lda(X, y, config.ridge)
    elif kind == "svm":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            model = train_svm(X, y, config)
    else:
        raise DomainError(f"unknown linear classifier kind {kind!r}")
    model.au = check_au(au)
    return model


def train_per_au(
    train: Dataset,
    au_list,
    kind: str,
    config: SvmTrainConfig | None = None,
    seed: int = 0,
    *,
    threshold: int = DEFAULT_THRESHOLD,
    standardizer: StandardizationParams | None = None,
    workers: int = 1,
):
    """Train one balanced binary model per AU.

    ``train`` must already be standardized. Returns ``(models, errors)``;
    an AU that fails is recorded in ``errors`` and does not stop the others.
    """
    config = config or SvmTrainConfig()
    aus = [check_au(a) for a in au_list]

    def job(au):
        try:
            model = fit_au(kind, train, au, config, seed, threshold)
        except (ValueError, ArithmeticError) as exc:
            log.warning("AU%d %s training failed: %s", au, kind, exc)
            return au, None, f"{type(exc).__name__}: {exc}"
        model.standardizer = standardizer
        return au, model, None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, aus))
    else:
        results = [job(au) for au in aus]
    models = {au: m for au, m, _ in results if m is not None}
    errors = {au: e for au, _, e in results if e is not None}
    return models, errors


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model) -> dict:
    if model.kind == "lda":
        config = {"ridge": model.ridge}
    else:
        config = asdict(model.config)
    out = {
        "kind": model.kind,
        "au": model.au,
        "dimension": int(len(model.weights)),
        "weights": [float(v) for v in model.weights],
        "bias": float(model.bias),
        "config": config,
        "convergence_flag": bool(model.converged),
    }
    if model.network is not None:
        out["network"] = model.network
    if model.standardizer is not None:
        out["standardizer"] = model.standardizer.to_dict()
    return out


def model_from_dict(data: dict):
    try:
        kind = data["kind"]
        weights = np.array(data["weights"], dtype=np.float64)
        if len(weights) != data["dimension"]:
            raise FormatError("weight count does not match dimension")
        std = data.get("standardizer")
        std = StandardizationParams.from_dict(std) if std else None
        au, net = data["au"], data.get("network")
        if kind == "lda":
            return LdaModel(weights, float(data["bias"]), data["config"]["ridge"], au, std, net)
        if kind == "svm":
            cfg = SvmTrainConfig(**data["config"])
            return SvmModel(
                weights, float(data["bias"]), cfg.cost, cfg,
                converged=bool(data["convergence_flag"]), au=au, standardizer=std, network=net,
            )
    except KeyError as exc:
        raise FormatError(f"model record lacks field {exc}") from None
    raise FormatError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
