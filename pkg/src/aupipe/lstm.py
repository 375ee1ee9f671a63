"""Single-layer LSTM with a per-frame two-way softmax output, trained by
backpropagation through time with SGD + momentum and Gaussian weight noise.

Everything runs in float64. Gate order is input, forget, cell, output
throughout (array axis 0 of ``wx``, ``wh`` and ``b``). Output column 0 is
"absent", column 1 is "present".
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import StandardizationParams
from .errors import DomainError, FormatError, ShapeError, TrainingDivergedError

log = logging.getLogger(__name__)

GATES = ("input", "forget", "cell", "output")
LOSS_FLOOR = 1e-12


@dataclass(frozen=True)
class LstmConfig:
    input_dim: int
    hidden_units: int = 200
    learning_rate: float = 1e-4
    momentum: float = 0.9
    weight_noise_std: float = 0.1
    epochs: int = 50
    seed: int = 0
    noise_on_biases: bool = True
    clip_norm: float | None = None
    forget_bias: float = 1.0

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_units < 1 or self.epochs < 1:
            raise DomainError("input_dim, hidden_units and epochs must be positive")
        if self.learning_rate < 0:
            raise DomainError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise DomainError("momentum must lie in [0, 1)")
        if self.weight_noise_std < 0:
            raise DomainError("weight_noise_std must be non-negative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise DomainError("clip_norm must be positive when set")


@dataclass
class LstmParams:
    wx: np.ndarray   # (4, H, D)
    wh: np.ndarray   # (4, H, H)
    b: np.ndarray    # (4, H)
    wy: np.ndarray   # (2, H)
    by: np.ndarray   # (2,)

    FIELDS = ("wx", "wh", "b", "wy", "by")
    BIASES = ("b", "by")

    @property
    def hidden(self) -> int:
        return self.wh.shape[1]

    @property
    def input_dim(self) -> int:
        return self.wx.shape[2]

    def arrays(self):
        return [getattr(self, f) for f in self.FIELDS]

    def map(self, fn, *others) -> "LstmParams":
        return LstmParams(*(fn(a, *(getattr(o, f) for o in others)) for f, a in zip(self.FIELDS, self.arrays())))

    def copy(self) -> "LstmParams":
        return self.map(np.copy)

    @classmethod
    def zeros(cls, input_dim: int, hidden: int) -> "LstmParams":
        return cls(
            np.zeros((4, hidden, input_dim)),
            np.zeros((4, hidden, hidden)),
            np.zeros((4, hidden)),
            np.zeros((2, hidden)),
            np.zeros(2),
        )

    def to_vector(self) -> np.ndarray:
        """Flatten in file order: per gate (wx, wh, b), then wy, by."""
        parts = []
        for g in range(4):
            parts += [self.wx[g].ravel(), self.wh[g].ravel(), self.b[g]]
        parts += [self.wy.ravel(), self.by]
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, vec, input_dim: int, hidden: int) -> "LstmParams":
        p = cls.zeros(input_dim, hidden)
        expected = 4 * (hidden * input_dim + hidden * hidden + hidden) + 2 * hidden + 2
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (expected,):
            raise ShapeError(f"parameter vector has {vec.size} entries, expected {expected}")
        pos = 0

        def take(shape):
            nonlocal pos
            size = int(np.prod(shape))
            out = vec[pos:pos + size].reshape(shape)
            pos += size
            return out

        for g in range(4):
            p.wx[g] = take((hidden, input_dim))
            p.wh[g] = take((hidden, hidden))
            p.b[g] = take((hidden,))
        p.wy[:] = take((2, hidden))
        p.by[:] = take((2,))
        return p


def init_params(config: LstmConfig, rng: np.random.Generator) -> LstmParams:
    h, d = config.hidden_units, config.input_dim
    bound = 1.0 / np.sqrt(h)
    p = LstmParams(
        rng.uniform(-bound, bound, (4, h, d)),
        rng.uniform(-bound, bound, (4, h, h)),
        rng.uniform(-bound, bound, (4, h)),
        rng.uniform(-bound, bound, (2, h)),
        rng.uniform(-bound, bound, 2),
    )
    p.b[1] = config.forget_bias
    return p


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class ForwardCache:
    x: np.ndarray        # (T, D)
    gates: np.ndarray    # (T, 4, H) post-activation
    h: np.ndarray        # (T+1, H), row 0 is the initial state
    c: np.ndarray        # (T+1, H)
    tanh_c: np.ndarray   # (T, H)
    probs: np.ndarray    # (T, 2)
    params: LstmParams

    @property
    def final_state(self):
        return self.h[-1].copy(), self.c[-1].copy()


def forward(params: LstmParams, sequence, state=None):
    """Run the network over a ``T x D`` sequence.

    Returns ``(probs, cache)`` where ``probs`` is ``T x 2``. ``state`` is an
    optional ``(h0, c0)`` pair; zeros otherwise.
    """
    x = np.asarray(sequence, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"sequence shape {x.shape} does not match input_dim {params.input_dim}")
    t_len, hid = x.shape[0], params.hidden
    if t_len < 1:
        raise ShapeError("empty sequence")
    pre_x = (x @ params.wx.reshape(4 * hid, -1).T).reshape(t_len, 4, hid) + params.b
    wh = params.wh.reshape(4 * hid, hid)
    gates = np.empty((t_len, 4, hid))
    h = np.zeros((t_len + 1, hid))
    c = np.zeros((t_len + 1, hid))
    if state is not None:
        h[0], c[0] = state
    tanh_c = np.empty((t_len, hid))
    for t in range(t_len):
        a = pre_x[t] + (wh @ h[t]).reshape(4, hid)
        gt = gates[t]
        gt[0] = _sigmoid(a[0])
        gt[1] = _sigmoid(a[1])
        gt[2] = np.tanh(a[2])
        gt[3] = _sigmoid(a[3])
        c[t + 1] = gt[1] * c[t] + gt[0] * gt[2]
        tanh_c[t] = np.tanh(c[t + 1])
        h[t + 1] = gt[3] * tanh_c[t]
    logits = h[1:] @ params.wy.T + params.by
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite LSTM activations")
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs, ForwardCache(x, gates, h, c, tanh_c, probs, params)


def loss(scores, labels) -> float:
    """Mean cross-entropy of per-frame class scores against binary labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.ndim != 2 or scores.shape != (len(labels), 2):
        raise ShapeError(f"scores {scores.shape} do not match {len(labels)} labels")
    p_true = scores[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(p_true, LOSS_FLOOR)).mean())


def backward(cache: ForwardCache, labels) -> LstmParams:
    """Exact BPTT gradient of the mean cross-entropy for one forward pass."""
    labels = np.asarray(labels).astype(np.int64)
    t_len = cache.x.shape[0]
    if labels.shape != (t_len,):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for a length-{t_len} cache")
    p = cache.params
    hid = p.hidden
    dlogits = cache.probs.copy()
    dlogits[np.arange(t_len), labels] -= 1.0
    dlogits /= t_len
    hs = cache.h[1:]
    grad = LstmParams.zeros(p.input_dim, hid)
    grad.wy[:] = dlogits.T @ hs
    grad.by[:] = dlogits.sum(axis=0)
    dh_out = dlogits @ p.wy
    wh_t = p.wh.reshape(4 * hid, hid).T
    da = np.empty((t_len, 4, hid))
    dh_next = np.zeros(hid)
    dc_next = np.zeros(hid)
    for t in range(t_len - 1, -1, -1):
        i, f, g, o = cache.gates[t]
        tc = cache.tanh_c[t]
        dh = dh_out[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dat = da[t]
        dat[0] = dc * g * i * (1.0 - i)
        dat[1] = dc * cache.c[t] * f * (1.0 - f)
        dat[2] = dc * i * (1.0 - g * g)
        dat[3] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = wh_t @ dat.reshape(-1)
    da2 = da.reshape(t_len, 4 * hid)
    grad.wx[:] = (da2.T @ cache.x).reshape(4, hid, -1)
    grad.wh[:] = (da2.T @ cache.h[:-1]).reshape(4, hid, hid)
    grad.b[:] = da.sum(axis=0)
    return grad


def predict_sequence(params: LstmParams, sequence, state=None):
    """Per-frame ``(predictions, scores, final_state)``.

    ``scores`` is ``p(present) - 0.5``; a frame is present when the score is
    >= 0, so exact ties go to present.
    """
    probs, cache = forward(params, sequence, state)
    scores = probs[:, 1] - 0.5
    return scores >= 0.0, scores, cache.final_state


# ---------------------------------------------------------------------------
# training


@dataclass
class LstmModel:
    params: LstmParams
    config: LstmConfig
    epoch: int = 0
    loss_history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)
    au: int | None = None
    standardizer: StandardizationParams | None = None
    network: str | None = None

    kind = "lstm"
    converged = True


def _grad_norm(grad: LstmParams) -> float:
    return float(np.sqrt(sum(float((a * a).sum()) for a in grad.arrays())))


def train(sequences, config: LstmConfig, validation=None, init: LstmParams | None = None) -> LstmModel:
    """Fit an LSTM on a list of sequences, one sequence per batch.

    ``sequences`` holds objects with ``features`` (T x D) and ``labels``
    (T,) attributes, e.g. the entries of a SequenceBatch. Each batch draws
    fresh weight noise, takes the gradient at the noisy weights and applies
    a momentum step to the clean weights. With ``validation`` sequences the
    epoch with the best validation F1 is kept.
    """
    seqs = list(sequences)
    if not seqs:
        raise ShapeError("no training sequences")
    for s in seqs:
        if np.shape(s.features)[-1] != config.input_dim:
            raise ShapeError(f"sequence dimension {np.shape(s.features)[-1]} != input_dim {config.input_dim}")
    init_seq, train_seq = np.random.SeedSequence(config.seed).spawn(2)
    params = init.copy() if init is not None else init_params(config, np.random.default_rng(init_seq))
    rng = np.random.default_rng(train_seq)
    velocity = params.map(np.zeros_like)
    noisy_fields = [f for f in LstmParams.FIELDS if config.noise_on_biases or f not in LstmParams.BIASES]
    history: list[float] = []
    val_history: list[float] = []
    best = (-np.inf, params.copy(), 0)
    lr, mom, std = config.learning_rate, config.momentum, config.weight_noise_std

    for epoch in range(config.epochs):
        order = rng.permutation(len(seqs))
        batch_losses = []
        for step, k in enumerate(order):
            seq = seqs[k]
            noisy = params
            if std > 0:
                noisy = params.copy()
                for name in noisy_fields:
                    arr = getattr(noisy, name)
                    arr += rng.normal(0.0, std, arr.shape)
            probs, cache = forward(noisy, seq.features)
            value = loss(probs, seq.labels)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss {value} at epoch {epoch}, batch {step}")
            grad = backward(cache, seq.labels)
            if config.clip_norm is not None:
                norm = _grad_norm(grad)
                if norm > config.clip_norm:
                    grad = grad.map(lambda a: a * (config.clip_norm / norm))
            for v, g, p in zip(velocity.arrays(), grad.arrays(), params.arrays()):
                v *= mom
                v -= lr * g
                p += v
            batch_losses.append(value)
        history.append(float(np.mean(batch_losses)))
        log.debug("epoch %d loss %.6f", epoch + 1, history[-1])
        if validation is not None:
            score = sequence_f1(params, validation)
            val_history.append(score)
            if score > best[0]:
                best = (score, params.copy(), epoch + 1)

    if validation is not None:
        params, epoch_kept = best[1], best[2]
    else:
        epoch_kept = config.epochs
    return LstmModel(params, config, epoch_kept, history, val_history)


def sequence_f1(params: LstmParams, sequences) -> float:
    tp = fp = fn = 0
    for s in sequences:
        pred, _, _ = predict_sequence(params, s.features)
        lab = np.asarray(s.labels).astype(bool)
        tp += int(np.sum(pred & lab))
        fp += int(np.sum(pred & ~lab))
        fn += int(np.sum(~pred & lab))
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


# ---------------------------------------------------------------------------
# serialization: magic, u32 version, u32 header length, JSON header,
# then little-endian float64 parameters in LstmParams.to_vector order

LSTM_MAGIC = b"AULM"
LSTM_VERSION = 1
_PREFIX = struct.Struct("<4sII")


def save_lstm(model: LstmModel, path) -> None:
    header = {
        "kind": "lstm",
        "au": model.au,
        "config": asdict(model.config),
        "epoch": model.epoch,
        "loss_history": [float(v) for v in model.loss_history],
        "val_history": [float(v) for v in model.val_history],
        "network": model.network,
        "gate_order": list(GATES),
        "layout": "per gate: wx (HxD row-major), wh (HxH row-major), b (H); then wy (2xH row-major), by (2)",
    }
    if model.standardizer is not None:
        header["standardizer"] = model.standardizer.to_dict()
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(LSTM_MAGIC, LSTM_VERSION, len(blob)))
        fh.write(blob)
        fh.write(model.params.to_vector().astype("<f8").tobytes())


def load_lstm(path) -> LstmModel:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: too short for an LSTM model file")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != LSTM_MAGIC or version != LSTM_VERSION:
        raise FormatError(f"{path}: not an LSTM model file (magic {magic!r}, version {version})")
    header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    body = raw[_PREFIX.size + hlen:]
    if len(body) % 8:
        raise FormatError(f"{path}: parameter block is not a whole number of float64 values")
    config = LstmConfig(**header["config"])
    vec = np.frombuffer(body, dtype="<f8").astype(np.float64)
    params = LstmParams.from_vector(vec, config.input_dim, config.hidden_units)
    std = header.get("standardizer")
    return LstmModel(
        params,
        config,
        header["epoch"],
        header["loss_history"],
        header.get("val_history", []),
        header["au"],
        StandardizationParams.from_dict(std) if std else None,
        header.get("network"),
    )
