"""Reference soft-label classifier and the cross-validated training protocol.

The classifier is multinomial logistic regression on per-channel
log-variance features, trained with Adam under a cosine learning-rate
schedule. The checkpoint with the lowest epoch-mean training loss is kept.
Fold models are combined by majority vote.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .augment import CROPCAT_METHODS, AugConfig, augment_batch
from .signal_core import Dataset, FormatError, SoftLabel, Trial, atomic_write_bytes

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8
VAR_FLOOR = 1e-12
PROB_FLOOR = 1e-12

MODEL_MAGIC = b"CCML"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sIII")


class NumericError(ArithmeticError):
    """Training produced a non-finite loss or parameter."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    lr0: float = 2e-3
    eta_min: float = 0.0
    folds: int = 5
    aug: AugConfig = field(default_factory=AugConfig)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        if not self.lr0 > 0 or self.eta_min < 0 or self.eta_min > self.lr0:
            raise ValueError(f"need 0 <= eta_min <= lr0 and lr0 > 0, got lr0={self.lr0}, eta_min={self.eta_min}")


@dataclass
class ModelState:
    W: np.ndarray
    b: np.ndarray
    adam_m: tuple
    adam_v: tuple
    step_count: int = 0
    best_loss: float = math.inf
    best_params: Optional[tuple] = None
    best_epoch: int = -1
    loss_history: list = field(default_factory=list)

    @classmethod
    def zeros(cls, K: int, F: int) -> "ModelState":
        W = np.zeros((K, F))
        b = np.zeros(K)
        return cls(W, b, (np.zeros_like(W), np.zeros_like(b)), (np.zeros_like(W), np.zeros_like(b)))

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def num_features(self) -> int:
        return self.W.shape[1]

    def checkpoint(self) -> "ModelState":
        """This state with parameters rolled back to the lowest-loss snapshot."""
        if self.best_params is None:
            return self
        W, b = self.best_params
        return dataclasses.replace(self, W=W.copy(), b=b.copy())

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return softmax(np.atleast_2d(features) @ self.W.T + self.b)


@dataclass
class Metrics:
    accuracy: float
    std: float
    per_fold_accuracy: list
    mean_confidence_pure: float
    mean_confidence_mixed: float

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "accuracy": self.accuracy,
            "std": self.std,
            "per_fold_accuracy": list(self.per_fold_accuracy),
            "mean_confidence_pure": clean(self.mean_confidence_pure),
            "mean_confidence_mixed": clean(self.mean_confidence_mixed),
        }


# ---------------------------------------------------------------------------
# model pieces


def batch_features(data: np.ndarray) -> np.ndarray:
    """Log of the per-channel sample variance for an ``(N, C, T)`` stack."""
    data = np.asarray(data, dtype=np.float64)
    if data.shape[-1] < 2:
        raise ValueError("need at least 2 time points to estimate variance")
    var = np.var(data, axis=-1, ddof=1)
    return np.log(np.maximum(var, VAR_FLOOR))


def extract_features(trial: Trial) -> np.ndarray:
    return batch_features(trial.data[None])[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(state: ModelState, features) -> SoftLabel:
    return SoftLabel(softmax(state.W @ np.asarray(features, dtype=np.float64) + state.b))


def _probs(x) -> np.ndarray:
    return x.probs if isinstance(x, SoftLabel) else np.asarray(x, dtype=np.float64)


def soft_cross_entropy(pred, target) -> float:
    """``-sum(target * log(pred))`` with ``pred`` floored at 1e-12.

    Accepts :class:`SoftLabel` objects or arrays; for 2-D arrays the mean
    over rows is returned.
    """
    p = _probs(pred)
    t = _probs(target)
    losses = -np.sum(t * np.log(np.maximum(p, PROB_FLOOR)), axis=-1)
    return float(np.mean(losses))


def grad(state: ModelState, features: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient of the mean soft cross-entropy w.r.t. ``(W, b)``."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    delta = state.predict_proba(X) - Y
    n = X.shape[0]
    return delta.T @ X / n, delta.mean(axis=0)


def adam_step(state: ModelState, grads, lr: float) -> ModelState:
    """One bias-corrected Adam update; returns a new state."""
    t = state.step_count + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip((state.W, state.b), grads, state.adam_m, state.adam_v):
        m = BETA1 * m + (1 - BETA1) * g
        v = BETA2 * v + (1 - BETA2) * g * g
        m_hat = m / (1 - BETA1**t)
        v_hat = v / (1 - BETA2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS))
        new_m.append(m)
        new_v.append(v)
    return dataclasses.replace(
        state,
        W=new_params[0],
        b=new_params[1],
        adam_m=tuple(new_m),
        adam_v=tuple(new_v),
        step_count=t,
    )


def cosine_lr(epoch: int, total: int, lr0: float, eta_min: float = 0.0) -> float:
    return eta_min + (lr0 - eta_min) * (1 + math.cos(math.pi * epoch / total)) / 2


# ---------------------------------------------------------------------------
# training loop


def _seed_streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _run_epochs(state: ModelState, n: int, config: TrainConfig, shuffle_rng, make_batch) -> ModelState:
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr0, config.eta_min)
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        total_count = 0
        for start in range(0, n, config.batch_size):
            X, Y = make_batch(order[start : start + config.batch_size])
            loss = soft_cross_entropy(state.predict_proba(X), Y)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            total_loss += loss * len(X)
            total_count += len(X)
            state = adam_step(state, grad(state, X, Y), lr)
        if not (np.all(np.isfinite(state.W)) and np.all(np.isfinite(state.b))):
            raise NumericError(f"non-finite parameters after epoch {epoch}")
        epoch_loss = total_loss / total_count
        state.loss_history.append(epoch_loss)
        if epoch_loss < state.best_loss:
            state.best_loss = epoch_loss
            state.best_params = (state.W.copy(), state.b.copy())
            state.best_epoch = epoch
    return state


def fit_features(features: np.ndarray, targets: np.ndarray, config: TrainConfig) -> ModelState:
    """Train on fixed feature vectors and (soft) target rows; no augmentation."""
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("cannot train on an empty set")
    shuffle_rng, _ = _seed_streams(config.seed, 2)
    state = ModelState.zeros(Y.shape[1], X.shape[1])
    state = _run_epochs(state, len(X), config, shuffle_rng, lambda idx: (X[idx], Y[idx]))
    return state.checkpoint()


def _keeps_augmented(pair, method: str) -> bool:
    if method == "none":
        return False
    if method in CROPCAT_METHODS:
        # fallbacks and empty windows reproduce the original exactly
        return pair.provenance is not None and pair.provenance.realized_ratio > 0
    return True


def train_fold(train_split: Dataset, config: TrainConfig) -> ModelState:
    """Train one model on ``train_split``.

    Every mini-batch is augmented per ``config.aug``; augmented pairs are
    appended to the batch's originals (which carry one-hot labels). Pairs
    identical to their source are not appended. Returns the parameters
    from the epoch with the lowest mean training loss.
    """
    if len(train_split) == 0:
        raise ValueError("cannot train on an empty split")
    K = train_split.num_classes
    trials = train_split.trials
    feats = batch_features(train_split.stacked())
    onehot = np.eye(K)[train_split.labels]
    shuffle_rng, aug_rng = _seed_streams(config.seed, 2)
    method = config.aug.method

    def make_batch(idx):
        X, Y = feats[idx], onehot[idx]
        if method == "none":
            return X, Y
        pairs = augment_batch([trials[i] for i in idx], config.aug, K, aug_rng)
        kept = [p for p in pairs if _keeps_augmented(p, method)]
        if not kept:
            return X, Y
        Xa = batch_features(np.stack([p.data for p in kept]))
        Ya = np.stack([p.label.probs for p in kept])
        return np.concatenate([X, Xa]), np.concatenate([Y, Ya])

    state = ModelState.zeros(K, feats.shape[1])
    state = _run_epochs(state, len(trials), config, shuffle_rng, make_batch)
    log.debug("fold trained: best epoch %d, loss %.6f", state.best_epoch, state.best_loss)
    return state.checkpoint()


def kfold_split(dataset: Dataset, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified ``k``-fold partition as ``(train_indices, validation_indices)`` pairs.

    Each class is shuffled and dealt round-robin over the folds; the dealing
    position carries over between classes so fold sizes differ by at most one.
    """
    n = len(dataset)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"cannot split {n} trials into {k} folds")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    fold_of = np.empty(n, dtype=np.int64)
    offset = 0
    for c in range(dataset.num_classes):
        members = rng.permutation(np.flatnonzero(labels == c))
        fold_of[members] = (offset + np.arange(members.size)) % k
        offset += members.size
    all_idx = np.arange(n)
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(k)]


def _vote_from_probs(probs: np.ndarray) -> np.ndarray:
    """Majority vote for ``(n_models, N, K)`` probabilities.

    Ties go to the class with the highest summed probability, then the lowest index.
    """
    n_models, N, K = probs.shape
    votes = np.zeros((N, K), dtype=np.int64)
    picks = probs.argmax(axis=-1)
    for m in range(n_models):
        votes[np.arange(N), picks[m]] += 1
    summed = probs.sum(axis=0)
    out = np.empty(N, dtype=np.int64)
    for i in range(N):
        tied = np.flatnonzero(votes[i] == votes[i].max())
        if tied.size == 1:
            out[i] = tied[0]
        else:
            # argmax returns the first (lowest) index among equal sums
            out[i] = tied[np.argmax(summed[i, tied])]
    return out


def vote(models: Sequence[ModelState], trial) -> int:
    """Ensemble prediction for one trial (or one feature vector)."""
    x = extract_features(trial) if isinstance(trial, Trial) else np.asarray(trial, dtype=np.float64)
    probs = np.stack([m.predict_proba(x) for m in models])
    return int(_vote_from_probs(probs)[0])


def vote_batch(models: Sequence[ModelState], features: np.ndarray) -> np.ndarray:
    probs = np.stack([m.predict_proba(features) for m in models])
    return _vote_from_probs(probs)


# ---------------------------------------------------------------------------
# protocol


def _stage_seeds(seed: int) -> tuple[int, int]:
    kfold_seed, fold_root = np.random.SeedSequence([seed, 0]).generate_state(2)
    return int(kfold_seed), int(fold_root)


def cross_validate(dataset: Dataset, config: TrainConfig) -> list[ModelState]:
    """Train one model per fold's training split."""
    kfold_seed, fold_root = _stage_seeds(config.seed)
    splits = kfold_split(dataset, config.folds, kfold_seed)
    fold_seeds = np.random.SeedSequence(fold_root).generate_state(config.folds)
    models = []
    for f, (train_idx, _) in enumerate(splits):
        cfg = dataclasses.replace(config, seed=int(fold_seeds[f]))
        models.append(train_fold(dataset.subset(train_idx), cfg))
        log.info("fold %d/%d done (best epoch %d)", f + 1, config.folds, models[-1].best_epoch)
    return models


def mixing_config(aug: AugConfig) -> AugConfig:
    """CropCat settings used to build mixed probes for the confidence check."""
    if aug.method in CROPCAT_METHODS:
        return aug
    return AugConfig(method="cropcat_temporal", lam=0.125)


def score(
    models: Sequence[ModelState],
    holdout: Dataset,
    mix: AugConfig,
    seed: int = 0,
    batch_size: int = 64,
) -> Metrics:
    """Vote accuracy, per-model accuracies and confidence on pure vs. mixed inputs.

    Confidence is the max of the fold-averaged predicted distribution. Mixed
    inputs are CropCat outputs built from holdout batches under ``mix``; pairs
    that replaced nothing are excluded. If none remain, the mixed confidence
    is NaN.
    """
    if not models:
        raise ValueError("need at least one model")
    if len(holdout) == 0:
        raise ValueError("holdout set is empty")
    feats = batch_features(holdout.stacked())
    y = holdout.labels
    probs = np.stack([m.predict_proba(feats) for m in models])
    per_fold = [float(np.mean(p.argmax(axis=-1) == y)) for p in probs]
    accuracy = float(np.mean(_vote_from_probs(probs) == y))
    conf_pure = float(np.mean(probs.mean(axis=0).max(axis=-1)))

    rng = np.random.default_rng(seed)
    mixed = []
    trials = holdout.trials
    for start in range(0, len(trials), batch_size):
        pairs = augment_batch(list(trials[start : start + batch_size]), mix, holdout.num_classes, rng)
        mixed.extend(p.data for p in pairs if _keeps_augmented(p, mix.method))
    if mixed:
        mfeats = batch_features(np.stack(mixed))
        mprobs = np.stack([m.predict_proba(mfeats) for m in models]).mean(axis=0)
        conf_mixed = float(np.mean(mprobs.max(axis=-1)))
    else:
        conf_mixed = math.nan
    return Metrics(accuracy, float(np.std(per_fold)), per_fold, conf_pure, conf_mixed)


def evaluate(dataset: Dataset, config: TrainConfig, holdout: Optional[Dataset] = None) -> Metrics:
    """Cross-validate on ``dataset`` and score the fold ensemble on ``holdout``.

    Without a holdout set the training data itself is scored.
    """
    holdout = dataset if holdout is None else holdout
    models = cross_validate(dataset, config)
    _, score_seed = np.random.SeedSequence([config.seed, 1]).generate_state(2)
    return score(models, holdout, mixing_config(config.aug), int(score_seed), config.batch_size)


# ---------------------------------------------------------------------------
# model files


def encode_model(state: ModelState) -> bytes:
    K, F = state.W.shape
    return b"".join(
        [
            _MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, K, F),
            np.ascontiguousarray(state.W, dtype="<f8").tobytes(),
            np.ascontiguousarray(state.b, dtype="<f8").tobytes(),
        ]
    )


def decode_model(buf: bytes) -> ModelState:
    if len(buf) < _MODEL_HEADER.size:
        raise FormatError("missing header" if not buf else "truncated header")
    magic, version, K, F = _MODEL_HEADER.unpack_from(buf, 0)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad magic: expected {MODEL_MAGIC!r}, got {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"version: unsupported model version {version}")
    expected = _MODEL_HEADER.size + 8 * (K * F + K)
    if len(buf) != expected:
        raise FormatError(f"truncated payload: expected {expected} bytes for K={K}, F={F}, got {len(buf)}")
    off = _MODEL_HEADER.size
    W = np.frombuffer(buf, dtype="<f8", count=K * F, offset=off).reshape(K, F).astype(np.float64)
    b = np.frombuffer(buf, dtype="<f8", count=K, offset=off + 8 * K * F).astype(np.float64)
    state = ModelState.zeros(K, F)
    state.W, state.b = W, b
    return state


def save_model(state: ModelState, path) -> None:
    atomic_write_bytes(path, encode_model(state))


def load_model(path) -> ModelState:
    with open(path, "rb") as fh:
        return decode_model(fh.read())
