"""Minimal differentiable feed-forward network with two heads.

Hidden layers are tanh; the softmax head is the deterministic baseline
classifier, the random-set head emits per-set sigmoid scores trained with
binary set-membership targets. Gradients are hand-rolled reverse mode and
checked against central finite differences in the test suite.

Training is single-threaded and fully determined by the run seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .beliefs import (BeliefPrediction, ClassFrame, PignisticDist, SetBudget,
                      prediction_from_scores, _DEGENERATE_BELIEF)

log = logging.getLogger(__name__)

EPS = 1e-12
MODEL_FORMAT_VERSION = 1


class NumericError(RuntimeError):
    """Non-finite value encountered during forward/backward passes."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.2
    batch_size: int = 32
    epochs: int = 60
    val_fraction: float = 0.2
    seed: int = 0
    hidden: tuple[int, ...] = (64, 32)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("validation fraction must be in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class NetParams:
    """Layer weights and biases; weights[i] has shape (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {i} shapes inconsistent")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i} does not chain from layer {i - 1}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "NetParams":
        return NetParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases)
                               for a in pair])


def init_params(layer_sizes: Sequence[int],
                rng: np.random.Generator) -> NetParams:
    """Xavier-uniform initialization, biases at zero."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetParams(weights, biases)


def _forward(params: NetParams, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits and the per-layer activations needed for backprop."""
    h = X
    cache = [h]
    n_layers = len(params.weights)
    for i in range(n_layers - 1):
        z = h @ params.weights[i] + params.biases[i]
        h = np.tanh(z)
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite activation at hidden layer {i}")
        cache.append(h)
    logits = h @ params.weights[-1] + params.biases[-1]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite activation at output layer")
    return logits, cache


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(logits: np.ndarray) -> np.ndarray:
    out = np.empty_like(logits)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    ez = np.exp(logits[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax_probs(params: NetParams, X: np.ndarray) -> np.ndarray:
    logits, _ = _forward(params, np.atleast_2d(X))
    return softmax(logits)


def rsnn_scores(params: NetParams, X: np.ndarray) -> np.ndarray:
    logits, _ = _forward(params, np.atleast_2d(X))
    return sigmoid(logits)


def forward_softmax(params: NetParams, x: np.ndarray,
                    frame: ClassFrame) -> PignisticDist:
    """Single-sample softmax head output as a probability distribution."""
    probs = softmax_probs(params, x)[0]
    return PignisticDist(frame, probs)


def forward_rsnn(params: NetParams, x: np.ndarray,
                 budget: SetBudget) -> BeliefPrediction:
    """Single-sample random-set head output as a complete prediction."""
    scores = rsnn_scores(params, x)[0]
    return prediction_from_scores(scores, budget)


def loss_softmax(probs: np.ndarray, true_class: int) -> float:
    """Cross-entropy in nats of one predicted distribution."""
    return float(-np.log(max(float(probs[true_class]), EPS)))


def loss_rsnn(scores: np.ndarray, true_class: int,
              membership: np.ndarray) -> float:
    """Mean over budget sets of BCE(score_A, 1[true_class in A])."""
    targets = membership[:, true_class].astype(float)
    s = np.clip(scores, EPS, 1.0 - EPS)
    bce = -(targets * np.log(s) + (1.0 - targets) * np.log(1.0 - s))
    return float(bce.mean())


def batch_loss(params: NetParams, X: np.ndarray, y: np.ndarray,
               kind: str, membership: Optional[np.ndarray] = None) -> float:
    """Mean loss over a batch, matching what `backward` differentiates."""
    logits, _ = _forward(params, X)
    if kind == "softmax":
        probs = softmax(logits)
        picked = np.clip(probs[np.arange(len(y)), y], EPS, None)
        return float(-np.log(picked).mean())
    scores = np.clip(sigmoid(logits), EPS, 1.0 - EPS)
    targets = membership[:, y].T.astype(float)  # (B, n_sets)
    bce = -(targets * np.log(scores) + (1.0 - targets) * np.log(1.0 - scores))
    return float(bce.mean(axis=1).mean())


def backward(params: NetParams, X: np.ndarray, y: np.ndarray, kind: str,
             membership: Optional[np.ndarray] = None) -> NetParams:
    """Gradients of the mean batch loss with respect to every parameter."""
    logits, cache = _forward(params, X)
    n = len(y)
    if kind == "softmax":
        probs = softmax(logits)
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
    elif kind == "rsnn":
        scores = sigmoid(logits)
        targets = membership[:, y].T.astype(float)
        delta = (scores - targets) / (n * membership.shape[0])
    else:
        raise ValueError(f"unknown head kind {kind!r}")

    grad_w = [np.zeros_like(w) for w in params.weights]
    grad_b = [np.zeros_like(b) for b in params.biases]
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w[i] = cache[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if not (np.all(np.isfinite(grad_w[i])) and np.all(np.isfinite(grad_b[i]))):
            raise NumericError(f"non-finite gradient at layer {i}")
        if i > 0:
            delta = (delta @ params.weights[i].T) * (1.0 - cache[i] ** 2)
    return NetParams(grad_w, grad_b)


def sgd_step(params: NetParams, grads: NetParams, lr: float) -> NetParams:
    """One plain gradient-descent step; returns new parameters."""
    return NetParams(
        [w - lr * g for w, g in zip(params.weights, grads.weights)],
        [b - lr * g for b, g in zip(params.biases, grads.biases)],
    )


# ---------------------------------------------------------------------------
# Batched prediction (vectorized belief pipeline for metrics/acquisition)
# ---------------------------------------------------------------------------

@dataclass
class BatchPrediction:
    """Vectorized per-sample outputs for a whole feature matrix."""

    classes: np.ndarray        # (B,) argmax class index
    entropies: np.ndarray      # (B,) entropy in bits
    probs: np.ndarray          # (B, n_classes) pignistic or softmax
    scores: Optional[np.ndarray] = None   # (B, n_sets) raw rsnn scores
    masses: Optional[np.ndarray] = None   # (B, n_sets) valid masses
    degenerate: Optional[np.ndarray] = None


def batch_masses_from_scores(scores: np.ndarray,
                             budget: SetBudget) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized belief -> mass for many score rows.

    The in-order Mobius recursion is the solution of the linear system
    Z m = bel (Z the budget subset-incidence matrix), so one solve per
    budget covers every row; clamping and renormalization follow, with the
    vacuous fallback for effectively all-zero rows.
    """
    subset = budget.subset_matrix().astype(float)
    raw = np.linalg.solve(subset, scores.T).T
    clamped = np.maximum(raw, 0.0)
    totals = clamped.sum(axis=1)
    degenerate = (scores.max(axis=1) < _DEGENERATE_BELIEF) | (totals <= 0.0)
    theta = budget.index_of_full()
    masses = np.zeros_like(clamped)
    ok = ~degenerate
    masses[ok] = clamped[ok] / totals[ok, None]
    masses[degenerate, theta] = 1.0
    return masses, degenerate


def batch_predict(params: NetParams, X: np.ndarray, kind: str,
                  budget: Optional[SetBudget] = None,
                  frame: Optional[ClassFrame] = None) -> BatchPrediction:
    X = np.atleast_2d(X)
    if kind == "softmax":
        probs = softmax_probs(params, X)
        ent = _rows_entropy(probs)
        return BatchPrediction(np.argmax(probs, axis=1), ent, probs)
    scores = rsnn_scores(params, X)
    masses, degenerate = batch_masses_from_scores(scores, budget)
    member = budget.membership_matrix().astype(float)
    per_member = masses / budget.cardinalities()[None, :]
    probs = per_member @ member
    probs = probs / probs.sum(axis=1, keepdims=True)
    ent = _rows_entropy(probs)
    return BatchPrediction(np.argmax(probs, axis=1), ent, probs,
                           scores=scores, masses=masses, degenerate=degenerate)


def _rows_entropy(probs: np.ndarray) -> np.ndarray:
    safe = np.where(probs > 0, probs, 1.0)
    return -(probs * np.log2(safe)).sum(axis=1)


def accuracy(pred_classes: np.ndarray, y: np.ndarray) -> float:
    return float((pred_classes == y).mean()) if len(y) else 0.0


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: NetParams
    log_rows: list[dict]
    best_epoch: int
    kind: str


def stratified_val_split(y: np.ndarray, val_fraction: float,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(train_idx, val_idx) with per-class proportional validation counts."""
    n = len(y)
    n_val = max(1, int(round(n * val_fraction)))
    if n_val >= n:
        raise ValueError("validation split would consume the whole dataset")
    classes, counts = np.unique(y, return_counts=True)
    ideal = counts * n_val / n
    take = np.floor(ideal).astype(int)
    short = n_val - int(take.sum())
    order = sorted(range(len(classes)),
                   key=lambda i: (-(ideal[i] - take[i]), i))
    for i in order:
        if short == 0:
            break
        if take[i] < counts[i]:
            take[i] += 1
            short -= 1
    val_idx = []
    for cls, k in zip(classes, take):
        members = np.flatnonzero(y == cls)
        members = members[rng.permutation(len(members))]
        val_idx.extend(members[:k].tolist())
    val_idx = np.array(sorted(val_idx), dtype=int)
    mask = np.ones(n, dtype=bool)
    mask[val_idx] = False
    return np.flatnonzero(mask), val_idx


def train(kind: str,
          X: np.ndarray,
          y: np.ndarray,
          cfg: TrainConfig,
          budget: Optional[SetBudget] = None,
          frame: Optional[ClassFrame] = None,
          X_val: Optional[np.ndarray] = None,
          y_val: Optional[np.ndarray] = None) -> TrainResult:
    """Train one head; returns the best-validation-accuracy parameters.

    When no explicit validation arrays are given, a stratified
    `cfg.val_fraction` slice is carved from the training data. A class
    missing from the training split logs a warning and training continues
    (active-learning seed pools may lack classes).
    """
    if kind not in ("softmax", "rsnn"):
        raise ValueError(f"unknown model kind {kind!r}")
    if kind == "rsnn" and budget is None:
        raise ValueError("rsnn training requires a set budget")
    if frame is None:
        frame = budget.frame if budget is not None else ClassFrame.seven()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(X) == 0:
        raise ValueError("empty training dataset")

    rng = np.random.default_rng(cfg.seed)
    if X_val is None:
        train_idx, val_idx = stratified_val_split(y, cfg.val_fraction, rng)
        X_val, y_val = X[val_idx], y[val_idx]
        X, y = X[train_idx], y[train_idx]
    if len(X_val) == 0:
        raise ValueError("empty validation split")

    present = set(np.unique(y).tolist())
    missing = [frame.names[i] for i in range(frame.size) if i not in present]
    if missing:
        log.warning("classes absent from training split: %s", ", ".join(missing))

    out_dim = len(budget) if kind == "rsnn" else frame.size
    membership = budget.membership_matrix() if kind == "rsnn" else None
    sizes = [X.shape[1], *cfg.hidden, out_dim]
    params = init_params(sizes, rng)

    best_params = params.copy()
    best_key = (-1.0, -np.inf)  # (val_acc, -val_loss): loss breaks acc ties
    best_epoch = -1
    rows: list[dict] = []
    n = len(X)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grads = backward(params, X[batch], y[batch], kind, membership)
            params = sgd_step(params, grads, cfg.learning_rate)

        train_loss = batch_loss(params, X, y, kind, membership)
        val_loss = batch_loss(params, X_val, y_val, kind, membership)
        train_pred = batch_predict(params, X, kind, budget, frame)
        val_pred = batch_predict(params, X_val, kind, budget, frame)
        train_acc = accuracy(train_pred.classes, y)
        val_acc = accuracy(val_pred.classes, y_val)
        rows.append({"epoch": epoch, "train_loss": train_loss,
                     "train_acc": train_acc, "val_loss": val_loss,
                     "val_acc": val_acc})
        key = (val_acc, -val_loss)
        if key > best_key:
            best_key = key
            best_epoch = epoch
            best_params = params.copy()

    return TrainResult(best_params, rows, best_epoch, kind)


def write_training_log(rows: list[dict], path: str | Path,
                       header_meta: Optional[dict] = None) -> None:
    """CSV log: epoch, train_loss, train_acc, val_loss, val_acc."""
    lines = []
    if header_meta:
        for key in sorted(header_meta):
            lines.append(f"# {key}={header_meta[key]}")
    lines.append("epoch,train_loss,train_acc,val_loss,val_acc")
    for row in rows:
        lines.append(
            f"{row['epoch']},{row['train_loss']!r},{row['train_acc']!r},"
            f"{row['val_loss']!r},{row['val_acc']!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Model container and checkpoint format
# ---------------------------------------------------------------------------

@dataclass
class Model:
    """Trained head plus everything needed to run it standalone."""

    kind: str
    params: NetParams
    frame: ClassFrame
    budget: Optional[SetBudget]
    meta: dict = field(default_factory=dict)

    def predict_batch(self, X: np.ndarray) -> BatchPrediction:
        return batch_predict(self.params, X, self.kind, self.budget, self.frame)

    def predict_one(self, x: np.ndarray):
        if self.kind == "rsnn":
            return forward_rsnn(self.params, x, self.budget)
        return forward_softmax(self.params, x, self.frame)


def save_model(model: Model, path: str | Path) -> None:
    """Versioned npz checkpoint: weight arrays plus a JSON meta record."""
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "classes_mode": model.frame.size,
        "layer_sizes": model.params.layer_sizes,
        "budget": model.budget.to_name_lists() if model.budget else None,
        **model.meta,
    }
    arrays = {}
    for i, (w, b) in enumerate(zip(model.params.weights, model.params.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_model(path: str | Path) -> Model:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version in {path}")
        n_layers = len(meta["layer_sizes"]) - 1
        weights = [data[f"W{i}"] for i in range(n_layers)]
        biases = [data[f"b{i}"] for i in range(n_layers)]
    frame = ClassFrame.for_mode(int(meta["classes_mode"]))
    budget = None
    if meta.get("budget"):
        budget = SetBudget.from_name_lists(frame, meta["budget"])
    params = NetParams(weights, biases)
    extra = {k: v for k, v in meta.items()
             if k not in ("format_version", "kind", "classes_mode",
                          "layer_sizes", "budget")}
    return Model(meta["kind"], params, frame, budget, extra)
