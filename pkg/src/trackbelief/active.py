"""Active-learning harness: seeding strategies, acquisition rules, rounds.

Three experiments are supported: (1) stratified 10% seeding with global
entropy-based acquisition, (2) balanced 5-per-class seeding with per-class
entropy acquisition, and (3) fixed cumulative per-class targets. Each round
retrains from scratch on the labeled pool and logs overall accuracy,
per-class accuracy, and per-class mean entropy on the fixed test split.

True labels of unlabeled samples are consulted only for the per-class
bucketing Experiments 2 and 3 are defined by — never for ranking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .beliefs import ClassFrame, SetBudget
from .config import config_hash, default_config
from .netcore import NumericError, TrainConfig, accuracy, batch_predict, train
from .trackgen import Dataset, DataError

log = logging.getLogger(__name__)


@dataclass
class ALConfig:
    experiment: int                  # 1, 2, or 3
    model_kind: str = "rsnn"
    rounds: Optional[int] = None     # acquisition rounds; None -> per-experiment default
    batch_size: Optional[int] = None  # exp1 global batch / exp2 per-class batch
    seed: int = 0
    train: Optional[TrainConfig] = None  # None -> al.train defaults from config

    def __post_init__(self):
        if self.experiment not in (1, 2, 3):
            raise DataError("experiment must be 1, 2, or 3")
        if self.model_kind not in ("rsnn", "softmax"):
            raise DataError(f"unknown model kind {self.model_kind!r}")
        if self.rounds is not None and self.rounds < 1:
            raise DataError("rounds must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise DataError("batch size must be >= 1")


@dataclass
class LabelPool:
    """Disjoint labeled/unlabeled index sets over the train pool."""

    labeled: np.ndarray
    unlabeled: np.ndarray
    per_class: dict[int, int]

    def __post_init__(self):
        inter = np.intersect1d(self.labeled, self.unlabeled)
        if inter.size:
            raise DataError("labeled and unlabeled pools overlap")

    @property
    def n_total(self) -> int:
        return len(self.labeled) + len(self.unlabeled)

    def add(self, ids: np.ndarray, y: np.ndarray) -> "LabelPool":
        ids = np.asarray(ids, dtype=int)
        if np.intersect1d(ids, self.labeled).size:
            raise DataError("sample labeled twice")
        labeled = np.sort(np.concatenate([self.labeled, ids]))
        mask = ~np.isin(self.unlabeled, ids)
        per_class = dict(self.per_class)
        for cls in y[ids]:
            per_class[int(cls)] = per_class.get(int(cls), 0) + 1
        return LabelPool(labeled, self.unlabeled[mask], per_class)


def seed_pool(strategy: str, y_train: np.ndarray, frame: ClassFrame,
              rng: np.random.Generator,
              fraction: float = 0.10,
              per_class: int = 5) -> LabelPool:
    """Initial labeled pool: 'stratified' fraction or 'balanced' per-class."""
    n = len(y_train)
    all_idx = np.arange(n)
    chosen: list[int] = []
    if strategy == "stratified":
        total = max(1, int(round(n * fraction)))
        classes, counts = np.unique(y_train, return_counts=True)
        ideal = counts * total / n
        take = np.floor(ideal).astype(int)
        short = total - int(take.sum())
        order = sorted(range(len(classes)), key=lambda i: (-(ideal[i] - take[i]), i))
        for i in order[:short]:
            take[i] += 1
        for cls, k in zip(classes, take):
            members = np.flatnonzero(y_train == cls)
            members = members[rng.permutation(len(members))]
            chosen.extend(members[:k].tolist())
    elif strategy == "balanced":
        for cls in range(frame.size):
            members = np.flatnonzero(y_train == cls)
            if len(members) < per_class:
                raise DataError(
                    f"class {frame.names[cls]} has {len(members)} samples, "
                    f"needs {per_class} for a balanced seed")
            members = members[rng.permutation(len(members))]
            chosen.extend(members[:per_class].tolist())
    else:
        raise DataError(f"unknown seed strategy {strategy!r}")

    labeled = np.array(sorted(chosen), dtype=int)
    unlabeled = np.setdiff1d(all_idx, labeled)
    per_class_counts = {int(c): int((y_train[labeled] == c).sum())
                        for c in range(frame.size)}
    return LabelPool(labeled, unlabeled, per_class_counts)


def acquire(round_idx: int, pool: LabelPool, entropies: np.ndarray,
            y_train: np.ndarray, cfg: ALConfig, frame: ClassFrame,
            cfg_defaults: Optional[dict] = None) -> tuple[np.ndarray, dict[int, int]]:
    """Sample indices to label next and any per-class shortfalls.

    `entropies` must cover the whole train pool (only unlabeled entries are
    consulted). Ties break deterministically by sample index.
    """
    if len(pool.unlabeled) == 0:
        raise DataError("unlabeled pool is empty")
    defaults = cfg_defaults or default_config()["al"]
    shortfall: dict[int, int] = {}

    def top_by_entropy(candidates: np.ndarray, k: int) -> np.ndarray:
        # lexsort: last key is primary -> highest entropy first, then lowest id
        order = np.lexsort((candidates, -entropies[candidates]))
        return candidates[order[:k]]

    if cfg.experiment == 1:
        k = cfg.batch_size or max(1, int(round(
            pool.n_total * float(defaults["exp1_batch_fraction"]))))
        k = min(k, len(pool.unlabeled))
        return top_by_entropy(pool.unlabeled, k), shortfall

    picked: list[int] = []
    for cls in range(frame.size):
        candidates = pool.unlabeled[y_train[pool.unlabeled] == cls]
        if cfg.experiment == 2:
            want = cfg.batch_size or int(defaults["exp2_per_class"])
        else:
            step = cfg.batch_size or int(defaults["exp3_per_class_step"])
            target = step * (round_idx + 1)
            want = max(0, target - pool.per_class.get(cls, 0))
        if want == 0:
            continue
        if len(candidates) < want:
            shortfall[cls] = want - len(candidates)
            log.warning("class %s exhausted: wanted %d more, %d available",
                        frame.names[cls], want, len(candidates))
            want = len(candidates)
        picked.extend(top_by_entropy(candidates, want).tolist())
    return np.array(sorted(picked), dtype=int), shortfall


@dataclass
class RoundRecord:
    round_idx: int
    labeled_total: int
    labeled_per_class: list[int]
    test_acc: float
    per_class_acc: list[float]
    per_class_entropy: list[float]
    shortfalls: dict[int, int] = field(default_factory=dict)
    failed: bool = False


@dataclass
class ALRunLog:
    config: ALConfig
    records: list[RoundRecord]
    frame: ClassFrame
    meta: dict = field(default_factory=dict)

    def to_csv(self, path: str | Path) -> None:
        names = [n.replace("-", "_").lower() for n in self.frame.names]
        cols = (["round", "labeled_total"]
                + [f"labeled_{n}" for n in names]
                + ["test_acc"]
                + [f"acc_{n}" for n in names]
                + [f"entropy_{n}" for n in names]
                + ["failed"])
        lines = [f"# {k}={self.meta[k]}" for k in sorted(self.meta)]
        lines.append(",".join(cols))
        for r in self.records:
            cells = ([str(r.round_idx), str(r.labeled_total)]
                     + [str(c) for c in r.labeled_per_class]
                     + [repr(r.test_acc)]
                     + [repr(a) for a in r.per_class_acc]
                     + [repr(e) for e in r.per_class_entropy]
                     + [str(int(r.failed))])
            lines.append(",".join(cells))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _evaluate_round(params, kind, budget, frame,
                    X_test, y_test) -> tuple[float, list[float], list[float]]:
    pred = batch_predict(params, X_test, kind, budget, frame)
    overall = accuracy(pred.classes, y_test)
    per_acc, per_ent = [], []
    for cls in range(frame.size):
        mask = y_test == cls
        if mask.any():
            per_acc.append(float((pred.classes[mask] == cls).mean()))
            per_ent.append(float(pred.entropies[mask].mean()))
        else:
            per_acc.append(0.0)
            per_ent.append(0.0)
    return overall, per_acc, per_ent


def run_experiment(cfg: ALConfig, dataset: Dataset,
                   budget: Optional[SetBudget] = None,
                   cfg_global: Optional[dict] = None) -> ALRunLog:
    """Run one experiment end to end; one record per round (round 0 = seed).

    Models retrain from scratch every round; a failed training marks the
    round and the experiment continues with the last usable model.
    """
    cfg_global = cfg_global or default_config()
    defaults = cfg_global["al"]
    frame = dataset.frame
    if cfg.model_kind == "rsnn" and budget is None:
        budget = SetBudget.default(frame)

    train_idx = dataset.indices("train")
    X_pool, y_pool = dataset.X[train_idx], dataset.y[train_idx]
    X_test, y_test = dataset.split_arrays("test")
    if len(X_test) == 0:
        raise DataError("dataset has no test split")

    rng = np.random.default_rng(cfg.seed)
    strategy = "stratified" if cfg.experiment == 1 else "balanced"
    pool = seed_pool(strategy, y_pool, frame, rng,
                     fraction=float(defaults["seed_fraction"]),
                     per_class=int(defaults["seed_per_class"]))

    rounds = cfg.rounds
    if rounds is None:
        rounds = int(defaults[f"exp{cfg.experiment}_rounds"])

    base_train = cfg.train
    if base_train is None:
        t = defaults.get("train", {})
        base_train = TrainConfig(
            learning_rate=float(t.get("learning_rate", 0.7)),
            batch_size=int(t.get("batch_size", 16)),
            epochs=int(t.get("epochs", 150)),
        )

    records: list[RoundRecord] = []
    params = None
    shortfalls: dict[int, int] = {}
    for round_idx in range(rounds + 1):
        if round_idx > 0:
            if params is None:
                # no usable model yet: fall back to id-order acquisition
                entropies = np.zeros(len(y_pool))
            else:
                pred = batch_predict(params, X_pool, cfg.model_kind, budget, frame)
                entropies = pred.entropies
            ids, new_short = acquire(round_idx, pool, entropies, y_pool,
                                     cfg, frame, defaults)
            for cls, n in new_short.items():
                shortfalls[cls] = shortfalls.get(cls, 0) + n
            pool = pool.add(ids, y_pool)

        train_cfg = TrainConfig(
            learning_rate=base_train.learning_rate,
            batch_size=base_train.batch_size,
            epochs=base_train.epochs,
            val_fraction=base_train.val_fraction,
            seed=int(rng.integers(0, 2**31 - 1)),
            hidden=base_train.hidden,
        )
        failed = False
        try:
            result = train(cfg.model_kind, X_pool[pool.labeled],
                           y_pool[pool.labeled], train_cfg,
                           budget=budget, frame=frame)
            params = result.params
        except (NumericError, ValueError) as exc:
            log.warning("round %d training failed: %s", round_idx, exc)
            failed = True

        if params is not None:
            overall, per_acc, per_ent = _evaluate_round(
                params, cfg.model_kind, budget, frame, X_test, y_test)
        else:
            overall, per_acc, per_ent = 0.0, [0.0] * frame.size, [0.0] * frame.size

        records.append(RoundRecord(
            round_idx=round_idx,
            labeled_total=len(pool.labeled),
            labeled_per_class=[pool.per_class.get(c, 0) for c in range(frame.size)],
            test_acc=overall,
            per_class_acc=per_acc,
            per_class_entropy=per_ent,
            shortfalls=dict(shortfalls),
            failed=failed,
        ))

    meta = {"experiment": cfg.experiment, "model_kind": cfg.model_kind,
            "seed": cfg.seed, "config_hash": config_hash(cfg_global)}
    return ALRunLog(cfg, records, frame, meta)
