"""Finite random-set (belief-function) algebra over the track-direction frame.

The frame is the ordered set of curvature classes; focal sets are bitmask
subsets of it. A classifier scores a budgeted family of focal sets, and this
module turns those per-set scores into a valid mass function (Mobius
inversion + validity projection), a pignistic probability distribution, and
a pignistic entropy in bits.

All types are immutable values; every operation is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

MASS_TOL = 1e-9
_DEGENERATE_BELIEF = 1e-9  # max belief below this -> treat input as all-zero

SEVEN_CLASS_NAMES = (
    "Left-Hard", "Left-Medium", "Left-Easy", "Straight",
    "Right-Easy", "Right-Medium", "Right-Hard",
)
SEVEN_CLASS_ANGLES = (-75.0, -47.5, -25.0, 0.0, 25.0, 47.5, 75.0)

THREE_CLASS_NAMES = ("Left", "Straight", "Right")
# Merged classes carry the mean nominal angle of their members.
THREE_CLASS_ANGLES = (-49.1666666666667, 0.0, 49.1666666666667)


class BeliefError(ValueError):
    """Invalid belief-algebra construction or input."""


@dataclass(frozen=True)
class ClassFrame:
    """Ordered frame of discernment with signed nominal deviation angles.

    Negative angles are left turns. Order must be strictly monotone in the
    nominal angle, which fixes index-based tie-breaking everywhere.
    """

    names: tuple[str, ...]
    angles_deg: tuple[float, ...]

    def __post_init__(self):
        if len(self.names) != len(self.angles_deg):
            raise BeliefError("names and angles must align")
        if len(self.names) not in (3, 7):
            raise BeliefError("frame must have 7 classes (or 3 in merged mode)")
        if len(set(self.names)) != len(self.names):
            raise BeliefError("duplicate class names")
        if any(b <= a for a, b in zip(self.angles_deg, self.angles_deg[1:])):
            raise BeliefError("class order must be strictly monotone in angle")

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def max_entropy_bits(self) -> float:
        return math.log2(self.size)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise BeliefError(f"unknown class {name!r}") from None

    @staticmethod
    def seven() -> "ClassFrame":
        return ClassFrame(SEVEN_CLASS_NAMES, SEVEN_CLASS_ANGLES)

    @staticmethod
    def three() -> "ClassFrame":
        return ClassFrame(THREE_CLASS_NAMES, THREE_CLASS_ANGLES)

    @staticmethod
    def for_mode(n_classes: int) -> "ClassFrame":
        if n_classes == 7:
            return ClassFrame.seven()
        if n_classes == 3:
            return ClassFrame.three()
        raise BeliefError(f"unsupported frame size {n_classes}")


@dataclass(frozen=True)
class FocalSet:
    """Subset of the frame as a bitmask (bit i = class index i)."""

    bits: int
    width: int

    def __post_init__(self):
        if not 0 <= self.bits < (1 << self.width):
            raise BeliefError("bitmask out of range for frame width")

    @staticmethod
    def from_indices(indices: Iterable[int], width: int) -> "FocalSet":
        bits = 0
        for i in indices:
            if not 0 <= i < width:
                raise BeliefError(f"class index {i} outside frame")
            bits |= 1 << i
        return FocalSet(bits, width)

    @staticmethod
    def from_names(names: Iterable[str], frame: ClassFrame) -> "FocalSet":
        return FocalSet.from_indices((frame.index(n) for n in names), frame.size)

    @staticmethod
    def full(width: int) -> "FocalSet":
        return FocalSet((1 << width) - 1, width)

    @property
    def cardinality(self) -> int:
        return bin(self.bits).count("1")

    def indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.width) if self.bits >> i & 1)

    def names(self, frame: ClassFrame) -> tuple[str, ...]:
        return tuple(frame.names[i] for i in self.indices())

    def contains(self, index: int) -> bool:
        return bool(self.bits >> index & 1)

    def issubset(self, other: "FocalSet") -> bool:
        return self.bits & ~other.bits == 0

    def is_full(self) -> bool:
        return self.bits == (1 << self.width) - 1


@dataclass(frozen=True)
class SetBudget:
    """The ordered family of focal sets the classifier scores.

    Must contain every singleton and the full frame; duplicates are
    rejected. Any other composition is permitted.
    """

    frame: ClassFrame
    sets: tuple[FocalSet, ...]

    def __post_init__(self):
        width = self.frame.size
        seen = set()
        for fs in self.sets:
            if fs.width != width:
                raise BeliefError("focal set width does not match frame")
            if fs.bits == 0:
                raise BeliefError("empty set not allowed in budget")
            if fs.bits in seen:
                raise BeliefError("duplicate focal set in budget")
            seen.add(fs.bits)
        for i in range(width):
            if (1 << i) not in seen:
                raise BeliefError(f"budget missing singleton {self.frame.names[i]!r}")
        if ((1 << width) - 1) not in seen:
            raise BeliefError("budget missing the full frame")

    def __len__(self) -> int:
        return len(self.sets)

    def index_of(self, fs: FocalSet) -> int:
        for i, s in enumerate(self.sets):
            if s.bits == fs.bits:
                return i
        raise BeliefError("focal set not in budget")

    def singleton_index(self, class_index: int) -> int:
        return self.index_of(FocalSet(1 << class_index, self.frame.size))

    def index_of_full(self) -> int:
        return self.index_of(FocalSet.full(self.frame.size))

    def cardinalities(self) -> np.ndarray:
        return np.array([fs.cardinality for fs in self.sets], dtype=float)

    def subset_matrix(self) -> np.ndarray:
        """Boolean matrix S with S[i, j] = sets[j] is a subset of sets[i]."""
        n = len(self.sets)
        mat = np.zeros((n, n), dtype=bool)
        for i, a in enumerate(self.sets):
            for j, b in enumerate(self.sets):
                mat[i, j] = b.issubset(a)
        return mat

    def membership_matrix(self) -> np.ndarray:
        """Boolean matrix M with M[i, c] = class c is a member of sets[i]."""
        mat = np.zeros((len(self.sets), self.frame.size), dtype=bool)
        for i, fs in enumerate(self.sets):
            for c in fs.indices():
                mat[i, c] = True
        return mat

    @staticmethod
    def from_name_lists(frame: ClassFrame,
                        name_lists: Sequence[Sequence[str]]) -> "SetBudget":
        sets = tuple(FocalSet.from_names(ns, frame) for ns in name_lists)
        return SetBudget(frame, sets)

    def to_name_lists(self) -> list[list[str]]:
        return [list(fs.names(self.frame)) for fs in self.sets]

    @staticmethod
    def default(frame: ClassFrame) -> "SetBudget":
        from .config import DEFAULTS
        key = "sets_7" if frame.size == 7 else "sets_3"
        return SetBudget.from_name_lists(frame, DEFAULTS["budget"][key])


def _as_readonly(values: Iterable[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=float).copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class MassFunction:
    """Normalized non-negative mass over a budgeted family of focal sets.

    `degenerate` marks masses produced from an (effectively) all-zero
    belief vector, where the vacuous fallback was taken.
    """

    budget: SetBudget
    mass: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mass", _as_readonly(self.mass))
        if self.mass.shape != (len(self.budget),):
            raise BeliefError("mass vector does not align with budget")
        if not np.all(np.isfinite(self.mass)):
            raise BeliefError("non-finite mass entry")
        if np.any(self.mass < 0):
            raise BeliefError("negative mass entry")
        if abs(float(self.mass.sum()) - 1.0) > MASS_TOL:
            raise BeliefError("mass entries must sum to 1 within 1e-9")

    def value(self, fs: FocalSet) -> float:
        return float(self.mass[self.budget.index_of(fs)])

    @staticmethod
    def vacuous(budget: SetBudget, degenerate: bool = False) -> "MassFunction":
        mass = np.zeros(len(budget))
        mass[budget.index_of(FocalSet.full(budget.frame.size))] = 1.0
        return MassFunction(budget, mass, degenerate=degenerate)

    def to_json_obj(self) -> list[dict]:
        frame = self.budget.frame
        return [
            {"set": list(fs.names(frame)), "mass": float(m)}
            for fs, m in zip(self.budget.sets, self.mass)
        ]

    @staticmethod
    def from_json_obj(obj: Sequence[dict], budget: SetBudget) -> "MassFunction":
        mass = np.zeros(len(budget))
        for entry in obj:
            fs = FocalSet.from_names(entry["set"], budget.frame)
            mass[budget.index_of(fs)] = float(entry["mass"])
        return MassFunction(budget, mass)


@dataclass(frozen=True)
class PignisticDist:
    """Probability distribution over the frame (pignistic or softmax)."""

    frame: ClassFrame
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _as_readonly(self.probs))
        if self.probs.shape != (self.frame.size,):
            raise BeliefError("probability vector does not align with frame")
        if np.any(self.probs < 0) or not np.all(np.isfinite(self.probs)):
            raise BeliefError("probabilities must be finite and non-negative")
        if abs(float(self.probs.sum()) - 1.0) > MASS_TOL:
            raise BeliefError("probabilities must sum to 1 within 1e-9")

    def prob(self, name: str) -> float:
        return float(self.probs[self.frame.index(name)])


@dataclass(frozen=True)
class BeliefPrediction:
    """Complete per-sample output of the random-set head."""

    frame: ClassFrame
    raw_scores: np.ndarray       # per-set scores in (0, 1)
    mass: MassFunction
    pignistic: PignisticDist
    entropy_bits: float
    predicted_class: int         # argmax of pignistic, ties -> lowest index
    top_mass_set: FocalSet       # argmax mass, ties -> smallest cardinality, then index
    degenerate: bool = False

    @property
    def predicted_name(self) -> str:
        return self.frame.names[self.predicted_class]


def mass_to_belief(m: MassFunction, target: FocalSet) -> float:
    """Bel(A) = total mass on budget sets that are subsets of A."""
    total = 0.0
    for fs, value in zip(m.budget.sets, m.mass):
        if fs.issubset(target):
            total += float(value)
    return total


def beliefs_on_budget(m: MassFunction) -> np.ndarray:
    """Bel evaluated at every budget set, in budget order."""
    return m.budget.subset_matrix().astype(float) @ m.mass


def belief_to_mass(bel: Sequence[float] | np.ndarray,
                   budget: SetBudget) -> MassFunction:
    """Recover a valid mass function from per-set belief values.

    Mobius inversion restricted to the budget family: processing sets in
    (cardinality, index) order, m(A) = bel(A) - sum of m(B) over budget
    sets B strictly contained in A. Negative masses (inconsistent inputs)
    are clamped to zero and the vector renormalized; an all-zero input
    falls back to the vacuous mass, flagged degenerate.
    """
    bel = np.asarray(bel, dtype=float)
    if bel.shape != (len(budget),):
        raise BeliefError("belief vector does not align with budget")
    if not np.all(np.isfinite(bel)):
        raise BeliefError("non-finite belief value")

    if float(np.max(bel, initial=0.0)) < _DEGENERATE_BELIEF:
        return MassFunction.vacuous(budget, degenerate=True)

    order = sorted(range(len(budget)),
                   key=lambda i: (budget.sets[i].cardinality, i))
    subset = budget.subset_matrix()
    raw = np.zeros(len(budget))
    for i in order:
        inner = 0.0
        for j in order:
            if j != i and subset[i, j]:
                inner += raw[j]
        raw[i] = bel[i] - inner

    clamped = np.maximum(raw, 0.0)
    total = float(clamped.sum())
    if total <= 0.0:
        return MassFunction.vacuous(budget, degenerate=True)
    return MassFunction(budget, clamped / total)


def pignistic(m: MassFunction) -> PignisticDist:
    """BetP(c) = sum over budget sets A containing c of m(A) / |A|."""
    membership = m.budget.membership_matrix().astype(float)
    per_member = m.mass / m.budget.cardinalities()
    probs = membership.T @ per_member
    # Guard the 1e-9 sum invariant against accumulation error.
    probs = probs / probs.sum()
    return PignisticDist(m.budget.frame, probs)


def pignistic_entropy(p: PignisticDist) -> float:
    """Shannon entropy of the distribution in bits, with 0 log 0 = 0."""
    probs = p.probs[p.probs > 0]
    return float(-(probs * np.log2(probs)).sum())


def entropy_bits(probs: np.ndarray) -> float:
    """Entropy in bits of a bare probability vector (0 log 0 = 0)."""
    probs = np.asarray(probs, dtype=float)
    positive = probs[probs > 0]
    return float(-(positive * np.log2(positive)).sum())


def top_mass_set(m: MassFunction) -> FocalSet:
    """Budget set with maximal mass; ties by smaller cardinality, then index."""
    best = None
    best_key = None
    for i, fs in enumerate(m.budget.sets):
        key = (-float(m.mass[i]), fs.cardinality, i)
        if best_key is None or key < best_key:
            best, best_key = fs, key
    return best


def prediction_from_scores(raw_scores: Sequence[float] | np.ndarray,
                           budget: SetBudget) -> BeliefPrediction:
    """Scores -> mass -> pignistic -> entropy -> argmax, in one shot.

    The per-set scores are treated as predicted beliefs on the budget.
    """
    raw = np.asarray(raw_scores, dtype=float)
    mass = belief_to_mass(raw, budget)
    betp = pignistic(mass)
    ent = pignistic_entropy(betp)
    predicted = int(np.argmax(betp.probs))  # first max = lowest index
    return BeliefPrediction(
        frame=budget.frame,
        raw_scores=_as_readonly(raw),
        mass=mass,
        pignistic=betp,
        entropy_bits=ent,
        predicted_class=predicted,
        top_mass_set=top_mass_set(mass),
        degenerate=mass.degenerate,
    )


def nearest_class_in_top_set(pred: BeliefPrediction, true_class: int) -> int:
    """Member of the top mass set nearest the true class by nominal angle.

    Ties go to the member with the smaller absolute angle.
    """
    frame = pred.frame
    members = pred.top_mass_set.indices()
    if not members:
        raise BeliefError("top mass set is empty")
    true_angle = frame.angles_deg[true_class]
    return min(
        members,
        key=lambda i: (abs(frame.angles_deg[i] - true_angle),
                       abs(frame.angles_deg[i])),
    )


def merge_to_3class(value: Union[MassFunction, PignisticDist]) -> PignisticDist:
    """Collapse a 7-class distribution to (Left, Straight, Right).

    Mass functions are converted through the pignistic transform first;
    the three left classes sum into Left and the right ones into Right.
    """
    if isinstance(value, MassFunction):
        value = pignistic(value)
    frame = value.frame
    if frame.size != 3:
        merged = ClassFrame.three()
        probs = np.zeros(3)
        for i, name in enumerate(frame.names):
            if name.startswith("Left"):
                probs[merged.index("Left")] += value.probs[i]
            elif name.startswith("Right"):
                probs[merged.index("Right")] += value.probs[i]
            else:
                probs[merged.index("Straight")] += value.probs[i]
        return PignisticDist(merged, probs)
    return value
