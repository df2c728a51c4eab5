"""Procedural generator of labeled cone scenes and dataset manifests.

Standard scenes lay two cone rows along a constant-curvature arc whose chord
deviation at a fixed lookahead defines the curvature class. Uncertain scenes
come in three corruptions (random scatter, fallen cones, confusing
superpositions) and are test-only. Scenes rasterize to a 3-channel occupancy
grid that serves as the network input.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .beliefs import ClassFrame
from .config import config_hash, default_config

CONE_COLORS = ("blue", "yellow", "small-orange", "large-orange")
UNCERTAIN_CATEGORIES = ("random", "fallen", "confusing")

# Magnitude bands per severity; lower bound inclusive, boundary values
# belong to the harder class.
_BANDS = ((0.0, 15.0, "Straight"), (15.0, 35.0, "Easy"),
          (35.0, 60.0, "Medium"), (60.0, math.inf, "Hard"))

RASTER_MAGIC = b"TBRC"
RASTER_VERSION = 1


class DataError(ValueError):
    """Invalid dataset request, file, or configuration."""


@dataclass(frozen=True)
class Cone:
    x: float
    y: float
    color: str = "blue"
    fallen: bool = False

    def __post_init__(self):
        if self.color not in CONE_COLORS:
            raise DataError(f"unknown cone color {self.color!r}")


@dataclass(frozen=True)
class ConeScene:
    """Bird's-eye cone layout in the vehicle frame (x forward, y left)."""

    cones: tuple[Cone, ...]
    deviation_angle_deg: float
    label: str  # curvature class name or an uncertain-category tag

    @property
    def is_uncertain(self) -> bool:
        return self.label in UNCERTAIN_CATEGORIES

    def to_json_obj(self) -> dict:
        return {
            "label": self.label,
            "deviation_angle_deg": self.deviation_angle_deg,
            "cones": [
                {"x": c.x, "y": c.y, "color": c.color, "fallen": c.fallen}
                for c in self.cones
            ],
        }

    @staticmethod
    def from_json_obj(obj: dict) -> "ConeScene":
        cones = tuple(
            Cone(float(c["x"]), float(c["y"]), c["color"], bool(c["fallen"]))
            for c in obj["cones"]
        )
        return ConeScene(cones, float(obj["deviation_angle_deg"]), obj["label"])


def classify_angle(theta_deg: float) -> str:
    """Curvature class of a signed deviation angle (negative = left).

    |theta| < 15 is Straight, [15, 35) Easy, [35, 60) Medium, >= 60 Hard;
    boundary values belong to the harder class.
    """
    if abs(theta_deg) > 120.0:
        raise DataError(f"deviation angle {theta_deg} outside generator range")
    mag = abs(theta_deg)
    for lo, hi, severity in _BANDS:
        if lo <= mag < hi:
            break
    if severity == "Straight":
        return "Straight"
    side = "Left" if theta_deg < 0 else "Right"
    return f"{side}-{severity}"


def merge_label(label: str) -> str:
    """7-class label merged to its 3-class direction."""
    if label.startswith("Left"):
        return "Left"
    if label.startswith("Right"):
        return "Right"
    return label


def severity_of(label: str) -> str:
    """Severity component of a class label (Straight/Easy/Medium/Hard)."""
    return label.split("-")[1] if "-" in label else label


def _angle_band(class_name: str) -> tuple[float, float, float]:
    """(lo, hi, sign) magnitude band for sampling a class's angle."""
    severity = severity_of(class_name)
    bands = {"Straight": (0.0, 15.0), "Easy": (15.0, 35.0),
             "Medium": (35.0, 60.0), "Hard": (60.0, 100.0)}
    if severity not in bands:
        raise DataError(f"unknown class {class_name!r}")
    lo, hi = bands[severity]
    sign = -1.0 if class_name.startswith("Left") else 1.0
    return lo, hi, sign


def sample_angle_for_class(class_name: str, rng: np.random.Generator,
                           hard_max: float = 100.0,
                           boundary_bias: float = 0.0,
                           boundary_width: float = 4.0) -> float:
    """Angle inside the class band, optionally biased toward band edges.

    With probability `boundary_bias` the magnitude is drawn within
    `boundary_width` of a band edge (clipped inside the band), producing
    the near-boundary samples that make neighboring severities genuinely
    confusable.
    """
    lo, hi, sign = _angle_band(class_name)
    if severity_of(class_name) == "Hard":
        hi = hard_max
    if boundary_bias > 0 and rng.uniform() < boundary_bias:
        # class boundaries only: 0 and the open hard end are not edges
        edges = [e for e in (lo, hi) if e not in (0.0, hard_max)]
        edge = edges[0] if len(edges) == 1 else edges[int(rng.integers(0, 2))]
        half = boundary_width / 2.0
        mag = float(np.clip(rng.uniform(edge - half, edge + half),
                            lo, np.nextafter(hi, lo)))
    else:
        mag = float(rng.uniform(lo, hi))
    if class_name == "Straight":
        sign = -1.0 if rng.uniform() < 0.5 else 1.0
    return sign * mag


def curvature_for_angle(theta_deg: float, lookahead_m: float) -> float:
    """Signed arc curvature whose chord at the lookahead deviates by theta.

    For an arc through the origin tangent to +x, the chord angle at
    arclength s is k*s/2, so k = -2*theta/lookahead (left turns bend +y,
    negative deviation).
    """
    return -2.0 * math.radians(theta_deg) / lookahead_m


def _arc_point(k: float, s: float) -> tuple[float, float, float]:
    """(x, y, heading) at arclength s on the arc of curvature k."""
    if abs(k) < 1e-9:
        return s, 0.0, 0.0
    psi = k * s
    return math.sin(psi) / k, (1.0 - math.cos(psi)) / k, psi


def generate_scene(theta_deg: Optional[float] = None,
                   class_name: Optional[str] = None,
                   seed: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None,
                   cfg: Optional[dict] = None) -> ConeScene:
    """Standard two-row cone scene for a deviation angle or a class.

    Exactly one of `theta_deg` / `class_name` selects the geometry; with a
    class the angle is sampled inside its band. Cones are jittered by the
    configured sigma and clamped to x >= 0.
    """
    cfg = cfg or default_config()
    tg = cfg["trackgen"]
    if rng is None:
        rng = np.random.default_rng(seed)
    if theta_deg is None:
        if class_name is None:
            raise DataError("need theta_deg or class_name")
        theta_deg = sample_angle_for_class(
            class_name, rng,
            hard_max=tg["hard_max_angle_deg"],
            boundary_bias=float(tg.get("boundary_bias", 0.0)),
            boundary_width=float(tg.get("boundary_width_deg", 4.0)))
    label = classify_angle(theta_deg)
    if class_name is not None and label != class_name:
        raise DataError(f"angle {theta_deg} is {label}, not {class_name}")

    lane = tg["lane_width_m"]
    k = curvature_for_angle(theta_deg, tg["lookahead_m"])
    s0 = 2.0
    s_max = 18.0 if abs(k) < 1e-9 else min(18.0, 0.95 * math.pi / abs(k))
    n_pairs = int(round((s_max - s0) / tg["cone_spacing_m"])) + 1
    n_pairs = int(np.clip(n_pairs, tg["min_pairs"], tg["max_pairs"]))
    sigma = tg["jitter_sigma_m"]

    dropout = float(tg.get("cone_dropout_p", 0.0))
    cones: list[Cone] = []
    for s in np.linspace(s0, s_max, n_pairs):
        cx, cy, psi = _arc_point(k, float(s))
        nx, ny = -math.sin(psi), math.cos(psi)
        for color, side in (("blue", 1.0), ("yellow", -1.0)):
            x = cx + side * (lane / 2.0) * nx + float(rng.normal(0.0, sigma))
            y = cy + side * (lane / 2.0) * ny + float(rng.normal(0.0, sigma))
            if dropout > 0 and rng.uniform() < dropout:
                continue  # occluded / missed detection
            cones.append(Cone(max(x, 0.0), y, color, False))
    if not cones:
        # pathological dropout draw; keep at least the nearest pair
        cx, cy, psi = _arc_point(k, s0)
        nx, ny = -math.sin(psi), math.cos(psi)
        for color, side in (("blue", 1.0), ("yellow", -1.0)):
            cones.append(Cone(max(cx + side * (lane / 2.0) * nx, 0.0),
                              cy + side * (lane / 2.0) * ny, color, False))
    return ConeScene(tuple(cones), float(theta_deg), label)


def generate_uncertain(category: str,
                       seed: Optional[int] = None,
                       rng: Optional[np.random.Generator] = None,
                       cfg: Optional[dict] = None) -> ConeScene:
    """Uncertain test-only scene: random scatter, fallen cones, or a
    confusing superposition of opposite-direction layouts."""
    cfg = cfg or default_config()
    if category not in UNCERTAIN_CATEGORIES:
        raise DataError(f"unknown uncertain category {category!r}")
    if rng is None:
        rng = np.random.default_rng(seed)

    if category == "random":
        n = int(rng.integers(12, 29))
        cones = []
        for _ in range(n):
            color = CONE_COLORS[int(rng.choice(4, p=[0.45, 0.45, 0.05, 0.05]))]
            cones.append(Cone(
                float(rng.uniform(0.3, 19.7)),
                float(rng.uniform(-9.7, 9.7)),
                color,
                bool(rng.uniform() < 0.08),
            ))
        return ConeScene(tuple(cones), 0.0, "random")

    if category == "fallen":
        frame = ClassFrame.seven()
        base_class = frame.names[int(rng.integers(0, frame.size))]
        base = generate_scene(class_name=base_class, rng=rng, cfg=cfg)
        cones = list(base.cones)
        n_fallen = max(1, int(round(float(rng.uniform(0.3, 0.7)) * len(cones))))
        which = rng.choice(len(cones), size=n_fallen, replace=False)
        for i in which:
            c = cones[i]
            shift = float(rng.uniform(0.3, 1.2)) * (1.0 if rng.uniform() < 0.5 else -1.0)
            cones[i] = Cone(c.x, c.y + shift, c.color, True)
        return ConeScene(tuple(cones), base.deviation_angle_deg, "fallen")

    # confusing: one left and one right turn superposed
    mag_left = float(rng.uniform(20.0, 90.0))
    mag_right = float(rng.uniform(20.0, 90.0))
    left = generate_scene(theta_deg=-mag_left, rng=rng, cfg=cfg)
    right = generate_scene(theta_deg=mag_right, rng=rng, cfg=cfg)
    return ConeScene(left.cones + right.cones, 0.0, "confusing")


def rasterize(scene: ConeScene, cfg: Optional[dict] = None) -> np.ndarray:
    """Flattened 3-channel occupancy grid (blue, yellow, fallen).

    Pure function of the scene: cones outside the window are dropped,
    fallen cones appear only in the fallen channel.
    """
    cfg = cfg or default_config()
    grid = int(cfg["raster"]["grid"])
    window = float(cfg["raster"]["window_m"])
    cell = window / grid
    out = np.zeros((3, grid, grid))
    for cone in scene.cones:
        if not (0.0 <= cone.x < window and -window / 2 <= cone.y < window / 2):
            continue
        i = int(cone.x / cell)
        j = int((cone.y + window / 2) / cell)
        if cone.fallen:
            ch = 2
        elif cone.color == "blue":
            ch = 0
        elif cone.color == "yellow":
            ch = 1
        else:
            continue  # standing orange markers carry no lane information
        out[ch, i, j] = 1.0
    return out.reshape(-1)


def feature_length(cfg: Optional[dict] = None) -> int:
    cfg = cfg or default_config()
    return 3 * int(cfg["raster"]["grid"]) ** 2


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """In-memory dataset: rasterized features plus labels and split tags."""

    frame: ClassFrame
    X: np.ndarray            # (N, D) features
    y: np.ndarray            # class index, -1 for uncertain samples
    ids: list[str]
    labels: list[str]        # class name or uncertain category
    splits: list[str]        # train | val | test | uncertain

    def indices(self, split: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.splits) if s == split],
                        dtype=int)

    def split_arrays(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(split)
        return self.X[idx], self.y[idx]

    @property
    def n_samples(self) -> int:
        return len(self.ids)


def apportion(total: int, weights: Sequence[float]) -> list[int]:
    """Integer apportionment by largest remainder; deterministic ties."""
    weights = np.asarray(weights, dtype=float)
    if total < 0 or np.any(weights < 0) or weights.sum() <= 0:
        raise DataError("invalid apportionment request")
    ideal = weights / weights.sum() * total
    counts = np.floor(ideal).astype(int)
    remainder = ideal - counts
    short = total - int(counts.sum())
    order = sorted(range(len(weights)), key=lambda i: (-remainder[i], i))
    for i in order[:short]:
        counts[i] += 1
    return counts.tolist()


def _split_plan(cfg: dict, frame: ClassFrame) -> dict[str, dict[str, int]]:
    """Per-class counts for train/val/test hitting the exact split totals."""
    tg = cfg["trackgen"]
    counts_cfg = tg["counts"]
    totals = {k: int(counts_cfg[k]) for k in ("train", "val", "test")}
    n_standard = sum(totals.values())

    weights = []
    weight_map = tg["class_weights"]
    for name in ClassFrame.seven().names:
        weights.append(float(weight_map.get(name, 1.0)))
    class_counts = apportion(n_standard, weights)
    for name, count in zip(ClassFrame.seven().names, class_counts):
        if count < 1:
            raise DataError(f"class {name} has zero samples under this config")

    plan: dict[str, dict[str, int]] = {}
    assigned = {name: 0 for name in ClassFrame.seven().names}
    for split in ("train", "val"):
        share = [c * totals[split] / n_standard for c in class_counts]
        counts = apportion(totals[split], share)
        for name, c in zip(ClassFrame.seven().names, counts):
            plan.setdefault(name, {})[split] = c
            assigned[name] += c
    for name, total_k in zip(ClassFrame.seven().names, class_counts):
        plan[name]["test"] = total_k - assigned[name]
        if plan[name]["test"] < 0:
            raise DataError(f"infeasible stratification for class {name}")
    return plan


def synthesize_dataset(cfg: Optional[dict] = None,
                       seed: int = 0,
                       mode: int = 7) -> tuple[Dataset, dict, list[ConeScene]]:
    """Generate the full dataset in memory: (dataset, manifest, scenes).

    Standard samples are stratified into train/val/test; uncertain samples
    are test-only and never share a split with training data.
    """
    cfg = cfg or default_config()
    if mode not in (7, 3):
        raise DataError(f"classes mode must be 7 or 3, got {mode}")
    frame = ClassFrame.for_mode(mode)
    plan = _split_plan(cfg, ClassFrame.seven())
    unc_mix = cfg["trackgen"]["uncertain_mix"]
    n_uncertain_cfg = int(cfg["trackgen"]["counts"]["uncertain"])
    if sum(int(v) for v in unc_mix.values()) != n_uncertain_cfg:
        raise DataError("uncertain_mix does not sum to the uncertain count")

    n_standard = sum(sum(v.values()) for v in plan.values())
    n_uncertain = n_uncertain_cfg
    master = np.random.SeedSequence(seed)
    children = master.spawn(n_standard + n_uncertain)

    scenes: list[ConeScene] = []
    ids: list[str] = []
    labels: list[str] = []
    splits: list[str] = []
    child_iter = iter(children)

    counter = 0
    for name in ClassFrame.seven().names:
        for split in ("train", "val", "test"):
            for _ in range(plan[name][split]):
                rng = np.random.default_rng(next(child_iter))
                scenes.append(generate_scene(class_name=name, rng=rng, cfg=cfg))
                ids.append(f"std-{counter:05d}")
                labels.append(merge_label(name) if mode == 3 else name)
                splits.append(split)
                counter += 1

    counter = 0
    for category in UNCERTAIN_CATEGORIES:
        for _ in range(int(unc_mix[category])):
            rng = np.random.default_rng(next(child_iter))
            scenes.append(generate_uncertain(category, rng=rng, cfg=cfg))
            ids.append(f"unc-{counter:05d}")
            labels.append(category)
            splits.append("uncertain")
            counter += 1

    X = np.stack([rasterize(s, cfg) for s in scenes])
    y = np.array([frame.index(lab) if lab not in UNCERTAIN_CATEGORIES else -1
                  for lab in labels], dtype=int)
    dataset = Dataset(frame, X, y, ids, labels, splits)

    histogram: dict[str, int] = {}
    for lab, split in zip(labels, splits):
        if split != "uncertain":
            histogram[lab] = histogram.get(lab, 0) + 1
    unc_histogram = {c: int(unc_mix[c]) for c in UNCERTAIN_CATEGORIES}
    manifest = {
        "format_version": 1,
        "seed": seed,
        "config_hash": config_hash(cfg),
        "classes_mode": mode,
        "counts": {
            "train": splits.count("train"),
            "val": splits.count("val"),
            "test": splits.count("test"),
            "uncertain": splits.count("uncertain"),
        },
        "class_histogram": dict(sorted(histogram.items())),
        "uncertain_histogram": unc_histogram,
        "samples": [
            {"id": i, "split": s, "label": lab,
             "deviation_angle_deg": scene.deviation_angle_deg,
             "file": f"samples/{i}.json"}
            for i, s, lab, scene in zip(ids, splits, labels, scenes)
        ],
    }
    return dataset, manifest, scenes


def build_dataset(out_dir: str | Path,
                  cfg: Optional[dict] = None,
                  seed: int = 0,
                  mode: int = 7) -> dict:
    """Write sample files, manifest, and raster cache; returns the manifest."""
    cfg = cfg or default_config()
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    dataset, manifest, scenes = synthesize_dataset(cfg, seed=seed, mode=mode)

    for sample, scene in zip(manifest["samples"], scenes):
        obj = {"id": sample["id"], **scene.to_json_obj()}
        with open(out / sample["file"], "w", encoding="utf-8") as fh:
            json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    write_raster_cache(out / "raster.bin", dataset.X, cfg)
    return manifest


def write_raster_cache(path: str | Path, X: np.ndarray, cfg: dict) -> None:
    """Flat binary cache: magic, version, count, channels, grid, float32 data."""
    grid = int(cfg["raster"]["grid"])
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<IIII", RASTER_VERSION, X.shape[0], 3, grid))
        fh.write(X.astype(np.float32).tobytes())


def read_raster_cache(path: str | Path, cfg: dict) -> np.ndarray:
    grid = int(cfg["raster"]["grid"])
    with open(path, "rb") as fh:
        if fh.read(4) != RASTER_MAGIC:
            raise DataError(f"{path} is not a raster cache")
        version, count, channels, file_grid = struct.unpack("<IIII", fh.read(16))
        if version != RASTER_VERSION:
            raise DataError(f"unsupported raster cache version {version}")
        if channels != 3 or file_grid != grid:
            raise DataError("raster cache dims do not match config")
        data = np.frombuffer(fh.read(), dtype=np.float32)
    expected = count * channels * grid * grid
    if data.size != expected:
        raise DataError("raster cache truncated")
    return data.reshape(count, channels * grid * grid).astype(float)


def load_dataset(data_dir: str | Path, cfg: Optional[dict] = None) -> Dataset:
    """Dataset from a directory written by `build_dataset`."""
    cfg = cfg or default_config()
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json in {data_dir}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    frame = ClassFrame.for_mode(int(manifest["classes_mode"]))

    ids = [s["id"] for s in manifest["samples"]]
    labels = [s["label"] for s in manifest["samples"]]
    splits = [s["split"] for s in manifest["samples"]]

    cache = data_dir / "raster.bin"
    if cache.exists():
        X = read_raster_cache(cache, cfg)
        if X.shape[0] != len(ids):
            raise DataError("raster cache count does not match manifest")
    else:
        rows = []
        for sample in manifest["samples"]:
            with open(data_dir / sample["file"], "r", encoding="utf-8") as fh:
                scene = ConeScene.from_json_obj(json.load(fh))
            rows.append(rasterize(scene, cfg))
        X = np.stack(rows)

    y = np.array([frame.index(lab) if lab not in UNCERTAIN_CATEGORIES else -1
                  for lab in labels], dtype=int)
    return Dataset(frame, X, y, ids, labels, splits)
