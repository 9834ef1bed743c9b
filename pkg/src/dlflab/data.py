"""Synthetic spatial multi-label images.

Each label owns a fixed noise texture ("blob") rendered at a random
non-overlapping position whenever the label is present, over a zero
background plus Gaussian pixel noise. Placement metadata is kept so tests
can mask a label's region and measure how much each prediction drops.

Generation is deterministic: every sample derives its own RNG from
(master seed, split, index), so results do not depend on ordering or
parallelism, and train/test use disjoint seed domains.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dlt
from .errors import FormatError, PlacementError, ValidationError

_SPLIT_IDS = {"train": 0, "test": 1}


@dataclass
class GenSpec:
    """Everything that determines a dataset, and nothing else."""

    labels: int = 8
    height: int = 32
    width: int = 32
    channels: int = 1
    blob: int = 8
    pattern_seed: int = 7
    pi: list = field(default_factory=list)
    cooccur: list = field(default_factory=list)  # [label_a, label_b, boost]
    noise_std: float = 0.25
    n_train: int = 4000
    n_test: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.labels < 1:
            raise ValidationError(f"need at least one label, got {self.labels}")
        if self.blob > self.height or self.blob > self.width:
            raise PlacementError(
                f"{self.blob}x{self.blob} blobs cannot fit a "
                f"{self.height}x{self.width} image; use smaller blobs"
            )
        if self.channels < 1 or self.blob < 1:
            raise ValidationError("channels and blob size must be positive")
        if not self.pi:
            self.pi = [0.35] * self.labels
        if len(self.pi) != self.labels:
            raise ValidationError(f"pi has {len(self.pi)} entries for {self.labels} labels")
        if any(not 0.0 < p <= 1.0 for p in self.pi):
            raise ValidationError("every pi entry must lie in (0, 1]")
        for entry in self.cooccur:
            a, b, boost = entry
            if not (0 <= a < self.labels and 0 <= b < self.labels and 0.0 <= boost <= 1.0):
                raise ValidationError(f"bad co-occurrence entry {entry}")
        if self.n_train < 0 or self.n_test < 0:
            raise ValidationError("sample counts cannot be negative")

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "blob": self.blob,
            "pattern_seed": self.pattern_seed,
            "pi": list(self.pi),
            "cooccur": [list(c) for c in self.cooccur],
            "noise_std": self.noise_std,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown dataset spec keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LabeledSample:
    image: np.ndarray  # (channels, height, width) float32
    y: np.ndarray  # (labels,) float32 in {0,1}
    placements: dict  # label -> (row, col) of the rendered blob


def make_patterns(spec: GenSpec) -> np.ndarray:
    """Fixed per-label textures, identical for every occurrence of a label."""
    out = np.empty((spec.labels, spec.channels, spec.blob, spec.blob), dtype=np.float32)
    for j in range(spec.labels):
        rng = np.random.default_rng(np.random.SeedSequence([spec.pattern_seed, j]))
        out[j] = rng.uniform(0.4, 1.4, size=(spec.channels, spec.blob, spec.blob))
    return out


def _draw_labels(rng, spec: GenSpec) -> np.ndarray:
    y = (rng.random(spec.labels) < np.asarray(spec.pi)).astype(np.float32)
    for a, b, boost in spec.cooccur:
        if y[a] == 1 and y[b] == 0 and rng.random() < boost:
            y[b] = 1.0
    return y


def _place_blobs(rng, spec: GenSpec, present) -> dict:
    """Non-overlapping top-left corners by rejection sampling.

    Up to 100 placement rounds of up to 100 attempts per blob; dense label
    sets occasionally need a fresh round.
    """
    max_r = spec.height - spec.blob
    max_c = spec.width - spec.blob
    for _ in range(100):
        placed = {}
        ok = True
        for j in present:
            for _attempt in range(100):
                r = int(rng.integers(0, max_r + 1))
                c = int(rng.integers(0, max_c + 1))
                if all(
                    abs(r - r2) >= spec.blob or abs(c - c2) >= spec.blob
                    for r2, c2 in placed.values()
                ):
                    placed[j] = (r, c)
                    break
            else:
                ok = False
                break
        if ok:
            return placed
    raise PlacementError(
        f"could not place {len(present)} non-overlapping {spec.blob}x{spec.blob} "
        f"blobs in a {spec.height}x{spec.width} image; use smaller blobs"
    )


def generate_sample(spec: GenSpec, split: str, index: int, patterns=None) -> LabeledSample:
    if split not in _SPLIT_IDS:
        raise ValidationError(f"unknown split {split!r}")
    if patterns is None:
        patterns = make_patterns(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _SPLIT_IDS[split], index]))
    y = _draw_labels(rng, spec)
    present = [j for j in range(spec.labels) if y[j] == 1]
    placements = _place_blobs(rng, spec, present)
    canvas = np.zeros((spec.channels, spec.height, spec.width), dtype=np.float64)
    for j, (r, c) in placements.items():
        canvas[:, r : r + spec.blob, c : c + spec.blob] += patterns[j]
    if spec.noise_std > 0:
        canvas += rng.normal(0.0, spec.noise_std, size=canvas.shape)
    return LabeledSample(image=canvas.astype(np.float32), y=y, placements=placements)


def generate_split(spec: GenSpec, split: str) -> list:
    patterns = make_patterns(spec)
    count = spec.n_train if split == "train" else spec.n_test
    return [generate_sample(spec, split, i, patterns) for i in range(count)]


def mask_label_blob(sample: LabeledSample, label: int, blob: int) -> np.ndarray:
    """Copy of the image with label's blob region zeroed out."""
    if label not in sample.placements:
        raise ValidationError(f"label {label} was not rendered in this sample")
    r, c = sample.placements[label]
    masked = sample.image.copy()
    masked[:, r : r + blob, c : c + blob] = 0.0
    return masked


# -- on-disk layout: manifest.json, images/NNNNNN.dlt, labels.dlt -----------


def save_dataset(directory, samples, spec: GenSpec, split: str) -> None:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    index = []
    labels = np.zeros((len(samples), spec.labels), dtype=np.float32)
    for i, sample in enumerate(samples):
        name = f"images/{i:06d}.dlt"
        dlt.write_tensor(directory / name, sample.image)
        labels[i] = sample.y
        index.append(
            {
                "file": name,
                "placements": {str(j): list(rc) for j, rc in sample.placements.items()},
            }
        )
    dlt.write_tensor(directory / "labels.dlt", labels)
    manifest = {
        "version": 1,
        "split": split,
        "count": len(samples),
        "spec": spec.to_dict(),
        "samples": index,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_dataset(directory):
    """Read a dataset directory back into (samples, spec)."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{manifest_path}: missing manifest")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    for key in ("version", "count", "spec", "samples"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: missing key {key!r}")
    spec = GenSpec.from_dict(manifest["spec"])
    labels = dlt.read_tensor(directory / "labels.dlt")
    if labels.ndim != 2 or labels.shape[0] != manifest["count"]:
        raise ValidationError(
            f"{directory}: labels matrix {labels.shape} disagrees with "
            f"manifest count {manifest['count']}"
        )
    if labels.shape[1] != spec.labels:
        raise ValidationError(
            f"{directory}: labels matrix has {labels.shape[1]} columns, "
            f"spec declares {spec.labels} labels"
        )
    if len(manifest["samples"]) != manifest["count"]:
        raise ValidationError(f"{directory}: sample index length != count")
    samples = []
    for i, entry in enumerate(manifest["samples"]):
        image = dlt.read_tensor(directory / entry["file"])
        placements = {int(j): tuple(rc) for j, rc in entry["placements"].items()}
        samples.append(LabeledSample(image=image, y=labels[i], placements=placements))
    return samples, spec


def generate_dataset(spec: GenSpec, out_dir) -> dict:
    """Write train/ and test/ dataset directories; returns their paths."""
    out_dir = Path(out_dir)
    paths = {}
    for split in ("train", "test"):
        samples = generate_split(spec, split)
        target = out_dir / split
        save_dataset(target, samples, spec, split)
        paths[split] = target
    (out_dir / "spec.json").write_text(json.dumps(spec.to_dict(), indent=1))
    return paths
