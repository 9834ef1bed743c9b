"""The two feature mechanisms under study.

``DlflModel`` disentangles one feature per label: learnable semantic
queries attend over the spatial positions of a patch-embedded feature map
(semantic spatial cross-attention), aggregate the attended embeddings
into per-label feature columns, and classify each column against its own
unit-norm classifier at a fixed logit scale. Stages can be cascaded, each
stage re-using the previous stage's label features as queries.

``OfmlModel`` is the pooled baseline: the same backbone, one global
average-pooled feature shared by every label's classifier.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dlt
from . import tensor as T
from .errors import ConfigurationError, FormatError, ValidationError
from .tensor import Tensor
from .theory import vector_angle_degrees

MECHANISMS = ("ofml", "dlfl")


@dataclass
class SscaConfig:
    """Shapes and scales shared by both mechanisms.

    C: channel width of the backbone feature map; M: number of labels;
    S: cascaded attention stages; gamma: logit scale of the cosine
    classifier; embed_dim: width of the query/key embeddings (defaults
    to C); patch: backbone patch size; C_in: input image channels.
    """

    C: int = 32
    M: int = 8
    S: int = 1
    gamma: float = 30.0
    embed_dim: int | None = None
    patch: int = 4
    C_in: int = 1

    def __post_init__(self):
        if self.embed_dim is None:
            self.embed_dim = self.C
        for name in ("C", "M", "S", "embed_dim", "patch", "C_in"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.gamma <= 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")
        if self.S > 1 and self.embed_dim != self.C:
            raise ConfigurationError(
                f"cascading needs embed_dim == C so stage features can serve as "
                f"queries; got embed_dim={self.embed_dim}, C={self.C}"
            )

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "M": self.M,
            "S": self.S,
            "gamma": self.gamma,
            "embed_dim": self.embed_dim,
            "patch": self.patch,
            "C_in": self.C_in,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SscaConfig":
        return cls(**d)


def _kaiming(rng, shape, fan_in) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """Non-overlapping patches of a (C_in, H, W) image as columns.

    Returns (C_in*patch*patch, HW) with patches ordered row-major over the
    patch grid.
    """
    cin, h, w = image.shape
    gh, gw = h // patch, w // patch
    x = image.reshape(cin, gh, patch, gw, patch)
    x = x.transpose(1, 3, 0, 2, 4)
    return x.reshape(gh * gw, cin * patch * patch).T.copy()


def cosine_logits(features: Tensor, weights: Tensor, gamma: float) -> Tensor:
    """Per-column scaled cosine: gamma * cos(angle(features_j, weights_j)).

    Both operands are L2-normalized column-wise inside the op, so the
    classifier always acts with unit norm and only directions matter.
    """
    fn = T.l2_normalize(features, axis=0)
    wn = T.l2_normalize(weights, axis=0)
    return T.scale(T.tensor_sum(fn * wn, axis=0), gamma)


def multi_stage_bce(stage_logits, targets_row: Tensor) -> Tensor:
    """Sum of per-stage BCE losses; each stage has its own classifier."""
    total = None
    for logits in stage_logits:
        term = T.bce_with_logits(logits.reshape((1, logits.size)), targets_row)
        total = term if total is None else total + term
    return total


class _PatchBackbone:
    """Patch embedding + ReLU; the stand-in for a real feature extractor."""

    def _init_backbone(self, cfg: SscaConfig, rng) -> dict:
        pdim = cfg.C_in * cfg.patch * cfg.patch
        return {
            "embed.weight": T.parameter(_kaiming(rng, (cfg.C, pdim), pdim)),
            "embed.bias": T.parameter(np.zeros((cfg.C, 1), dtype=np.float32)),
        }

    def backbone_forward(self, image) -> Tensor:
        """(C_in, H, W) image -> (C, HW) feature map."""
        cfg = self.cfg
        img = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
        if img.ndim != 3 or img.shape[0] != cfg.C_in:
            raise ConfigurationError(
                f"expected a ({cfg.C_in}, H, W) image, got shape {img.shape}"
            )
        _, h, w = img.shape
        if h % cfg.patch or w % cfg.patch:
            raise ConfigurationError(
                f"image size {h}x{w} not divisible by patch size {cfg.patch}"
            )
        cols = Tensor(patchify(img, cfg.patch))
        hw = cols.shape[1]
        pre = self.params["embed.weight"] @ cols
        bias = self.params["embed.bias"] @ T.ones((1, hw))
        return T.relu(pre + bias)


class DlflModel(_PatchBackbone):
    """Cascaded semantic spatial cross-attention with cosine classifiers."""

    mechanism = "dlfl"

    def __init__(self, cfg: SscaConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        self.params = self._init_backbone(cfg, rng)
        self.params["queries"] = T.parameter(_kaiming(rng, (cfg.C, cfg.M), cfg.C))
        for s in range(cfg.S):
            self.params[f"stage{s}.theta"] = T.parameter(
                _kaiming(rng, (cfg.embed_dim, cfg.C), cfg.C)
            )
            self.params[f"stage{s}.phi"] = T.parameter(
                _kaiming(rng, (cfg.embed_dim, cfg.C), cfg.C)
            )
            self.params[f"stage{s}.classifier"] = T.parameter(
                _kaiming(rng, (cfg.embed_dim, cfg.M), cfg.embed_dim)
            )

    def parameters(self) -> dict:
        return self.params

    def ssca_forward(self, queries: Tensor, feature_map: Tensor, stage: int = 0):
        """One attention stage: (attention M x HW, label features E x M).

        The same embedded feature map serves as attention keys and as the
        aggregation values; scores are scaled by 1/sqrt(C) before the
        row-wise softmax.
        """
        th = self.params[f"stage{stage}.theta"] @ queries
        ph = self.params[f"stage{stage}.phi"] @ feature_map
        scores = T.scale(T.transpose(th) @ ph, 1.0 / math.sqrt(self.cfg.C))
        attention = T.softmax_rows(scores)
        features = ph @ T.transpose(attention)
        return attention, features

    def cascade_forward(self, image):
        """All stages' label features (and attention maps) for one image.

        Stage 0 reads the shared learnable queries; stage s > 0 reads the
        previous stage's label features as its queries.
        """
        fmap = self.backbone_forward(image)
        queries = self.params["queries"]
        feats, attns = [], []
        for s in range(self.cfg.S):
            attention, features = self.ssca_forward(queries, fmap, s)
            feats.append(features)
            attns.append(attention)
            queries = features
        return feats, attns

    def stage_logits(self, image):
        feats, _ = self.cascade_forward(image)
        return [
            cosine_logits(f, self.params[f"stage{s}.classifier"], self.cfg.gamma)
            for s, f in enumerate(feats)
        ]

    def predict_proba(self, image) -> np.ndarray:
        """Sigmoid of the stage-averaged logits."""
        logits = self.stage_logits(image)
        avg = logits[0]
        for extra in logits[1:]:
            avg = avg + extra
        return T.sigmoid(T.scale(avg, 1.0 / len(logits))).data.copy()

    def label_feature_vectors(self, image):
        """Final-stage label features and classifier columns (as arrays)."""
        feats, _ = self.cascade_forward(image)
        last = self.cfg.S - 1
        return feats[-1].data.copy(), self.params[f"stage{last}.classifier"].data.copy()


class OfmlModel(_PatchBackbone):
    """Pooled shared-feature baseline with the same backbone and head."""

    mechanism = "ofml"

    def __init__(self, cfg: SscaConfig, seed: int = 0, normalized: bool = True):
        self.cfg = cfg
        self.normalized = normalized
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        self.params = self._init_backbone(cfg, rng)
        self.params["classifier"] = T.parameter(_kaiming(rng, (cfg.C, cfg.M), cfg.C))

    def parameters(self) -> dict:
        return self.params

    def forward(self, image):
        """(pooled feature (C,), logits (M,)) for one image."""
        fmap = self.backbone_forward(image)
        pooled = T.global_avg_pool(fmap)
        w = self.params["classifier"]
        if self.normalized:
            col = pooled.reshape((self.cfg.C, 1))
            logits = cosine_logits(
                col @ T.ones((1, self.cfg.M)), w, self.cfg.gamma
            )
        else:
            logits = (T.transpose(w) @ pooled.reshape((self.cfg.C, 1))).reshape((self.cfg.M,))
        return pooled, logits

    def stage_logits(self, image):
        return [self.forward(image)[1]]

    def predict_proba(self, image) -> np.ndarray:
        return T.sigmoid(self.stage_logits(image)[0]).data.copy()

    def label_feature_vectors(self, image):
        """The pooled feature repeated per label, plus classifier columns."""
        pooled, _ = self.forward(image)
        f = pooled.data.copy()
        return np.repeat(f[:, None], self.cfg.M, axis=1), self.params["classifier"].data.copy()


def predict_labels(proba: np.ndarray) -> np.ndarray:
    """Binary decisions; probability exactly 0.5 predicts positive."""
    return (np.asarray(proba) >= 0.5).astype(np.float32)


def feature_classifier_angles(features, weights) -> np.ndarray:
    """Degrees between label feature(s) and each classifier column.

    A 1-D feature (the pooled case) is compared against every column; a
    2-D feature matrix is compared column-to-column.
    """
    w = np.asarray(weights, dtype=np.float64)
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        return np.array([vector_angle_degrees(f, w[:, j]) for j in range(w.shape[1])])
    return np.array([vector_angle_degrees(f[:, j], w[:, j]) for j in range(w.shape[1])])


def build_model(cfg: SscaConfig, mechanism: str, seed: int = 0, normalized: bool = True):
    if mechanism == "dlfl":
        return DlflModel(cfg, seed=seed)
    if mechanism == "ofml":
        return OfmlModel(cfg, seed=seed, normalized=normalized)
    raise ValidationError(f"unknown mechanism {mechanism!r}; pick one of {MECHANISMS}")


# -- checkpoints: a directory of DLT1 files plus manifest.json --------------


def save_checkpoint(model, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = {}
    for name, tensor in model.parameters().items():
        fname = f"{name}.dlt"
        dlt.write_tensor(directory / fname, tensor.data)
        params[name] = fname
    config = model.cfg.to_dict()
    config["mechanism"] = model.mechanism
    if model.mechanism == "ofml":
        config["normalized"] = bool(model.normalized)
    manifest = {"version": 1, "config": config, "params": params}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_checkpoint(directory, expect_mechanism: str | None = None):
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{manifest_path}: missing checkpoint manifest")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    for key in ("version", "config", "params"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: missing key {key!r}")
    config = dict(manifest["config"])
    mechanism = config.pop("mechanism", None)
    if mechanism not in MECHANISMS:
        raise FormatError(f"{manifest_path}: unknown mechanism {mechanism!r}")
    if expect_mechanism is not None and mechanism != expect_mechanism:
        raise ValidationError(
            f"checkpoint holds a {mechanism!r} model but {expect_mechanism!r} was requested"
        )
    normalized = config.pop("normalized", True)
    cfg = SscaConfig.from_dict(config)
    model = build_model(cfg, mechanism, normalized=normalized)
    for name, tensor in model.parameters().items():
        if name not in manifest["params"]:
            raise FormatError(f"{manifest_path}: missing parameter entry {name!r}")
        arr = dlt.read_tensor(directory / manifest["params"][name])
        if arr.shape != tensor.data.shape:
            raise ValidationError(
                f"parameter {name}: checkpoint shape {arr.shape} != model shape "
                f"{tensor.data.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"{directory / manifest['params'][name]}: non-finite values")
        tensor.data = arr
    return model
