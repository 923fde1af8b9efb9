"""Project configuration: one canonical JSON document.

The document is strict both ways: unknown keys anywhere in the tree are
rejected on load, and every default is materialized on write, so a saved
config always shows the full effective state.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .augmentation import AugmentConfig, SyntheticCorpusConfig
from .dtp import DtpConfig
from .embedder import EmbedNetConfig, TrainConfig
from .embeddings import (
    DIGITS_AND_LOWERCASE,
    Alphabet,
    DctowConfig,
    EmbeddingConfig,
    PhocConfig,
)
from .errors import ConfigError
from .evaluation import EvalConfig
from .image_ops import StructuringElement
from .index import QueryConfig

ENV_CONFIG = "WORDSPOT_CONFIG"

DEFAULT_VOCABULARY = (
    "apple", "bird", "cloud", "delta", "eagle", "frost", "grape", "house",
    "igloo", "jolly", "knife", "lemon", "mango", "night", "ocean", "piano",
    "queen", "river", "stone", "tiger", "umbra", "vivid", "whale", "xenon",
    "yacht", "zebra", "amber", "blaze", "crisp", "dune", "ember", "fjord",
    "glyph", "honey", "ivory", "jade", "kiosk", "lunar", "moss", "nectar",
    "onyx", "pearl", "quartz", "raven", "silk", "thorn", "ultra", "velvet",
    "willow", "zephyr",
)

DEFAULTS: dict = {
    "paths": {
        "corpus": "corpus",
        "model": "model.wspt",
        "index": "index.wsix",
    },
    "embedding": {
        "kind": "dctow",
        "levels": [1, 2, 3, 4, 5],
        "r": 3,
        "alphabet": DIGITS_AND_LOWERCASE,
    },
    "dtp": {
        "mean_multiples": [0.7, 0.8, 0.9],
        "kernel_widths": [1, 3, 5, 7, 9, 11, 15, 21],
        "kernel_heights": [1, 3, 5],
        "min_area": 24,
        "pad": 0,
        "dedup_iou": 0.95,
    },
    "query": {"t_s": 0.5, "t_nms": 0.4, "k": 25},
    "eval": {
        "overlap_thresholds": [0.25, 0.5],
        "stopwords": [],
        "grid_t_s": [0.3, 0.5, 0.7, 0.9],
        "grid_t_nms": [0.25, 0.4, 0.6],
    },
    "train": {
        "loss": "cosine",
        "max_iters": 5000,
        "batch": 64,
        "val_split": 0.1,
        "eval_every": 1000,
        "lr": 1e-3,
        "schedule_every": 10000,
        "hidden_dims": [256, 256],
    },
    "augment": {
        "shear_range": 12.0,
        "morph_elements": [
            ["dilate", 1], ["dilate", 3], ["dilate", 5],
            ["erode", 1], ["erode", 3], ["erode", 5],
        ],
        "canvas_noise_sigma": 4.0,
        "background_interval": 10.0,
        "row_gap": 12,
        "word_gap": 16,
        "margin": 24,
    },
    "synth": {
        "vocabulary": list(DEFAULT_VOCABULARY),
        "scale": 3,
        "pages": 4,
        "words_per_page": 40,
        "canvas_w": 760,
        "canvas_h": 560,
    },
    "long_side": None,
    "seed": 0,
}


def _merge_strict(defaults, given, path=""):
    """Overlay ``given`` onto ``defaults``, refusing keys not in defaults."""
    if not isinstance(given, dict):
        raise ConfigError(f"expected an object at {path or '<root>'}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict):
            out[key] = _merge_strict(defaults[key], value, path + key + ".")
        else:
            out[key] = value
    return out


class ProjectConfig:
    """Typed access over the merged document."""

    def __init__(self, doc: dict | None = None):
        self.doc = _merge_strict(DEFAULTS, doc or {})

    # -- sections as dataclass configs ------------------------------------

    @property
    def paths(self) -> dict:
        return self.doc["paths"]

    @property
    def seed(self) -> int:
        return self.doc["seed"]

    @property
    def long_side(self) -> int | None:
        return self.doc["long_side"]

    def alphabet(self) -> Alphabet:
        return Alphabet(self.doc["embedding"]["alphabet"])

    def embed_config(self) -> EmbeddingConfig:
        e = self.doc["embedding"]
        if e["kind"] == "phoc":
            return PhocConfig(levels=tuple(e["levels"]), alphabet=self.alphabet())
        if e["kind"] == "dctow":
            return DctowConfig(r=e["r"], alphabet=self.alphabet())
        raise ConfigError(f"unknown embedding kind {e['kind']!r}")

    def dtp_config(self) -> DtpConfig:
        d = self.doc["dtp"]
        kernels = tuple(
            StructuringElement(w, h)
            for h in d["kernel_heights"]
            for w in d["kernel_widths"]
        )
        return DtpConfig(
            mean_multiples=tuple(d["mean_multiples"]),
            kernels=kernels,
            min_area=d["min_area"],
            pad=d["pad"],
            dedup_iou=d["dedup_iou"],
        )

    def query_config(self) -> QueryConfig:
        q = self.doc["query"]
        return QueryConfig(t_s=q["t_s"], t_nms=q["t_nms"], k=q["k"])

    def eval_config(self) -> EvalConfig:
        e = self.doc["eval"]
        return EvalConfig(
            overlap_thresholds=tuple(e["overlap_thresholds"]),
            stopwords=tuple(e["stopwords"]),
            grid_t_s=tuple(e["grid_t_s"]),
            grid_t_nms=tuple(e["grid_t_nms"]),
        )

    def train_config(self) -> TrainConfig:
        t = self.doc["train"]
        return TrainConfig(
            loss=t["loss"],
            max_iters=t["max_iters"],
            batch=t["batch"],
            val_split=t["val_split"],
            eval_every=t["eval_every"],
            lr=t["lr"],
            schedule_every=t["schedule_every"],
            seed=self.seed,
        )

    def net_config(self) -> EmbedNetConfig:
        return EmbedNetConfig(
            hidden_dims=tuple(self.doc["train"]["hidden_dims"]),
            out_dim=self.embed_config().dim,
            seed=self.seed,
        )

    def augment_config(self, seed: int | None = None) -> AugmentConfig:
        a = self.doc["augment"]
        return AugmentConfig(
            shear_range=a["shear_range"],
            morph_elements=tuple((op, size) for op, size in a["morph_elements"]),
            canvas_noise_sigma=a["canvas_noise_sigma"],
            background_interval=a["background_interval"],
            row_gap=a["row_gap"],
            word_gap=a["word_gap"],
            margin=a["margin"],
            seed=self.seed if seed is None else seed,
        )

    def synth_config(self) -> SyntheticCorpusConfig:
        s = self.doc["synth"]
        return SyntheticCorpusConfig(
            vocabulary=tuple(s["vocabulary"]),
            scale=s["scale"],
            pages=s["pages"],
            words_per_page=s["words_per_page"],
            canvas_w=s["canvas_w"],
            canvas_h=s["canvas_h"],
            augment=self.augment_config(),
            seed=self.seed,
        )

    def embed_cfg_doc(self) -> dict:
        """Embedding description stored in index headers."""
        e = self.doc["embedding"]
        if e["kind"] == "phoc":
            return {"kind": "phoc", "levels": list(e["levels"]), "alphabet": e["alphabet"]}
        return {"kind": "dctow", "r": e["r"], "alphabet": e["alphabet"]}

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.doc, f, indent=2, sort_keys=True)
            f.write("\n")


def load_config(path: str | Path | None = None) -> ProjectConfig:
    """Read a config file; ``None`` falls back to $WORDSPOT_CONFIG, then
    to pure defaults."""
    if path is None:
        path = os.environ.get(ENV_CONFIG)
    if path is None:
        return ProjectConfig()
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    return ProjectConfig(doc)
