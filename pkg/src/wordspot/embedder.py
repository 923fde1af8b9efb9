"""Trainable region descriptor and wordness scorer.

A region is cropped with bilinear interpolation to a fixed 8 x 20 patch,
mean-centered, and flattened into a 160-d feature vector.  Two heads consume
the features:

* an embedding branch, a fully-connected net with batch normalization and
  tanh after each hidden layer and an L2-normalization output layer, trained
  to land on the word embedding of the region's transcription;
* a wordness score head, a single affine map to one logit trained with a
  binary logistic loss.

Training uses ADAM with a step-decay learning-rate schedule.  The network
stands in for a convolutional backbone at desk scale: the feature extractor
is an ordinary callable, so a richer backend can be swapped in.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .embeddings import (
    Alphabet,
    DctowConfig,
    EmbeddingConfig,
    PhocConfig,
    embed_label,
    embedding_kind,
    normalize_label,
)
from .errors import (
    CorruptModel,
    DegenerateBox,
    DimensionMismatch,
    EmptyCorpus,
    VersionMismatch,
)
from .evaluation import ap_from_relevance
from .geometry import Box
from .image_ops import GrayImage, bilinear_roi_resize
from .losses import (
    LossWeights,
    MarginConfig,
    bce_embedding_loss,
    cosine_embedding_loss,
    cosine_loss,
    sigmoid,
)

PATCH_H = 8
PATCH_W = 20

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

MODEL_MAGIC = b"WSPT"
MODEL_VERSION = 1

LOSS_CHOICES = ("cosine", "cosemb", "bce")


def extract_features(img: GrayImage, box: Box) -> np.ndarray:
    """Fixed-length features for a region: 8 x 20 bilinear crop, [0, 1]
    intensities, mean-centered per patch, flattened row-major."""
    if box.w <= 0 or box.h <= 0:
        raise DegenerateBox(f"cannot extract features from {box}")
    patch = bilinear_roi_resize(img, box, PATCH_W, PATCH_H)
    return (patch - patch.mean()).reshape(-1)


@dataclass(frozen=True)
class EmbedNetConfig:
    input_dim: int = PATCH_H * PATCH_W
    hidden_dims: tuple[int, ...] = (256, 256)
    out_dim: int = 108
    seed: int = 0


class DenseNet:
    """Embedding branch plus score head, parameters as plain numpy arrays.

    Hidden layer i holds W{i}, b{i}, bn_gamma{i}, bn_beta{i} and running
    batch-norm statistics; the output layer and the score head are affine.
    Declaration order of ``state_items`` defines the checkpoint layout.
    """

    def __init__(self, cfg: EmbedNetConfig, init: bool = True):
        self.cfg = cfg
        self.params: dict[str, np.ndarray] = {}
        self.stats: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(cfg.seed)

        def gauss(std, shape):
            # untouched zero blocks when loading from a checkpoint
            return rng.normal(0.0, std, shape) if init else np.zeros(shape)

        dims = [cfg.input_dim, *cfg.hidden_dims]
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            self.params[f"W{i}"] = gauss(np.sqrt(2.0 / d_in), (d_in, d_out))
            self.params[f"b{i}"] = np.zeros(d_out)
            self.params[f"g{i}"] = np.ones(d_out)
            self.params[f"beta{i}"] = np.zeros(d_out)
            self.stats[f"mean{i}"] = np.zeros(d_out)
            self.stats[f"var{i}"] = np.ones(d_out)
        self.params["W_out"] = gauss(0.01, (dims[-1], cfg.out_dim))
        self.params["b_out"] = np.zeros(cfg.out_dim)
        self.params["W_score"] = gauss(0.01, (cfg.input_dim, 1))
        self.params["b_score"] = np.zeros(1)

    @property
    def n_hidden(self) -> int:
        return len(self.cfg.hidden_dims)

    def state_items(self):
        """(name, array) pairs in the fixed serialization order."""
        for i in range(self.n_hidden):
            for name in (f"W{i}", f"b{i}", f"g{i}", f"beta{i}"):
                yield name, self.params[name]
            for name in (f"mean{i}", f"var{i}"):
                yield name, self.stats[name]
        for name in ("W_out", "b_out", "W_score", "b_score"):
            yield name, self.params[name]

    def copy_state(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in self.state_items():
            arr[...] = state[name]

    # -- forward ----------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise DimensionMismatch(
                f"expected (N, {self.cfg.input_dim}) input, got {x.shape}"
            )
        return x

    def score_logits(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        return (x @ self.params["W_score"] + self.params["b_score"])[:, 0]

    def embed_forward(
        self, x: np.ndarray, train: bool = False, update_stats: bool = False
    ) -> tuple[np.ndarray, dict]:
        """Embeddings with unit rows plus the cache needed for backward."""
        x = self._check_input(x)
        a = x
        cache: dict = {"inputs": [], "xhat": [], "act": [], "inv_std": []}
        for i in range(self.n_hidden):
            cache["inputs"].append(a)
            z = a @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    n = z.shape[0]
                    unbiased = var * (n / (n - 1)) if n > 1 else var
                    self.stats[f"mean{i}"] *= 1.0 - BN_MOMENTUM
                    self.stats[f"mean{i}"] += BN_MOMENTUM * mu
                    self.stats[f"var{i}"] *= 1.0 - BN_MOMENTUM
                    self.stats[f"var{i}"] += BN_MOMENTUM * unbiased
            else:
                mu = self.stats[f"mean{i}"]
                var = self.stats[f"var{i}"]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (z - mu) * inv_std
            act = np.tanh(self.params[f"g{i}"] * xhat + self.params[f"beta{i}"])
            cache["xhat"].append(xhat)
            cache["inv_std"].append(inv_std)
            cache["act"].append(act)
            a = act
        pre = a @ self.params["W_out"] + self.params["b_out"]
        norms = np.maximum(np.linalg.norm(pre, axis=1, keepdims=True), 1e-12)
        emb = pre / norms
        cache["pre"] = pre
        cache["norms"] = norms
        cache["emb"] = emb
        cache["train"] = train
        return emb, cache

    def forward(self, batch: np.ndarray, train: bool = False):
        """Full forward pass: (unit-norm embeddings, score logits)."""
        emb, _ = self.embed_forward(batch, train=train)
        return emb, self.score_logits(batch)

    # -- backward ---------------------------------------------------------

    def embed_backward(
        self,
        cache: dict,
        demb: np.ndarray | None = None,
        dpre: np.ndarray | None = None,
    ) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. the embedding-branch parameters.

        Pass ``demb`` for losses on the normalized output or ``dpre`` for
        losses taken directly on the pre-normalization activations (BCE).
        """
        grads: dict[str, np.ndarray] = {}
        if dpre is None:
            if demb is None:
                raise ValueError("need demb or dpre")
            emb, norms = cache["emb"], cache["norms"]
            dot = (demb * emb).sum(axis=1, keepdims=True)
            dpre = (demb - emb * dot) / norms
        act_last = cache["act"][-1] if self.n_hidden else cache["inputs"][0]
        grads["W_out"] = act_last.T @ dpre
        grads["b_out"] = dpre.sum(axis=0)
        da = dpre @ self.params["W_out"].T
        for i in reversed(range(self.n_hidden)):
            act = cache["act"][i]
            dh = da * (1.0 - act * act)
            xhat = cache["xhat"][i]
            grads[f"g{i}"] = (dh * xhat).sum(axis=0)
            grads[f"beta{i}"] = dh.sum(axis=0)
            dxhat = dh * self.params[f"g{i}"]
            if cache["train"]:
                n = xhat.shape[0]
                dz = (
                    cache["inv_std"][i]
                    / n
                    * (
                        n * dxhat
                        - dxhat.sum(axis=0)
                        - xhat * (dxhat * xhat).sum(axis=0)
                    )
                )
            else:
                dz = dxhat * cache["inv_std"][i]
            a_prev = cache["inputs"][i]
            grads[f"W{i}"] = a_prev.T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            da = dz @ self.params[f"W{i}"].T
        return grads

    def score_backward(self, x: np.ndarray, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        x = self._check_input(x)
        return {
            "W_score": x.T @ dlogits[:, None],
            "b_score": np.array([dlogits.sum()]),
        }


@dataclass
class AdamState:
    """ADAM moments plus a step-decay learning-rate schedule.

    The decay is applied by repeated multiplication so the scheduled values
    (1e-3 -> 1e-4 -> 1e-5) are exact floats.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule_every: int = 10000
    decay: float = 0.1
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """One ADAM update on every parameter present in ``grads``."""
        self.step_count += 1
        t = self.step_count
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        if self.schedule_every and t % self.schedule_every == 0:
            self.lr *= self.decay


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainingCrop:
    """One labeled region: a word crop (with transcription) or background."""

    image: GrayImage
    box: Box
    label: str | None
    is_word: bool


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "cosine"
    max_iters: int = 5000
    batch: int = 64
    val_split: float = 0.1
    eval_every: int = 1000
    lr: float = 1e-3
    schedule_every: int = 10000
    weights: LossWeights = field(default_factory=LossWeights)
    margin: MarginConfig = field(default_factory=MarginConfig)
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSS_CHOICES:
            raise ValueError(f"loss must be one of {LOSS_CHOICES}")


@dataclass
class TrainedModel:
    """Immutable result of training: network, embedding config, and tags."""

    net: DenseNet
    embed_cfg: EmbeddingConfig
    kind: str
    version_tag: str = "wordspot-1"

    def embed_text(self, query: str) -> np.ndarray:
        """Unit-norm word-embedding vector for a normalized query string."""
        word = normalize_label(query, self.embed_cfg.alphabet)
        vec = embed_label(word, self.embed_cfg).values
        return vec / np.linalg.norm(vec)

    def describe(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode descriptors (unit rows) and wordness probabilities."""
        emb, logits = self.net.forward(features, train=False)
        return emb, sigmoid(logits)


def _embedding_loss_and_grad(loss_name, pre, emb_cache, targets, margin):
    """Mean embedding loss over the batch rows plus the matching gradients."""
    n = pre.shape[0]
    total = 0.0
    demb = np.zeros_like(pre)
    dpre = np.zeros_like(pre)
    use_pre = loss_name == "bce"
    for i in range(n):
        if loss_name == "cosine":
            li, gi = cosine_loss(emb_cache["emb"][i], targets[i])
            demb[i] = gi / n
        elif loss_name == "cosemb":
            li, gi = cosine_embedding_loss(emb_cache["emb"][i], targets[i], 1, margin)
            demb[i] = gi / n
        else:
            li, gi = bce_embedding_loss(pre[i], targets[i])
            dpre[i] = gi / n
        total += li / n
    return total, (dpre if use_pre else None), (None if use_pre else demb)


def train_step(
    net: DenseNet,
    adam: AdamState,
    pos_x: np.ndarray,
    pos_targets: np.ndarray,
    neg_x: np.ndarray,
    cfg: TrainConfig,
) -> dict[str, float]:
    """One optimization step; the embedding branch sees only positives."""
    emb, cache = net.embed_forward(pos_x, train=True, update_stats=True)
    emb_loss, dpre, demb = _embedding_loss_and_grad(
        cfg.loss, cache["pre"], cache, pos_targets, cfg.margin
    )
    grads = net.embed_backward(cache, demb=demb, dpre=dpre)
    for k in grads:
        grads[k] *= cfg.weights.w_emb

    all_x = np.vstack([pos_x, neg_x]) if neg_x.shape[0] else pos_x
    y = np.concatenate([np.ones(pos_x.shape[0]), np.zeros(neg_x.shape[0])])
    logits = net.score_logits(all_x)
    # mean stable logistic loss; gradient is (sigma - y)/n
    score_loss = float(
        np.mean(np.logaddexp(0.0, logits) - y * logits)
    )
    dlogits = (sigmoid(logits) - y) / logits.shape[0]
    sgrads = net.score_backward(all_x, dlogits * cfg.weights.w_head)
    grads.update(sgrads)

    adam.step(net.params, grads)
    return {
        "emb": emb_loss,
        "score": score_loss,
        "total": cfg.weights.w_emb * emb_loss + cfg.weights.w_head * score_loss,
    }


def crop_retrieval_map(descriptors: np.ndarray, labels: Sequence[str],
                       embed_cfg: EmbeddingConfig) -> float:
    """Crop-level query-by-string MAP: rank crops by cosine to each unique
    label's embedding; a crop is relevant iff its label matches."""
    if len(labels) == 0:
        return 0.0
    aps = []
    for query in sorted(set(labels)):
        q = embed_label(query, embed_cfg).values
        q = q / np.linalg.norm(q)
        sims = descriptors @ q
        order = np.argsort(-sims, kind="stable")
        relevance = [labels[i] == query for i in order]
        aps.append(ap_from_relevance(relevance, sum(relevance)))
    return float(np.mean(aps))


def train(
    corpus: Sequence[TrainingCrop],
    net_cfg: EmbedNetConfig,
    embed_cfg: EmbeddingConfig,
    cfg: TrainConfig | None = None,
    feature_fn: Callable[[GrayImage, Box], np.ndarray] = extract_features,
    log_fn: Callable[[int, dict], None] | None = None,
) -> TrainedModel:
    """Train descriptor and scorer on labeled crops.

    Mini-batches are balanced: half word crops with embedding targets, half
    background crops for the score head.  Every ``eval_every`` iterations the
    held-out crops are scored with retrieval MAP and the best checkpoint is
    kept.  Deterministic for a fixed seed.
    """
    cfg = cfg or TrainConfig()
    if len(corpus) == 0:
        raise EmptyCorpus("no training crops")
    rng = np.random.default_rng(cfg.seed)

    pos = [c for c in corpus if c.is_word and c.label]
    neg = [c for c in corpus if not c.is_word]
    if not pos:
        raise EmptyCorpus("no word crops with labels in the corpus")

    pos_labels = [normalize_label(c.label, embed_cfg.alphabet) for c in pos]
    targets = {}
    for lab in set(pos_labels):
        targets[lab] = embed_label(lab, embed_cfg).values
    pos_x = np.stack([feature_fn(c.image, c.box) for c in pos])
    pos_t = np.stack([targets[lab] for lab in pos_labels])
    neg_x = (
        np.stack([feature_fn(c.image, c.box) for c in neg])
        if neg
        else np.zeros((0, net_cfg.input_dim))
    )

    n_val = int(round(cfg.val_split * len(pos)))
    perm = rng.permutation(len(pos))
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    if tr_idx.size == 0:  # tiny corpora: train and validate on everything
        tr_idx = perm
        val_idx = perm
    val_labels = [pos_labels[i] for i in val_idx]

    if net_cfg.out_dim != pos_t.shape[1]:
        raise DimensionMismatch(
            f"net out_dim {net_cfg.out_dim} != embedding dim {pos_t.shape[1]}"
        )
    net = DenseNet(net_cfg)
    adam = AdamState(lr=cfg.lr, schedule_every=cfg.schedule_every)

    half = cfg.batch // 2
    best_map = -1.0
    best_state = net.copy_state()

    def validate() -> float:
        emb, _ = net.embed_forward(pos_x[val_idx], train=False)
        return crop_retrieval_map(emb, val_labels, embed_cfg)

    for it in range(1, cfg.max_iters + 1):
        bp = rng.choice(tr_idx, size=min(half, tr_idx.size), replace=tr_idx.size < half)
        if neg_x.shape[0]:
            bn = rng.choice(
                neg_x.shape[0],
                size=min(cfg.batch - bp.size, neg_x.shape[0]),
                replace=neg_x.shape[0] < cfg.batch - bp.size,
            )
            nx = neg_x[bn]
        else:
            nx = np.zeros((0, net_cfg.input_dim))
        stats = train_step(net, adam, pos_x[bp], pos_t[bp], nx, cfg)
        if it % cfg.eval_every == 0 or it == cfg.max_iters:
            val_map = validate()
            stats["val_map"] = val_map
            if val_map > best_map:
                best_map = val_map
                best_state = net.copy_state()
        if log_fn:
            log_fn(it, stats)

    net.load_state(best_state)
    return TrainedModel(net=net, embed_cfg=embed_cfg, kind=embedding_kind(embed_cfg))


# ---------------------------------------------------------------------------
# Checkpoint persistence: magic, version, canonical JSON config, f32 blocks.


def embed_cfg_to_json(cfg: EmbeddingConfig) -> dict:
    if isinstance(cfg, PhocConfig):
        return {"kind": "phoc", "levels": list(cfg.levels), "alphabet": cfg.alphabet.chars}
    return {"kind": "dctow", "r": cfg.r, "alphabet": cfg.alphabet.chars}


def embed_cfg_from_json(doc: dict) -> EmbeddingConfig:
    alphabet = Alphabet(doc["alphabet"])
    if doc["kind"] == "phoc":
        return PhocConfig(levels=tuple(doc["levels"]), alphabet=alphabet)
    if doc["kind"] == "dctow":
        return DctowConfig(r=doc["r"], alphabet=alphabet)
    raise VersionMismatch(f"unknown embedding kind {doc['kind']!r}")


def save_model(model: TrainedModel, path) -> None:
    cfg = model.net.cfg
    header = {
        "input_dim": cfg.input_dim,
        "hidden_dims": list(cfg.hidden_dims),
        "out_dim": cfg.out_dim,
        "seed": cfg.seed,
        "embedding": embed_cfg_to_json(model.embed_cfg),
        "version_tag": model.version_tag,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", MODEL_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, arr in model.net.state_items():
            f.write(arr.astype("<f4").tobytes())


def load_model(path) -> TrainedModel:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != MODEL_MAGIC:
        raise VersionMismatch("not a model checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != MODEL_VERSION:
        raise VersionMismatch(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack_from("<I", data, 8)
    try:
        header = json.loads(data[12 : 12 + blob_len])
    except (ValueError, UnicodeDecodeError) as e:
        raise CorruptModel(f"unreadable checkpoint header: {e}") from e
    net_cfg = EmbedNetConfig(
        input_dim=header["input_dim"],
        hidden_dims=tuple(header["hidden_dims"]),
        out_dim=header["out_dim"],
        seed=header["seed"],
    )
    net = DenseNet(net_cfg, init=False)
    pos = 12 + blob_len
    for name, arr in net.state_items():
        nbytes = arr.size * 4
        chunk = data[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise CorruptModel(f"truncated parameter block {name!r}")
        arr[...] = np.frombuffer(chunk, dtype="<f4").reshape(arr.shape)
        pos += nbytes
    if pos != len(data):
        raise CorruptModel("trailing bytes after parameter blocks")
    embed_cfg = embed_cfg_from_json(header["embedding"])
    return TrainedModel(
        net=net,
        embed_cfg=embed_cfg,
        kind=header["embedding"]["kind"],
        version_tag=header["version_tag"],
    )
