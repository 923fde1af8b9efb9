"""Training losses with hand-derived analytic gradients.

Five losses drive training: smooth-L1 box regression, binary logistic
wordness scoring, and three interchangeable embedding losses (cosine
embedding with a negative margin, plain cosine, and per-bit BCE for binary
targets).  The total is a fixed weighted sum of the parts.  Everything is
plain numpy; no autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonBinaryTarget, ZeroVector


@dataclass(frozen=True)
class LossWeights:
    w_rpn: float = 1e-2
    w_head: float = 1e-1
    w_emb: float = 3.0

    def __post_init__(self):
        if self.w_rpn < 0 or self.w_head < 0 or self.w_emb < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class MarginConfig:
    gamma: float = 0.2

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")


def smooth_l1(x: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    """Huber-style regression loss, summed over components.

    Per component: 0.5*d^2 for |d| < 1 else |d| - 0.5, with d = x - t.
    The gradient w.r.t. x is d clamped to [-1, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if x.shape != t.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {t.shape}")
    d = x - t
    ad = np.abs(d)
    loss = np.where(ad < 1.0, 0.5 * d * d, ad - 0.5).sum()
    grad = np.clip(d, -1.0, 1.0)
    return float(loss), grad


def _softplus(x: np.ndarray | float) -> np.ndarray | float:
    # log(1 + e^x) without overflow for large |x|
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logistic_score_loss(logit: float, is_word: bool) -> tuple[float, float]:
    """Binary logistic loss on a single wordness logit, stable for any logit."""
    y = 1.0 if is_word else 0.0
    loss = _softplus(-logit) if is_word else _softplus(logit)
    grad = float(sigmoid(logit) - y)
    return float(loss), grad


def _cosine(v: np.ndarray, u: np.ndarray) -> tuple[float, np.ndarray, float]:
    """cos(u, v) plus its gradient w.r.t. v and the norm of v."""
    nv = float(np.linalg.norm(v))
    nu = float(np.linalg.norm(u))
    if nv <= 0 or nu <= 0:
        raise ZeroVector("cosine losses need vectors with positive norm")
    cos = float(v @ u) / (nv * nu)
    dcos_dv = u / (nu * nv) - (cos / (nv * nv)) * v
    return cos, dcos_dv, nv


def cosine_embedding_loss(
    v: np.ndarray, u: np.ndarray, y: int, m: MarginConfig | None = None
) -> tuple[float, np.ndarray]:
    """Pull matching pairs together, push mismatches below a margin.

    y = 1: 1 - cos(u, v);  y = 0: max(0, cos(u, v) - gamma).  The gradient is
    taken w.r.t. v only (u is a fixed target); the subgradient at the hinge
    kink is 0.
    """
    m = m or MarginConfig()
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    cos, dcos_dv, _ = _cosine(v, u)
    if y == 1:
        return 1.0 - cos, -dcos_dv
    if cos > m.gamma:
        return cos - m.gamma, dcos_dv
    return 0.0, np.zeros_like(v)


def cosine_loss(v: np.ndarray, u: np.ndarray) -> tuple[float, np.ndarray]:
    """1 - cos(u, v): the matching half of the cosine embedding loss."""
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    cos, dcos_dv, _ = _cosine(v, u)
    return 1.0 - cos, -dcos_dv


def bce_embedding_loss(
    logits: np.ndarray, target: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean per-bit binary cross entropy against a {0,1} target vector.

    Models the embedding as multi-label binary classification; only valid
    for binary embeddings.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: {logits.shape} vs {target.shape}")
    if not np.isin(target, (0.0, 1.0)).all():
        raise NonBinaryTarget("BCE targets must be 0/1")
    n = logits.size
    # per bit: softplus(l) - t*l  ==  -t*log(s) - (1-t)*log(1-s)
    loss = float((_softplus(logits) - target * logits).sum()) / n
    grad = (sigmoid(logits) - target) / n
    return loss, grad


def total_loss(
    rpn_reg: float,
    rpn_score: float,
    reg: float,
    score: float,
    emb: float,
    w: LossWeights | None = None,
) -> float:
    """Weighted sum of the five training losses."""
    w = w or LossWeights()
    return w.w_rpn * (rpn_reg + rpn_score) + w.w_head * (reg + score) + w.w_emb * emb
