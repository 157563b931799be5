"""Per-class softmax attention over modality logits (late score fusion)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import ModalityScores
from .encoders import class_weights_from_labels

log = logging.getLogger(__name__)


class FusionConfigError(ValueError):
    pass


def fusion_weights(W) -> np.ndarray:
    """Row-wise stable softmax of the raw weights (K classes x M modalities)."""
    return nn.softmax(np.asarray(W, dtype=np.float64), axis=1)


def _stack(scores) -> np.ndarray:
    S = np.stack([np.asarray(s, dtype=np.float64) for s in scores])
    if S.ndim != 3:
        raise nn.ShapeError(f"expected M arrays of shape B x K, got {S.shape}")
    return S


def fuse_arrays(scores, alpha) -> np.ndarray:
    """``psi[b, j] = sum_i alpha[j, i] * scores[i][b, j]``."""
    S = _stack(scores)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (S.shape[2], S.shape[0]):
        raise nn.ShapeError(f"alpha {alpha.shape} vs {S.shape[0]} modalities x {S.shape[2]} classes")
    return np.einsum("ibj,ji->bj", S, alpha)


def fusion_loss_and_grad(W, scores, labels, class_weights=None):
    """Weighted BCE of the fused logits and its gradient with respect to W."""
    S = _stack(scores)
    alpha = fusion_weights(W)
    psi = np.einsum("ibj,ji->bj", S, alpha)
    loss, dpsi = nn.weighted_bce_loss(psi, labels, class_weights)
    g = np.einsum("bj,ibj->ji", dpsi, S)  # dL/dalpha
    dW = alpha * (g - (g * alpha).sum(axis=1, keepdims=True))
    return loss, dW


@dataclass
class FusionModel:
    modalities: list[str]
    W: np.ndarray = None
    num_classes: int = 13
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.modalities) < 2:
            raise FusionConfigError("fusion needs at least two modalities")
        if len(set(self.modalities)) != len(self.modalities):
            raise FusionConfigError("duplicate modality")
        if self.W is None:
            self.W = np.zeros((self.num_classes, len(self.modalities)))
        self.W = np.asarray(self.W, dtype=np.float64)
        self.num_classes = self.W.shape[0]
        if self.W.shape[1] != len(self.modalities):
            raise nn.ShapeError("W columns must match the modality list")

    @property
    def alpha(self) -> np.ndarray:
        return fusion_weights(self.W)

    def fuse(self, per_modality: dict[str, ModalityScores], ids=None) -> ModalityScores:
        """Fused scores for ``ids`` (default: the first modality's ids).

        Every modality must cover every requested sample.
        """
        missing = [m for m in self.modalities if m not in per_modality]
        if missing:
            raise KeyError(f"no scores for modality {missing}")
        if ids is None:
            ids = per_modality[self.modalities[0]].ids
        arrays = [per_modality[m].aligned(ids) for m in self.modalities]
        for m, a in zip(self.modalities, arrays):
            if a.shape[1] != self.num_classes:
                raise nn.ShapeError(f"{m}: {a.shape[1]} classes, model has {self.num_classes}")
        return ModalityScores(list(ids), fuse_arrays(arrays, self.alpha), "fused")

    def attention_table(self) -> str:
        return report_modal_attention(self)

    def to_dict(self):
        return {"modalities": self.modalities, "W": self.W.tolist(),
                "class_names": self.class_names}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["modalities"]), np.array(d["W"]), class_names=list(d.get("class_names", [])))


def fuse_scores(per_modality, model: FusionModel, ids=None) -> ModalityScores:
    return model.fuse(per_modality, ids)


def report_modal_attention(model: FusionModel) -> str:
    """Tab-separated K x M table of attention weights, one row per class."""
    alpha = model.alpha
    names = model.class_names or [f"c{k}" for k in range(alpha.shape[0])]
    lines = ["class\t" + "\t".join(model.modalities)]
    for name, row in zip(names, alpha):
        lines.append(name + "\t" + "\t".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


@dataclass
class FusionTrainConfig:
    lr: float = 0.05
    max_epochs: int = 500
    batch_size: int = 32
    patience: int = 30
    holdout: float = 0.10
    seed: int = 0
    class_weighting: bool = True


def train_fusion(scores, labels, modalities=None, cfg: FusionTrainConfig | None = None,
                 class_names=None) -> FusionModel:
    """Fit the raw attention weights on frozen modality scores.

    ``scores`` is a list of B x K logit arrays (one per modality, rows
    aligned) or a dict modality -> ModalityScores.  A ``holdout`` share of
    the samples is kept aside for early stopping; W starts at zero.
    """
    cfg = cfg or FusionTrainConfig()
    if isinstance(scores, dict):
        modalities = list(scores) if modalities is None else list(modalities)
        if len(modalities) < 2:
            raise FusionConfigError("fusion needs at least two modalities")
        ids = scores[modalities[0]].ids
        arrays = [scores[m].aligned(ids) for m in modalities]
    else:
        arrays = list(scores)
        modalities = list(modalities) if modalities is not None else [f"m{i}" for i in range(len(arrays))]
    if len(arrays) < 2:
        raise FusionConfigError("fusion needs at least two modalities")
    S = _stack(arrays)
    Y = np.asarray(labels)
    M, B, K = S.shape
    if Y.shape != (B, K):
        raise nn.ShapeError(f"labels {Y.shape} vs scores {(B, K)}")

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(B)
    n_hold = int(round(cfg.holdout * B)) if B >= 10 else 0
    hold, fit = perm[:n_hold], perm[n_hold:]
    cw = class_weights_from_labels(Y[fit]) if cfg.class_weighting else None

    model = FusionModel(list(modalities), np.zeros((K, M)), class_names=list(class_names or []))
    param = nn.Parameter(model.W, "W")
    best_W, best_loss, stale = param.value.copy(), np.inf, 0
    for epoch in range(cfg.max_epochs):
        order = fit[rng.permutation(len(fit))]
        for start in range(0, len(order), cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            param.zero_grad()
            _, dW = fusion_loss_and_grad(param.value, S[:, b], Y[b], cw)
            param.grad += dW
            nn.adam_step(param, cfg.lr)
        if n_hold:
            val_loss = fusion_loss_and_grad(param.value, S[:, hold], Y[hold], cw)[0]
            if val_loss < best_loss - 1e-12:
                best_loss, best_W, stale = val_loss, param.value.copy(), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("fusion early stop at epoch %d (holdout loss %.6f)", epoch, best_loss)
                    break
        else:
            best_W = param.value.copy()
    model.W = best_W
    return model
