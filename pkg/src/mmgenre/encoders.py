"""Pooling, recurrent and convolutional sequence classifiers.

A model has two stages.  The *sequence stage* maps one (T, D) feature
sequence to a fixed vector (optional n-gram temporal conv, then mean pool,
LSTM, BiLSTM or conv+max-pool).  The *head* is dropout followed by an affine
layer producing one logit per class, applied to a whole batch.  Sequences of
different lengths are never padded: each one runs through the sequence
stage on its own.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .data import ModalityScores
from .metrics import per_class_ap

log = logging.getLogger(__name__)

NGRAM_WIDTH = {"unigram": 1, "bigram": 2, "trigram": 3}
AGGREGATORS = ("mean_pool", "lstm", "bilstm", "conv1d_pool")

MAX_TEXT_TOKENS = 3000
MAX_VIDEO_FRAMES = 200
DEFAULT_DIMS = {"text": 300, "video": 4096, "poster": 4096, "audio": 128}

# (number of clips, clip length) used when scoring a recurrent video model
CLIP_LAYOUTS = ((12, 16), (4, 49))


@dataclass
class FeatureSequence:
    modality: str
    data: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2:
            raise nn.ShapeError(f"{self.source_id}: feature sequence must be (T, D), got {data.shape}")
        if np.isnan(data).any():
            raise ValueError(f"{self.source_id}: NaN in {self.modality} features")
        if self.modality == "text" and data.shape[0] > MAX_TEXT_TOKENS:
            data = data[:MAX_TEXT_TOKENS]
        if self.modality == "video" and data.shape[0] > MAX_VIDEO_FRAMES:
            raise ValueError(f"{self.source_id}: {data.shape[0]} frames, subsample to "
                             f"at most {MAX_VIDEO_FRAMES} first")
        if self.modality == "poster" and data.shape[0] != 1:
            raise ValueError(f"{self.source_id}: poster features must be a single vector")
        self.data = data

    def __len__(self):
        return self.data.shape[0]


@dataclass
class EncoderConfig:
    input_dim: int
    num_classes: int
    ngram: str = "unigram"
    aggregator: str = "mean_pool"
    hidden: int = 64
    conv_stride: int = 1
    conv_channels: int | None = None
    dropout: float = 0.5
    multilabel: bool = True
    seed: int = 0
    vocab_size: int | None = None  # set for token-id input with a trainable embedding

    def __post_init__(self):
        if self.ngram not in NGRAM_WIDTH:
            raise ValueError(f"unknown ngram {self.ngram!r}")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.input_dim < 1 or self.num_classes < 1 or self.hidden < 1:
            raise ValueError("dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.vocab_size is not None and self.vocab_size < 1:
            raise ValueError("vocab_size must be positive")


class SequenceClassifier:
    def __init__(self, cfg: EncoderConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        D = cfg.input_dim
        layers: list[nn.Layer] = []
        if cfg.vocab_size is not None:
            layers.append(nn.Embedding(cfg.vocab_size, D, rng))
        width = NGRAM_WIDTH[cfg.ngram]
        if width > 1:
            layers.append(nn.TemporalConv(width, D, cfg.conv_channels, cfg.conv_stride, rng))
            D = layers[-1].out_dim
        if cfg.aggregator == "mean_pool":
            layers.append(nn.MeanPool())
        elif cfg.aggregator == "lstm":
            layers.append(nn.LSTM(D, cfg.hidden, rng))
        elif cfg.aggregator == "bilstm":
            layers.append(nn.BiLSTM(D, cfg.hidden, rng))
        else:
            layers.append(nn.TemporalConv(3, D, cfg.conv_channels, 1, rng))
            layers.append(nn.MaxPool())
        self.sequence_stage = nn.LayerStack(layers, cfg.input_dim)
        self.feature_dim = self.sequence_stage.out_dim
        self.affine = nn.Affine(self.feature_dim, cfg.num_classes, rng)
        self.head = nn.LayerStack([nn.Dropout(cfg.dropout), self.affine], self.feature_dim)

    # -- parameters ---------------------------------------------------------

    def params(self) -> list[nn.Parameter]:
        return self.sequence_stage.params() + self.head.params()

    def n_params(self) -> int:
        return int(sum(p.value.size for p in self.params()))

    def to_dict(self) -> dict:
        return {"config": asdict(self.cfg),
                "params": [p.value.tolist() for p in self.params()]}

    @classmethod
    def from_dict(cls, d) -> SequenceClassifier:
        model = cls(EncoderConfig(**d["config"]))
        for p, v in zip(model.params(), d["params"]):
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != p.shape:
                raise nn.ShapeError(f"stored parameter {arr.shape} != {p.shape}")
            p.value[...] = arr
        return model

    # -- forward -------------------------------------------------------------

    def _as_array(self, seq):
        if self.cfg.vocab_size is not None:
            return np.asarray(getattr(seq, "data", seq), dtype=np.int64).reshape(-1)
        x = seq.data if isinstance(seq, FeatureSequence) else np.asarray(seq, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        return x

    def embed(self, seq, training=False, rng=None):
        """Sequence stage only: (T, D) -> feature vector."""
        x = self._as_array(seq)
        sid = getattr(seq, "source_id", "")
        try:
            return self.sequence_stage.forward(x, training, rng)
        except (nn.EmptySequenceError, nn.SequenceTooShortError) as e:
            raise type(e)(f"sample {sid or '?'}: {e}") from None

    def logits(self, seqs) -> np.ndarray:
        """Evaluation-mode logits, one row per sequence."""
        single_ndim = 1 if self.cfg.vocab_size is not None else 2
        if isinstance(seqs, (FeatureSequence, np.ndarray)) and np.ndim(getattr(seqs, "data", seqs)) == single_ndim:
            seqs = [seqs]
        feats = np.stack([self.embed(s)[0] for s in seqs])
        out, _ = self.head.forward(feats)
        return nn.check_finite(out, "logits")

    def score(self, seq) -> np.ndarray:
        return self.logits([seq])[0]

    def loss_and_grad(self, seqs, targets, class_weights=None, rng=None, pooled=None):
        """Training-mode loss on one batch; accumulates parameter gradients.

        ``pooled`` may hold precomputed sequence-stage outputs when that stage
        has no parameters.
        """
        if pooled is None:
            outs = [self.embed(s, True, rng) for s in seqs]
            feats = np.stack([o[0] for o in outs])
        else:
            outs, feats = None, pooled
        z, head_cache = self.head.forward(feats, True, rng)
        if self.cfg.multilabel:
            loss, dz = nn.weighted_bce_loss(z, targets, class_weights)
        else:
            loss, dz = nn.softmax_ce_loss(z, targets)
        dfeat = self.head.backward(dz, head_cache)
        if outs is not None:
            for (_, cache), g in zip(outs, dfeat):
                self.sequence_stage.backward(g, cache)
        return loss


# ---------------------------------------------------------------------------
# model factories and single-sample encoders


def make_encoder(modality, num_classes, ngram="unigram", aggregator="mean_pool", hidden=64,
                 dropout=0.5, seed=0, input_dim=None, multilabel=True, conv_stride=None,
                 vocab_size=None):
    """Encoder with the per-modality defaults: video n-grams stride by 2.

    With ``vocab_size`` the model reads token ids through a trainable
    embedding of width ``input_dim`` instead of precomputed vectors.
    """
    if input_dim is None:
        input_dim = DEFAULT_DIMS[modality]
    if conv_stride is None:
        conv_stride = 2 if (modality == "video" and ngram != "unigram") else 1
    cfg = EncoderConfig(input_dim=input_dim, num_classes=num_classes, ngram=ngram,
                        aggregator=aggregator, hidden=hidden, conv_stride=conv_stride,
                        dropout=dropout, multilabel=multilabel, seed=seed, vocab_size=vocab_size)
    return SequenceClassifier(cfg)


def _check_modality(seq, modality):
    if isinstance(seq, FeatureSequence):
        if seq.modality != modality:
            raise ValueError(f"expected {modality} features, got {seq.modality}")
        return seq
    return FeatureSequence(modality, seq)


def encode_fasttext(seq, model: SequenceClassifier) -> np.ndarray:
    return model.score(_check_modality(seq, "text"))


def encode_fastvideo(seq, model: SequenceClassifier) -> np.ndarray:
    return model.score(_check_modality(seq, "video"))


def encode_poster(vec, model: SequenceClassifier) -> np.ndarray:
    return model.score(_check_modality(vec, "poster"))


def subsample_frames(raw) -> np.ndarray:
    """Pick up to 200 frames: every 10th frame, topped up with every 6th
    frame starting at frame 200 if the first pass falls short."""
    raw = np.asarray(raw)
    return raw[subsample_indices(raw.shape[0])]


def subsample_indices(n_frames: int, target=MAX_VIDEO_FRAMES) -> np.ndarray:
    if n_frames < 1:
        raise ValueError("video has no frames")
    idx = list(range(0, n_frames, 10))[:target]
    if len(idx) < target:
        extra = range(200, n_frames, 6)
        idx.extend(list(extra)[: target - len(idx)])
    return np.array(idx, dtype=np.int64)


def clip_windows(T: int) -> list[tuple[int, int]]:
    """Contiguous non-overlapping clips (start, stop) for recurrent scoring.

    Every clip of each layout that fits inside the sequence is used; with
    fewer than 49 frames the whole sequence is one window.
    """
    if T < CLIP_LAYOUTS[-1][1]:
        return [(0, T)]
    wins = []
    for count, length in CLIP_LAYOUTS:
        for k in range(min(count, T // length)):
            wins.append((k * length, (k + 1) * length))
    return wins


def clip_eval_lstm(seq, model: SequenceClassifier) -> np.ndarray:
    """Average the logits of the 12x16 and 4x49 frame clips."""
    if model.cfg.aggregator not in ("lstm", "bilstm"):
        raise ValueError("clip evaluation applies to recurrent aggregators")
    seq = _check_modality(seq, "video")
    x = seq.data
    clips = [FeatureSequence("video", x[a:b], seq.source_id) for a, b in clip_windows(len(x))]
    return model.logits(clips).mean(axis=0)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr0: float = 1e-3
    lr_decay: float = 1e-3
    seed: int = 0
    class_weighting: bool = True
    crop_lengths: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_map: list[float] = field(default_factory=list)

    def to_tsv(self) -> str:
        lines = ["epoch\ttrain_loss\tval_loss\tval_mAP"]
        for e, tl in enumerate(self.train_loss):
            vl = repr(self.val_loss[e]) if e < len(self.val_loss) else ""
            vm = repr(self.val_map[e]) if e < len(self.val_map) else ""
            lines.append(f"{e}\t{tl!r}\t{vl}\t{vm}")
        return "\n".join(lines) + "\n"


def class_weights_from_labels(Y, lo=0.1, hi=10.0) -> np.ndarray:
    """``N / (K * positives_k)`` clipped to [lo, hi]; classes without
    positives get ``hi``."""
    Y = np.asarray(Y, dtype=np.float64)
    N, K = Y.shape
    pos = Y.sum(axis=0)
    with np.errstate(divide="ignore"):
        w = np.where(pos > 0, N / (K * np.maximum(pos, 1e-300)), hi)
    return np.clip(w, lo, hi)


def bucket_batches(lengths, batch_size, rng, pool_factor=8) -> list[np.ndarray]:
    """Shuffle, sort by length inside pools of ``pool_factor`` batches, cut
    into batches and shuffle the batch order."""
    lengths = np.asarray(lengths)
    order = rng.permutation(len(lengths))
    pool = batch_size * pool_factor
    batches = []
    for start in range(0, len(order), pool):
        chunk = order[start:start + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def _warn_degenerate(Y, multilabel):
    Y = np.asarray(Y)
    if multilabel:
        const = np.all(Y == Y[:1], axis=0)
        if const.any():
            log.warning("training labels constant for class(es) %s", np.flatnonzero(const).tolist())
    elif np.unique(Y).size < 2:
        log.warning("training labels contain a single class")


def _random_crop(x, lengths, rng):
    L = int(rng.choice(lengths))
    if x.shape[0] <= L:
        return x
    start = int(rng.integers(0, x.shape[0] - L + 1))
    return x[start:start + L]


def train_encoder(model: SequenceClassifier, train_seqs, train_y, val_seqs=None, val_y=None,
                  hp: TrainConfig | None = None) -> TrainHistory:
    """Adam training with per-epoch learning-rate decay.

    ``train_y`` is a B x K binary matrix for multi-label models and a vector
    of class indices otherwise.
    """
    hp = hp or TrainConfig()
    multilabel = model.cfg.multilabel
    train_y = np.asarray(train_y)
    _warn_degenerate(train_y, multilabel)
    cw = class_weights_from_labels(train_y) if (multilabel and hp.class_weighting) else None
    opt = nn.Adam(model.params(), lr0=hp.lr0, decay=hp.lr_decay)
    rng = np.random.default_rng(hp.seed)
    if model.cfg.vocab_size is not None:
        seqs = [np.asarray(s, dtype=np.int64).reshape(-1) for s in train_seqs]
    else:
        seqs = [s if isinstance(s, FeatureSequence) else FeatureSequence("seq", s) for s in train_seqs]
    lengths = [len(s) for s in seqs]

    # a parameter-free sequence stage (plain mean pool) is computed once
    pooled = None
    if not model.sequence_stage.params() and hp.crop_lengths is None:
        pooled = np.stack([model.embed(s)[0] for s in seqs])

    hist = TrainHistory()
    for epoch in range(hp.epochs):
        opt.epoch = epoch
        total, count = 0.0, 0
        for batch in bucket_batches(lengths, hp.batch_size, rng):
            opt.zero_grad()
            if pooled is not None:
                loss = model.loss_and_grad(None, train_y[batch], cw, rng, pooled=pooled[batch])
            else:
                bseqs = [seqs[i] for i in batch]
                if hp.crop_lengths:
                    bseqs = [_random_crop(getattr(s, "data", s), hp.crop_lengths, rng) for s in bseqs]
                loss = model.loss_and_grad(bseqs, train_y[batch], cw, rng)
            opt.step()
            total += loss * len(batch)
            count += len(batch)
        hist.train_loss.append(total / count)
        if val_seqs is not None and len(val_seqs):
            z = model.logits(val_seqs)
            vy = np.asarray(val_y)
            if multilabel:
                hist.val_loss.append(nn.weighted_bce_loss(z, vy, cw)[0])
            else:
                hist.val_loss.append(nn.softmax_ce_loss(z, vy)[0])
                vy = np.eye(z.shape[1], dtype=np.int64)[vy]
            aps = per_class_ap(z, vy)
            hist.val_map.append(float(np.nanmean(aps)) if not np.isnan(aps).all() else float("nan"))
        log.info("epoch %d train_loss %.6f%s", epoch, hist.train_loss[-1],
                 f" val_loss {hist.val_loss[-1]:.6f}" if hist.val_loss else "")
    return hist


def score_sequences(model: SequenceClassifier, seqs, ids, modality="", clip_eval=False) -> ModalityScores:
    if clip_eval:
        z = np.stack([clip_eval_lstm(s, model) for s in seqs])
    else:
        z = model.logits(seqs)
    return ModalityScores(list(ids), z, modality)
