"""Toy data generators for tests, demos and smoke runs of the pipeline."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import GENRES, Manifest, Record, make_splits, write_manifest, write_tensor


def multilabel_targets(n, num_classes, rng, rate=0.3) -> np.ndarray:
    """Random multi-hot labels with at least one positive per row."""
    Y = (rng.random((n, num_classes)) < rate).astype(np.int64)
    empty = ~Y.any(axis=1)
    Y[empty, rng.integers(0, num_classes, size=int(empty.sum()))] = 1
    return Y


def separable_sequences(Y, dim, rng, length=(3, 12), signal=3.0, noise=1.0):
    """Feature sequences whose time-mean is linearly separable per class.

    Each class owns a random unit prototype; every frame is the sum of the
    prototypes of the sample's positive classes plus Gaussian noise.
    """
    Y = np.asarray(Y)
    protos = rng.standard_normal((Y.shape[1], dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    seqs = []
    for y in Y:
        T = int(rng.integers(length[0], length[1] + 1))
        center = signal * (y @ protos)
        seqs.append(center + noise * rng.standard_normal((T, dim)))
    return seqs


def signal_scores(Y, rng, strength=3.0, noise=1.0) -> np.ndarray:
    """Logits that carry the labels: ``strength * (2y - 1) + noise``."""
    Y = np.asarray(Y, dtype=np.float64)
    return strength * (2.0 * Y - 1.0) + noise * rng.standard_normal(Y.shape)


def noise_scores(shape, rng, scale=3.0) -> np.ndarray:
    return scale * rng.standard_normal(shape)


def complementary_modalities(Y, n_modalities, rng, strength=3.0, noise=1.0):
    """Each modality carries signal for a disjoint block of classes and noise
    of comparable scale elsewhere."""
    Y = np.asarray(Y)
    K = Y.shape[1]
    blocks = np.array_split(np.arange(K), n_modalities)
    out = []
    for block in blocks:
        s = noise_scores(Y.shape, rng, scale=np.hypot(strength, noise))
        s[:, block] = signal_scores(Y[:, block], rng, strength, noise)
        out.append(s)
    return out, blocks


def write_toy_dataset(root, n=60, seed=0, text_dim=16, video_dim=24, rate=0.3):
    """A small on-disk dataset: manifest plus text and video tensor files.

    Genre labels come from ``multilabel_targets``; text and video features
    are separable sequences from independent prototypes.  Video files hold
    raw frame runs (30-400 frames) that the loader subsamples.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    Y = multilabel_targets(n, len(GENRES), rng, rate)
    text = separable_sequences(Y, text_dim, rng, length=(5, 30))
    video = separable_sequences(Y, video_dim, rng, length=(30, 400), signal=2.0)
    ids = [f"movie{i:04d}" for i in range(n)]
    splits = make_splits(ids, seed)
    budgets = rng.integers(1_000, 250_000_000, size=n)
    records = []
    for i, sid in enumerate(ids):
        write_tensor(root / "text" / f"{sid}.mft", text[i])
        write_tensor(root / "video" / f"{sid}.mft", video[i])
        genres = [GENRES[k] for k in np.flatnonzero(Y[i])]
        records.append(Record(sid, splits[sid], genres, int(budgets[i]),
                              {"text": f"text/{sid}.mft", "video": f"video/{sid}.mft"}))
    write_manifest(Manifest(records), root / "manifest.jsonl")
    return root / "manifest.jsonl"
