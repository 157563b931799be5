"""Metadata features and a from-scratch Gini random forest."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .data import Embeddings, ModalityScores, tokenize

log = logging.getLogger(__name__)

NUMERIC_FIELDS = (
    "cast_total_facebook_likes", "duration", "facenumber_in_poster",
    "num_critic_reviews", "movie_facebook_likes", "num_voted_users",
)
CATEGORICAL_FIELDS = (
    "director_name", "actor_1_name", "actor_2_name", "actor_3_name",
    "language", "content_rating",
)
TITLE_FIELD = "movie_title"
METADATA_FIELDS = NUMERIC_FIELDS + CATEGORICAL_FIELDS + (TITLE_FIELD,)
# the three actor columns share one code table
_TABLE_OF = {f: ("actor" if f.startswith("actor_") else f) for f in CATEGORICAL_FIELDS}

MISSING_NUMERIC = -1.0
LOGIT_CLIP = 1e-6


# ---------------------------------------------------------------------------
# metadata records


@dataclass
class MetadataRecord:
    id: str = ""
    numeric: dict[str, float | None] = field(default_factory=dict)
    categorical: dict[str, str | None] = field(default_factory=dict)
    movie_title: str | None = None

    @classmethod
    def from_row(cls, row: dict, counts: Counter | None = None) -> MetadataRecord:
        """Parse one table row.  Empty strings and negative numbers are missing."""
        rec = cls(id=str(row.get("id", "")).strip())
        for f in NUMERIC_FIELDS:
            raw = (row.get(f) or "").strip()
            val = None
            if raw:
                try:
                    val = float(raw)
                except ValueError:
                    val = None
                if val is not None and (val < 0 or not math.isfinite(val)):
                    val = None
            if val is None and counts is not None:
                counts[f] += 1
            rec.numeric[f] = val
        for f in CATEGORICAL_FIELDS:
            raw = (row.get(f) or "").strip()
            if not raw and counts is not None:
                counts[f] += 1
            rec.categorical[f] = raw or None
        title = (row.get(TITLE_FIELD) or "").strip()
        rec.movie_title = title or None
        return rec


def read_metadata_table(path, delimiter=None) -> list[MetadataRecord]:
    """Delimiter-separated table with a header naming the metadata columns
    (plus an ``id`` column).  Tab is assumed for .tsv files, comma otherwise."""
    if delimiter is None:
        delimiter = "\t" if str(path).endswith(".tsv") else ","
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        unknown = [h for h in header if h not in METADATA_FIELDS and h != "id"]
        absent = [f for f in METADATA_FIELDS if f not in header]
        if unknown or absent or "id" not in header:
            raise ValueError(f"{path}: header mismatch; unknown {unknown}, missing "
                             f"{absent + ([] if 'id' in header else ['id'])}")
        counts: Counter = Counter()
        records = [MetadataRecord.from_row(row, counts) for row in reader]
    if counts:
        log.info("%s: missing values per column %s", path, dict(counts))
    return records


class CategoryTable:
    """Frequency-rank codes: 1 is the most frequent training value, 0 unseen."""

    def __init__(self, values):
        counts = Counter(v for v in values if v is not None)
        ranked = sorted(counts, key=lambda v: (-counts[v], v))
        self.code_of = {v: i + 1 for i, v in enumerate(ranked)}
        self.values = ranked

    def __len__(self):
        return len(self.values)

    def encode(self, value) -> int:
        return self.code_of.get(value, 0)

    def decode(self, code: int):
        return None if code == 0 else self.values[code - 1]


def build_vocab(train_records) -> dict[str, CategoryTable]:
    tables = {}
    for f in CATEGORICAL_FIELDS:
        name = _TABLE_OF[f]
        if name in tables:
            continue
        cols = [g for g in CATEGORICAL_FIELDS if _TABLE_OF[g] == name]
        tables[name] = CategoryTable([r.categorical.get(g) for r in train_records for g in cols])
    return tables


def encode_metadata(rec: MetadataRecord, vocab: dict[str, CategoryTable],
                    glove: Embeddings | None = None, dim: int | None = None) -> np.ndarray:
    """6 numeric slots, 6 categorical codes, then the mean title word vector."""
    if dim is None:
        dim = glove.dim if glove is not None else 300
    out = np.empty(len(NUMERIC_FIELDS) + len(CATEGORICAL_FIELDS) + dim)
    for i, f in enumerate(NUMERIC_FIELDS):
        v = rec.numeric.get(f)
        out[i] = MISSING_NUMERIC if v is None else v
    base = len(NUMERIC_FIELDS)
    for j, f in enumerate(CATEGORICAL_FIELDS):
        out[base + j] = vocab[_TABLE_OF[f]].encode(rec.categorical.get(f))
    title = np.zeros(dim)
    if rec.movie_title and glove is not None:
        vecs, _ = glove.lookup_sequence(tokenize(rec.movie_title))
        if len(vecs):
            title = vecs.mean(axis=0)
    out[base + len(CATEGORICAL_FIELDS):] = title
    return out


# ---------------------------------------------------------------------------
# trees


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


def best_split(X, y, n_classes, features, min_leaf=1):
    """Lowest weighted Gini over the given features and midpoint thresholds.

    Returns ``(feature, threshold, impurity)`` or None when no valid split
    exists.  Features are tried in the given order; a later candidate must
    be strictly better to win.
    """
    n = len(y)
    best = None
    onehot = np.eye(n_classes)[y]
    total = onehot.sum(axis=0)
    for f in features:
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        left = np.cumsum(onehot[order], axis=0)[:-1]  # counts for split after row i
        n_left = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        right = total - left
        nl = n_left[:, None].astype(np.float64)
        nr = (n - n_left)[:, None].astype(np.float64)
        g_left = 1.0 - ((left / nl) ** 2).sum(axis=1)
        g_right = 1.0 - ((right / nr) ** 2).sum(axis=1)
        imp = (nl[:, 0] * g_left + nr[:, 0] * g_right) / n
        imp = np.where(valid, imp, np.inf)
        i = int(np.argmin(imp))
        if best is None or imp[i] < best[2]:
            best = (int(f), float((xs[i] + xs[i + 1]) / 2.0), float(imp[i]))
    return best


class DecisionTree:
    """Binary tree with ``x[feature] <= threshold`` going left.

    Nodes are stored in flat arrays; leaves have ``feature == -1`` and a
    class-probability row in ``value``.
    """

    def __init__(self, max_features=None, min_leaf=2, max_depth=None, rng=None):
        self.max_features = max_features
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.rng = np.random.default_rng(rng)

    def _n_try(self, n_features):
        mf = self.max_features
        if mf is None or mf == "all":
            return n_features
        if mf == "sqrt":
            return max(1, int(math.sqrt(n_features)))
        if isinstance(mf, float):
            return max(1, int(mf * n_features))
        return max(1, min(int(mf), n_features))

    def fit(self, X, y, n_classes=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = int(n_classes if n_classes is not None else y.max() + 1)
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node():
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(None)
            return len(feature) - 1

        n_try = self._n_try(X.shape[1])
        stack = [(new_node(), np.arange(len(y)), 0)]
        while stack:
            node, idx, depth = stack.pop()
            counts = np.bincount(y[idx], minlength=self.n_classes).astype(np.float64)
            value[node] = counts / counts.sum()
            if (counts > 0).sum() <= 1 or len(idx) < 2 * self.min_leaf:
                continue
            if self.max_depth is not None and depth >= self.max_depth:
                continue
            # constant columns do not count toward the max_features budget
            Xn = X[idx]
            varies = Xn.max(axis=0) > Xn.min(axis=0)
            perm = self.rng.permutation(X.shape[1])
            feats = perm[varies[perm]][:n_try]
            split = best_split(X[idx], y[idx], self.n_classes, feats, self.min_leaf)
            if split is None:
                continue
            f, thr, _ = split
            go_left = X[idx, f] <= thr
            li, ri = new_node(), new_node()
            feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
            stack.append((ri, idx[~go_left], depth + 1))
            stack.append((li, idx[go_left], depth + 1))

        self.feature = np.array(feature, dtype=np.int64)
        self.threshold = np.array(threshold)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.value = np.array(value)
        return self

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def apply(self, X) -> np.ndarray:
        """Leaf index for every row."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            i = np.flatnonzero(active)
            n = node[i]
            go_left = X[i, self.feature[n]] <= self.threshold[n]
            node[i] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def to_dict(self):
        return {"n_classes": self.n_classes, "feature": self.feature.tolist(),
                "threshold": self.threshold.tolist(), "left": self.left.tolist(),
                "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d):
        t = cls()
        t.n_classes = d["n_classes"]
        t.feature = np.array(d["feature"], dtype=np.int64)
        t.threshold = np.array(d["threshold"])
        t.left = np.array(d["left"], dtype=np.int64)
        t.right = np.array(d["right"], dtype=np.int64)
        t.value = np.array(d["value"])
        return t


class BinaryForest:
    """Bagged trees for one binary label; votes are per-tree majority classes."""

    def __init__(self, n_trees=100, max_features="sqrt", min_leaf=2, max_depth=None, seed=0):
        self.n_trees, self.max_features = n_trees, max_features
        self.min_leaf, self.max_depth, self.seed = min_leaf, max_depth, seed
        self.trees: list[DecisionTree] = []

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n = len(y)
        self.trees = []
        for child in np.random.SeedSequence(self.seed).spawn(self.n_trees):
            rng = np.random.default_rng(child)
            boot = rng.integers(0, n, size=n)
            tree = DecisionTree(self.max_features, self.min_leaf, self.max_depth, rng)
            self.trees.append(tree.fit(X[boot], y[boot], n_classes=2))
        return self

    def votes(self, X) -> np.ndarray:
        """Number of trees whose leaf majority is positive, per row."""
        X = np.asarray(X, dtype=np.float64)
        return np.sum([t.predict_proba(X)[:, 1] > 0.5 for t in self.trees], axis=0)

    def vote_fraction(self, X) -> np.ndarray:
        return self.votes(X) / len(self.trees)


class RandomForest:
    """One-vs-rest binary forests, one per label column."""

    def __init__(self, n_trees=100, max_features="sqrt", min_leaf=2, max_depth=None, seed=0):
        self.params = dict(n_trees=n_trees, max_features=max_features, min_leaf=min_leaf,
                           max_depth=max_depth)
        self.seed = seed
        self.forests: list[BinaryForest] = []

    def fit(self, X, Y):
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.int64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if len(X) < 2:
            raise ValueError("need at least 2 samples")
        seeds = np.random.SeedSequence(self.seed).spawn(Y.shape[1])
        self.forests = []
        for k in range(Y.shape[1]):
            if not Y[:, k].any():
                log.warning("label %d has no positive training sample", k)
            seed_k = int(seeds[k].generate_state(1)[0])
            self.forests.append(BinaryForest(seed=seed_k, **self.params).fit(X, Y[:, k]))
        return self

    def vote_fraction(self, X) -> np.ndarray:
        return np.stack([f.vote_fraction(X) for f in self.forests], axis=1)

    def predict(self, X) -> np.ndarray:
        return (self.vote_fraction(X) > 0.5).astype(np.int64)

    def to_dict(self):
        return {"params": self.params, "seed": self.seed,
                "forests": [[t.to_dict() for t in f.trees] for f in self.forests]}

    @classmethod
    def from_dict(cls, d):
        rf = cls(seed=d["seed"], **d["params"])
        for trees in d["forests"]:
            bf = BinaryForest(seed=0, **rf.params)
            bf.trees = [DecisionTree.from_dict(t) for t in trees]
            rf.forests.append(bf)
        return rf


def train_forest(X, Y, n_trees=100, max_features="sqrt", min_leaf=2, max_depth=None, seed=0):
    return RandomForest(n_trees, max_features, min_leaf, max_depth, seed).fit(X, Y)


def votes_to_logits(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), LOGIT_CLIP, 1.0 - LOGIT_CLIP)
    return np.log(p) - np.log1p(-p)


def forest_scores(forest: RandomForest, X, ids=None, modality="metadata") -> ModalityScores:
    """Vote fractions mapped to clipped logits so they fuse with neural scores."""
    z = votes_to_logits(forest.vote_fraction(X))
    ids = [str(i) for i in range(len(z))] if ids is None else list(ids)
    return ModalityScores(ids, z, modality)
