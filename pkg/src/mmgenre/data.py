"""Dataset manifest, tensor files, score files, GloVe vectors, splits and labels."""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

GENRES = (
    "action", "animation", "biography", "comedy", "crime", "drama", "family",
    "fantasy", "horror", "mystery", "romance", "sci-fi", "thriller",
)
SPLITS = ("train", "val", "test")
MODALITIES = ("text", "video", "audio", "poster", "metadata")

# lower edge of each budget tier, USD
TIER_STARTS = (218, 900_000, 4_900_000, 19_500_000, 72_000_000)
TIER_MAX = 300_000_000
TIER_NAMES = tuple(f"tier-{k}" for k in range(1, 6))


class ManifestError(ValueError):
    pass


class TensorFormatError(ValueError):
    pass


class GloveFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# atomic writes


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# manifest


@dataclass
class Record:
    id: str
    split: str
    genres: list[str] = field(default_factory=list)
    budget_usd: int | None = None
    features: dict[str, str] = field(default_factory=dict)

    def genre_vector(self) -> np.ndarray:
        v = np.zeros(len(GENRES), dtype=np.int64)
        for g in self.genres:
            v[GENRES.index(g)] = 1
        return v

    def to_json(self) -> str:
        return json.dumps({
            "id": self.id, "split": self.split, "genres": self.genres,
            "budget_usd": self.budget_usd, "features": self.features,
        }, sort_keys=True)


@dataclass
class Manifest:
    records: list[Record] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict[str, Record]:
        return {r.id: r for r in self.records}

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def genre_matrix(self, records=None) -> np.ndarray:
        records = self.records if records is None else records
        return np.array([r.genre_vector() for r in records], dtype=np.int64).reshape(-1, len(GENRES))


def _parse_record(obj, lineno) -> Record:
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: record must be an object")
    try:
        rid = obj["id"]
        split = obj["split"]
    except KeyError as e:
        raise ManifestError(f"line {lineno}: missing field {e.args[0]!r}") from None
    if not isinstance(rid, str) or not rid:
        raise ManifestError(f"line {lineno}: id must be a non-empty string")
    if split not in SPLITS:
        raise ManifestError(f"line {lineno}: unknown split {split!r}")
    genres = obj.get("genres") or []
    for g in genres:
        if g not in GENRES:
            raise ManifestError(f"line {lineno}: unknown genre {g!r}")
    if len(set(genres)) != len(genres):
        raise ManifestError(f"line {lineno}: repeated genre")
    genres = sorted(genres, key=GENRES.index)
    budget = obj.get("budget_usd")
    if budget is not None and (not isinstance(budget, int) or isinstance(budget, bool) or budget <= 0):
        raise ManifestError(f"line {lineno}: budget_usd must be a positive integer")
    feats = obj.get("features") or {}
    if not isinstance(feats, dict) or any(k not in MODALITIES for k in feats):
        raise ManifestError(f"line {lineno}: features must map modality names to paths")
    return Record(rid, split, list(genres), budget, {k: str(v) for k, v in feats.items()})


def load_manifest(path) -> Manifest:
    """Read a JSON-lines manifest.  Relative feature paths resolve against the
    manifest's directory."""
    path = Path(path)
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"line {lineno}: malformed record ({e.msg})") from None
            rec = _parse_record(obj, lineno)
            if rec.id in seen:
                raise ManifestError(f"line {lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            rec.features = {k: str((path.parent / v)) if not os.path.isabs(v) else v
                            for k, v in rec.features.items()}
            records.append(rec)
    if not records:
        log.warning("manifest %s is empty", path)
    return Manifest(records)


def write_manifest(manifest: Manifest, path):
    text = "".join(r.to_json() + "\n" for r in manifest.records)
    atomic_write_text(path, text)


# ---------------------------------------------------------------------------
# splits


def split_sizes(n: int, fractions=(0.70, 0.10, 0.20)) -> tuple[int, int, int]:
    """Floor the val and test shares; the remainder goes to train."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ValueError("fractions must be three non-negative numbers summing to 1")
    n_val = math.floor(n * fractions[1] + 1e-9)
    n_test = math.floor(n * fractions[2] + 1e-9)
    return n - n_val - n_test, n_val, n_test


def make_splits(ids, seed=0, fractions=(0.70, 0.10, 0.20), sizes=None) -> dict[str, str]:
    """Random non-overlapping train/val/test assignment.

    ``sizes`` (train, val, test) overrides the fraction rule when exact
    counts are needed.
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    n = len(ids)
    if n < 3:
        raise ValueError("need at least 3 ids to split")
    if sizes is None:
        sizes = split_sizes(n, fractions)
    if len(sizes) != 3 or sum(sizes) != n or min(sizes) < 0:
        raise ValueError(f"split sizes {tuple(sizes)} do not partition {n} ids")
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_val, _ = sizes
    out = {}
    for rank, i in enumerate(order):
        out[ids[i]] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return out


# ---------------------------------------------------------------------------
# budget tiers


def budget_to_tier(budget_usd) -> int:
    """Tier 1..5.  Values inside a gap between published ranges go to the
    lower tier."""
    if budget_usd is None or budget_usd <= 0:
        raise ValueError("budget must be positive")
    if budget_usd < TIER_STARTS[0]:
        log.warning("budget %s below the tier-1 range; assigned tier 1", budget_usd)
    if budget_usd > TIER_MAX:
        log.warning("budget %s above the tier-5 range; assigned tier 5", budget_usd)
    tier = sum(1 for start in TIER_STARTS if budget_usd >= start)
    return max(tier, 1)


# ---------------------------------------------------------------------------
# binary tensor files

MAGIC = b"MFT1"
_MAX_ELEMENTS = 1 << 34


def write_tensor(path, array):
    a = np.asarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    atomic_write_bytes(path, header + np.ascontiguousarray(a).tobytes())


def decode_tensor(buf: bytes, name="<buffer>") -> np.ndarray:
    if len(buf) < 8:
        raise TensorFormatError(f"{name}: truncated header")
    if buf[:4] != MAGIC:
        raise TensorFormatError(f"{name}: bad magic {buf[:4]!r}")
    (rank,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 4 * rank
    if len(buf) < off:
        raise TensorFormatError(f"{name}: truncated dims (rank {rank})")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    count = 1
    for d in dims:
        count *= d
        if count > _MAX_ELEMENTS:
            raise TensorFormatError(f"{name}: dims {dims} overflow the element limit")
    need = off + 4 * count
    if len(buf) < need:
        raise TensorFormatError(f"{name}: truncated payload ({len(buf) - off} of {4 * count} bytes)")
    if len(buf) > need:
        raise TensorFormatError(f"{name}: {len(buf) - need} trailing bytes")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
    return data.astype(np.float64).reshape(dims)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read(), str(path))


# ---------------------------------------------------------------------------
# score files


@dataclass
class ModalityScores:
    ids: list[str]
    scores: np.ndarray
    modality: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or self.scores.shape[0] != len(self.ids):
            raise ValueError(f"scores {self.scores.shape} do not match {len(self.ids)} ids")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError(f"non-finite {self.modality or ''} scores")

    def aligned(self, ids) -> np.ndarray:
        """Rows reordered to ``ids``; missing ids are an error."""
        pos = {sid: i for i, sid in enumerate(self.ids)}
        missing = [sid for sid in ids if sid not in pos]
        if missing:
            raise KeyError(f"{self.modality or 'scores'}: no scores for {len(missing)} id(s), "
                           f"e.g. {missing[:3]}")
        return self.scores[[pos[sid] for sid in ids]]


def write_scores(path, ms: ModalityScores, class_names=None):
    K = ms.scores.shape[1]
    names = list(class_names) if class_names is not None else [f"c{k}" for k in range(K)]
    lines = [f"# modality={ms.modality}", "id\t" + "\t".join(names)]
    for sid, row in zip(ms.ids, ms.scores):
        lines.append(sid + "\t" + "\t".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_scores(path) -> ModalityScores:
    modality, ids, rows = "", [], []
    header_seen = False
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# modality="):
                    modality = line.split("=", 1)[1]
                continue
            if not header_seen:
                header_seen = True
                continue
            parts = line.split("\t")
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sample ids")
    return ModalityScores(ids, np.array(rows).reshape(len(ids), -1), modality)


# ---------------------------------------------------------------------------
# word vectors


class Embeddings:
    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self.vectors = vectors
        self.dim = dim

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, word):
        return word in self.vectors

    def get(self, word):
        """Vector for ``word`` or None when absent."""
        return self.vectors.get(word)

    def lookup_sequence(self, tokens, max_len=None):
        """Stack the vectors of in-vocabulary tokens; returns (T x dim, n_oov)."""
        vecs, oov = [], 0
        for tok in tokens:
            v = self.vectors.get(tok)
            if v is None:
                oov += 1
                continue
            vecs.append(v)
            if max_len is not None and len(vecs) >= max_len:
                break
        arr = np.array(vecs, dtype=np.float64).reshape(len(vecs), self.dim)
        return arr, oov


def build_token_vocab(token_lists, min_count=1) -> dict[str, int]:
    """Word -> id, most frequent first (ties by word).  Rare words are left out."""
    counts: dict[str, int] = {}
    for toks in token_lists:
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
    words = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return {w: i for i, w in enumerate(words)}


def tokens_to_ids(tokens, vocab: dict[str, int], max_len=None):
    """Ids of in-vocabulary tokens (others skipped); returns (ids, n_oov)."""
    ids, oov = [], 0
    for tok in tokens:
        i = vocab.get(tok)
        if i is None:
            oov += 1
            continue
        ids.append(i)
        if max_len is not None and len(ids) >= max_len:
            break
    return np.array(ids, dtype=np.int64), oov


def load_glove(path, dim=None) -> Embeddings:
    """Read ``word v1 ... vdim`` lines.  Without ``dim`` the first line sets it."""
    vectors: dict[str, np.ndarray] = {}
    dups = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            if dim is None:
                dim = len(parts) - 1
            if len(parts) != dim + 1:
                raise GloveFormatError(
                    f"{path}: line {lineno} has {len(parts) - 1} values, expected {dim}")
            word = parts[0]
            if word in vectors:
                dups += 1
                continue
            try:
                vectors[word] = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise GloveFormatError(f"{path}: line {lineno} has a non-numeric value") from None
    if dups:
        log.warning("%s: %d duplicate word(s); first occurrence kept", path, dups)
    return Embeddings(vectors, dim or 0)


def tokenize(text: str) -> list[str]:
    out, cur = [], []
    for ch in text.lower():
        if ch.isalnum() or ch in "'-":
            cur.append(ch)
        elif cur:
            out.append("".join(cur))
            cur = []
    if cur:
        out.append("".join(cur))
    return out
