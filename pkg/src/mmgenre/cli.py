"""Batch entry points: train, eval, fuse, report-attention, spectrogram, make-splits.

Run ``python -m mmgenre <command> --help`` for the flags.  Log verbosity
comes from ``--log-level`` or the ``MMGENRE_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import audio, data, encoders, forest, fusion, metrics
from .data import GENRES, TIER_NAMES, ModalityScores

log = logging.getLogger("mmgenre")

DEFAULT_CONFIG = {
    "task": "genres",
    "modality": "text",
    "encoder": {"ngram": "unigram", "aggregator": "mean_pool", "hidden": 64, "input_dim": None,
                "embedding": "pretrained"},
    "hyperparams": {"lr0": 0.001, "lr_decay": 0.001, "epochs": 100, "batch": 32,
                    "dropout": 0.5, "seed": 0},
    "forest": {"n_trees": 100, "max_features": "sqrt", "min_leaf": 2, "max_depth": None},
    "audio": {"per_clip": False},
    "video": {"subsample": True, "clip_eval": True, "crop_lengths": [16, 49]},
    "paths": {"manifest": None, "out_dir": None, "glove": None, "metadata": None},
}


class CliError(RuntimeError):
    pass


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        with open(path, encoding="utf-8") as fh:
            cfg = _merge(cfg, json.load(fh))
    cfg = _merge(cfg, overrides)
    hp = cfg["hyperparams"]
    if cfg["task"] not in ("genres", "budget"):
        raise CliError(f"unknown task {cfg['task']!r}")
    if cfg["modality"] not in data.MODALITIES:
        raise CliError(f"unknown modality {cfg['modality']!r}")
    if cfg["encoder"]["embedding"] not in ("pretrained", "random"):
        raise CliError("encoder.embedding must be 'pretrained' or 'random'")
    if hp["epochs"] < 1 or hp["batch"] < 1 or not 0 <= hp["dropout"] < 1:
        raise CliError("need epochs >= 1, batch >= 1 and dropout in [0, 1)")
    return cfg


def _class_names(task):
    return list(GENRES) if task == "genres" else list(TIER_NAMES)


def labels_for(records, task):
    """Genre multi-hot matrix, or tier indices 0..4 for the budget task."""
    if task == "genres":
        return np.array([r.genre_vector() for r in records], dtype=np.int64).reshape(-1, len(GENRES))
    missing = [r.id for r in records if r.budget_usd is None]
    if missing:
        raise CliError(f"budget task: {len(missing)} record(s) without budget_usd: {missing[:10]}")
    return np.array([data.budget_to_tier(r.budget_usd) - 1 for r in records], dtype=np.int64)


# ---------------------------------------------------------------------------
# feature loading


def _load_text(path, glove, sid):
    if str(path).endswith(".txt"):
        if glove is None:
            raise CliError("raw plot text needs paths.glove")
        tokens = data.tokenize(Path(path).read_text(encoding="utf-8"))
        arr, oov = glove.lookup_sequence(tokens, encoders.MAX_TEXT_TOKENS)
        if tokens:
            log.debug("%s: OOV rate %.3f", sid, oov / len(tokens))
        return arr
    return data.read_tensor(path)


def _check_feature_files(records, modality):
    missing = [r.id for r in records
               if modality not in r.features or not os.path.exists(r.features[modality])]
    if missing:
        raise CliError(f"{modality}: missing feature files for {len(missing)} sample(s): "
                       + ", ".join(missing))


def token_id_sequences(splits, max_len=encoders.MAX_TEXT_TOKENS):
    """Raw plot files -> token id arrays, vocabulary taken from the train split."""
    tokens = {}
    for split, recs in splits.items():
        _check_feature_files(recs, "text")
        bad = [r.id for r in recs if not str(r.features["text"]).endswith(".txt")]
        if bad:
            raise CliError(f"random embeddings need raw .txt plots; not text for: {', '.join(bad)}")
        tokens[split] = [data.tokenize(Path(r.features["text"]).read_text(encoding="utf-8"))
                         for r in recs]
    vocab = data.build_token_vocab(tokens.get("train", []))
    if not vocab:
        raise CliError("training plots contain no tokens")
    seqs = {s: [data.tokens_to_ids(t, vocab, max_len)[0] for t in toks] for s, toks in tokens.items()}
    return seqs, vocab


def _load_glove(cfg):
    if not cfg["paths"].get("glove"):
        return None
    return data.load_glove(cfg["paths"]["glove"], cfg["encoder"].get("input_dim"))


def load_sequences(records, modality, cfg, glove=None):
    """Feature sequences per record; reports every missing file before failing."""
    _check_feature_files(records, modality)
    seqs = []
    for r in records:
        path = r.features[modality]
        if modality == "text":
            seqs.append(encoders.FeatureSequence("text", _load_text(path, glove, r.id), r.id))
        elif modality == "video":
            x = data.read_tensor(path)
            if cfg["video"]["subsample"]:
                x = encoders.subsample_frames(x)
            seqs.append(encoders.FeatureSequence("video", x, r.id))
        elif modality == "poster":
            seqs.append(encoders.FeatureSequence("poster", data.read_tensor(path).reshape(1, -1), r.id))
        elif modality == "audio":
            seqs.append(data.read_tensor(path))
        else:
            raise CliError(f"no sequence loader for {modality}")
    return seqs


# ---------------------------------------------------------------------------
# train


def _write_json(path, obj):
    data.atomic_write_text(path, json.dumps(obj, sort_keys=True) + "\n")


def cmd_train(cfg) -> dict:
    paths = cfg["paths"]
    if not paths.get("manifest") or not paths.get("out_dir"):
        raise CliError("train needs paths.manifest and paths.out_dir")
    manifest = data.load_manifest(paths["manifest"])
    out = Path(paths["out_dir"])
    task, modality = cfg["task"], cfg["modality"]
    names = _class_names(task)
    splits = {s: manifest.split(s) for s in data.SPLITS}
    if not splits["train"]:
        raise CliError("manifest has no training records")
    labels = {s: labels_for(recs, task) for s, recs in splits.items() if recs}
    if modality == "metadata":
        scores = _train_metadata(cfg, splits, labels, out)
    else:
        scores = _train_neural(cfg, splits, labels, out)
    written = {}
    for split, ms in scores.items():
        p = out / f"scores_{split}.tsv"
        data.write_scores(p, ms, names)
        written[split] = str(p)
    return written


def _train_neural(cfg, splits, labels, out):
    task, modality = cfg["task"], cfg["modality"]
    hp, enc = cfg["hyperparams"], cfg["encoder"]
    vocab = None
    if modality == "text" and enc["embedding"] == "random":
        seqs, vocab = token_id_sequences({s: recs for s, recs in splits.items() if recs})
        input_dim = enc.get("input_dim") or encoders.DEFAULT_DIMS["text"]
    else:
        glove = _load_glove(cfg)
        seqs = {s: load_sequences(recs, modality, cfg, glove) for s, recs in splits.items() if recs}
        if modality == "audio":
            seqs = {s: [audio.spectrogram_sequences(x, per_clip=False, source_id=r.id)[0]
                        for x, r in zip(v, splits[s])] for s, v in seqs.items()}
        input_dim = enc.get("input_dim") or seqs["train"][0].data.shape[1]
    per_clip = cfg["audio"]["per_clip"]
    multilabel = task == "genres"
    model = encoders.make_encoder(
        modality, len(_class_names(task)), ngram=enc["ngram"], aggregator=enc["aggregator"],
        hidden=enc["hidden"], dropout=hp["dropout"], seed=hp["seed"], input_dim=input_dim,
        multilabel=multilabel, vocab_size=None if vocab is None else len(vocab))
    recurrent = enc["aggregator"] in ("lstm", "bilstm")
    crop = None
    if modality == "video" and recurrent and cfg["video"].get("crop_lengths"):
        crop = tuple(cfg["video"]["crop_lengths"])
    tc = encoders.TrainConfig(epochs=hp["epochs"], batch_size=hp["batch"], lr0=hp["lr0"],
                              lr_decay=hp["lr_decay"], seed=hp["seed"], crop_lengths=crop)
    log.info("training %s/%s model with %d parameters", modality, enc["aggregator"], model.n_params())
    hist = encoders.train_encoder(model, seqs["train"], labels["train"], seqs.get("val"),
                                  labels.get("val"), tc)
    meta = {"kind": "sequence", "modality": modality, "task": task}
    if vocab is not None:
        meta["vocab"] = sorted(vocab, key=vocab.get)
    _write_json(out / "model.json", {**meta, **model.to_dict()})
    data.atomic_write_text(out / "loss_log.tsv", hist.to_tsv())

    clip_eval = modality == "video" and recurrent and cfg["video"]["clip_eval"]
    scores = {}
    for split, recs in splits.items():
        if not recs:
            continue
        ids = [r.id for r in recs]
        if modality == "audio" and per_clip:
            raw = load_sequences(recs, "audio", cfg)
            z = np.stack([audio.encode_audio(x, model, per_clip=True) for x in raw])
            scores[split] = ModalityScores(ids, z, modality)
        else:
            scores[split] = encoders.score_sequences(model, seqs[split], ids, modality, clip_eval)
    return scores


def _train_metadata(cfg, splits, labels, out):
    mpath = cfg["paths"].get("metadata")
    if not mpath:
        raise CliError("metadata modality needs paths.metadata")
    table = {r.id: r for r in forest.read_metadata_table(mpath)}
    missing = [r.id for recs in splits.values() for r in recs if r.id not in table]
    if missing:
        raise CliError(f"metadata: no row for {len(missing)} sample(s): " + ", ".join(missing))
    glove = _load_glove(cfg)
    vocab = forest.build_vocab([table[r.id] for r in splits["train"]])
    dim = glove.dim if glove is not None else 300
    X = {s: np.array([forest.encode_metadata(table[r.id], vocab, glove, dim) for r in recs])
         for s, recs in splits.items() if recs}
    Y = labels["train"]
    if cfg["task"] == "budget":
        Y = np.eye(len(TIER_NAMES), dtype=np.int64)[Y]
    fp = cfg["forest"]
    rf = forest.train_forest(X["train"], Y, fp["n_trees"], fp["max_features"], fp["min_leaf"],
                             fp["max_depth"], seed=cfg["hyperparams"]["seed"])
    _write_json(out / "model.json", {"kind": "forest", "modality": "metadata", "task": cfg["task"],
                                     "vocab": {k: t.values for k, t in vocab.items()},
                                     "forest": rf.to_dict()})
    return {s: forest.forest_scores(rf, X[s], [r.id for r in splits[s]]) for s in X}


# ---------------------------------------------------------------------------
# eval / fuse / report


def cmd_eval(scores_path, manifest_path, split="test", task="genres") -> metrics.EvalReport:
    ms = data.read_scores(scores_path)
    manifest = data.load_manifest(manifest_path)
    recs = manifest.split(split)
    ids = [r.id for r in recs]
    extra = sorted(set(ms.ids) - set(ids))
    missing = sorted(set(ids) - set(ms.ids))
    if extra or missing:
        raise CliError(f"score ids do not match the {split} split: {len(missing)} missing "
                       f"{missing[:5]}, {len(extra)} unexpected {extra[:5]}")
    S = ms.aligned(ids)
    Y = labels_for(recs, task)
    names = _class_names(task)
    if S.shape[1] != len(names):
        raise CliError(f"scores have {S.shape[1]} classes, task {task} has {len(names)}")
    return metrics.evaluate(S, Y, names, multilabel=(task == "genres"))


def _read_modality_dir(spec):
    if "=" not in spec:
        raise CliError(f"--scores expects NAME=DIR, got {spec!r}")
    name, d = spec.split("=", 1)
    out = {}
    for split in data.SPLITS:
        p = Path(d) / f"scores_{split}.tsv"
        if p.exists():
            out[split] = data.read_scores(p)
    if "val" not in out:
        raise CliError(f"{name}: {d} has no scores_val.tsv")
    return name, out


def cmd_fuse(score_specs, manifest_path, out_dir, task="genres", seed=0) -> fusion.FusionModel:
    if len(score_specs) < 2:
        raise fusion.FusionConfigError("fusion needs score files for at least two modalities")
    mods = dict(_read_modality_dir(s) for s in score_specs)
    if len(mods) < 2:
        raise fusion.FusionConfigError("fusion needs at least two distinct modalities")
    manifest = data.load_manifest(manifest_path)
    names = _class_names(task)
    val = manifest.split("val")
    ids = [r.id for r in val]
    Y = labels_for(val, task)
    if task == "budget":
        Y = np.eye(len(names), dtype=np.int64)[Y]
    arrays = [mods[m]["val"].aligned(ids) for m in mods]
    model = fusion.train_fusion(arrays, Y, list(mods), fusion.FusionTrainConfig(seed=seed),
                                class_names=names)
    out = Path(out_dir)
    _write_json(out / "fusion.json", model.to_dict())
    data.atomic_write_text(out / "attention.tsv", fusion.report_modal_attention(model))
    for split in data.SPLITS:
        if all(split in v for v in mods.values()):
            split_ids = [r.id for r in manifest.split(split)]
            fused = model.fuse({m: v[split] for m, v in mods.items()}, split_ids)
            data.write_scores(out / f"scores_{split}.tsv", fused, names)
    return model


def cmd_report_attention(model_path) -> str:
    with open(model_path, encoding="utf-8") as fh:
        model = fusion.FusionModel.from_dict(json.load(fh))
    return fusion.report_modal_attention(model)


def cmd_spectrogram(wav_dir, out_dir, seed=0) -> tuple[int, int]:
    wavs = sorted(Path(wav_dir).glob("*.wav"))
    done = skipped = 0
    for p in wavs:
        try:
            spec = audio.trailer_spectrogram(audio.read_wav(p), rng_seed=seed)
        except Exception as e:  # decode failures are skipped, not fatal
            log.warning("skipping %s: %s", p.name, e)
            skipped += 1
            continue
        data.write_tensor(Path(out_dir) / f"{p.stem}.mft", spec)
        done += 1
    return done, skipped


def cmd_make_splits(manifest_path, out_path, seed=0, sizes=None, fractions=(0.7, 0.1, 0.2)):
    manifest = data.load_manifest(manifest_path)
    assign = data.make_splits([r.id for r in manifest], seed, fractions, sizes)
    out_dir = Path(out_path).resolve().parent
    recs = []
    for r in manifest:
        feats = {k: os.path.relpath(v, out_dir) for k, v in r.features.items()}
        recs.append(data.Record(r.id, assign[r.id], r.genres, r.budget_usd, feats))
    data.write_manifest(data.Manifest(recs), out_path)
    return assign


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmgenre", description=__doc__.splitlines()[0])
    ap.add_argument("--log-level", default=os.environ.get("MMGENRE_LOG_LEVEL", "WARNING"))
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one modality model and write score files")
    t.add_argument("--config", help="JSON run configuration")
    t.add_argument("--manifest")
    t.add_argument("--out", dest="out_dir")
    t.add_argument("--task", choices=["genres", "budget"])
    t.add_argument("--modality", choices=list(data.MODALITIES))
    t.add_argument("--ngram", choices=list(encoders.NGRAM_WIDTH))
    t.add_argument("--aggregator", choices=list(encoders.AGGREGATORS))
    t.add_argument("--hidden", type=int)
    t.add_argument("--embedding", choices=["pretrained", "random"],
                   help="text only: GloVe/precomputed vectors (default) or a trainable embedding")
    t.add_argument("--input-dim", type=int, help="feature width; embedding width with --embedding random")
    t.add_argument("--epochs", type=int, help="default 100")
    t.add_argument("--batch-size", type=int, help="default 32")
    t.add_argument("--lr", type=float, help="initial learning rate, default 0.001")
    t.add_argument("--dropout", type=float, help="default 0.5")
    t.add_argument("--seed", type=int, help="default 0")
    t.add_argument("--glove", help="GloVe text file (raw .txt plots, metadata titles)")
    t.add_argument("--metadata", help="metadata table for the metadata modality")
    t.add_argument("--n-trees", type=int, help="forest size, default 100")

    e = sub.add_parser("eval", help="average-precision report for a score file")
    e.add_argument("--scores", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test", choices=list(data.SPLITS))
    e.add_argument("--task", default="genres", choices=["genres", "budget"])
    e.add_argument("--label", default="", help="row label for the printed table")
    e.add_argument("--out", help="also write the report as TSV")

    f = sub.add_parser("fuse", help="train modal-attention fusion on validation scores")
    f.add_argument("--scores", action="append", default=[], metavar="NAME=DIR",
                   help="directory holding scores_{train,val,test}.tsv for one modality")
    f.add_argument("--manifest", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--task", default="genres", choices=["genres", "budget"])
    f.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report-attention", help="print the per-class modality weights")
    r.add_argument("--model", required=True)
    r.add_argument("--out")

    s = sub.add_parser("spectrogram", help="WAV files -> 4x128x1407 log-mel tensors")
    s.add_argument("--wav-dir", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=0)

    m = sub.add_parser("make-splits", help="assign random train/val/test splits")
    m.add_argument("--manifest", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--sizes", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    return ap


def _train_overrides(args) -> dict:
    o: dict = {"encoder": {}, "hyperparams": {}, "paths": {}, "forest": {}}
    for key, dest in [("task", "task"), ("modality", "modality")]:
        if getattr(args, key) is not None:
            o[dest] = getattr(args, key)
    for key in ("ngram", "aggregator", "hidden", "embedding", "input_dim"):
        if getattr(args, key) is not None:
            o["encoder"][key] = getattr(args, key)
    for key, dest in [("epochs", "epochs"), ("batch_size", "batch"), ("lr", "lr0"),
                      ("dropout", "dropout"), ("seed", "seed")]:
        if getattr(args, key) is not None:
            o["hyperparams"][dest] = getattr(args, key)
    for key in ("manifest", "out_dir", "glove", "metadata"):
        if getattr(args, key) is not None:
            o["paths"][key] = getattr(args, key)
    if args.n_trees is not None:
        o["forest"]["n_trees"] = args.n_trees
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            cfg = load_config(args.config, _train_overrides(args))
            written = cmd_train(cfg)
            for split, p in written.items():
                print(f"{split}\t{p}")
        elif args.command == "eval":
            rep = cmd_eval(args.scores, args.manifest, args.split, args.task)
            print(rep.to_table(args.label), end="")
            if args.out:
                data.atomic_write_text(args.out, rep.to_tsv())
        elif args.command == "fuse":
            model = cmd_fuse(args.scores, args.manifest, args.out, args.task, args.seed)
            print(fusion.report_modal_attention(model), end="")
        elif args.command == "report-attention":
            table = cmd_report_attention(args.model)
            print(table, end="")
            if args.out:
                data.atomic_write_text(args.out, table)
        elif args.command == "spectrogram":
            done, skipped = cmd_spectrogram(args.wav_dir, args.out_dir, args.seed)
            print(f"wrote {done} spectrogram(s), skipped {skipped}")
        elif args.command == "make-splits":
            assign = cmd_make_splits(args.manifest, args.out, args.seed, args.sizes)
            counts = {s: sum(v == s for v in assign.values()) for s in data.SPLITS}
            print("\t".join(f"{k}={v}" for k, v in counts.items()))
    except (CliError, ValueError, KeyError, OSError) as e:
        log.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
