"""Averaged word vectors (fastText) and averaged frame features (fastVideo).

Plots become sequences of word vectors, trailers become sequences of frame
descriptors.  A unigram model averages the sequence, so word or frame order
never matters; bigram and trigram models insert a temporal convolution first.
"""

# %%
import numpy as np

from mmgenre import synthetic
from mmgenre.data import Embeddings, GENRES
from mmgenre.encoders import (FeatureSequence, TrainConfig, clip_eval_lstm, clip_windows,
                              encode_fasttext, make_encoder, subsample_indices, train_encoder)

rng = np.random.default_rng(1)

# %% [markdown]
# Tokens map to embedding rows.  Unknown words are dropped and counted.

# %%
vocab = {w: rng.standard_normal(8) for w in "a detective hunts the killer in rainy city".split()}
emb = Embeddings(vocab, 8)
plot = "A weary detective hunts the killer through a rainy city"
arr, oov = emb.lookup_sequence(plot.lower().split(), max_len=3000)
print(f"{arr.shape[0]} known tokens, {oov} out of vocabulary")

model = make_encoder("text", len(GENRES), input_dim=8, seed=0)
a = encode_fasttext(FeatureSequence("text", arr), model)
b = encode_fasttext(FeatureSequence("text", arr[::-1]), model)
print("unigram scores unchanged by reversing the plot:", np.array_equal(a, b))

bigram = make_encoder("text", len(GENRES), ngram="bigram", input_dim=8, seed=0)
print("bigram scores unchanged by reversing the plot:",
      np.array_equal(bigram.score(arr), bigram.score(arr[::-1])))

# %% [markdown]
# Long trailers keep one frame in ten, capped at 200 frames.

# %%
for n in (95, 1800, 4000):
    print(f"{n:5d} raw frames -> {len(subsample_indices(n))} kept")

# %% [markdown]
# Recurrent video models are scored on short clips: twelve 16-frame clips
# and four 49-frame clips, with the logits averaged.

# %%
print("clip windows for 200 frames:", len(clip_windows(200)))
lstm = make_encoder("video", len(GENRES), aggregator="lstm", hidden=8, input_dim=16, seed=2)
frames = FeatureSequence("video", rng.standard_normal((200, 16)))
print("clip-averaged logits:", clip_eval_lstm(frames, lstm)[:4].round(3), "...")

# %% [markdown]
# Training on synthetic data whose time-average separates the genres.
# Settings follow the usual protocol: batch 32, dropout 0.5, Adam at 1e-3.

# %%
Y = synthetic.multilabel_targets(700, len(GENRES), rng)
seqs = synthetic.separable_sequences(Y, 64, rng)
clf = make_encoder("text", len(GENRES), input_dim=64, seed=3)
hist = train_encoder(clf, seqs[:600], Y[:600], seqs[600:], Y[600:], TrainConfig(epochs=60))
for e in (0, 19, 39, 59):
    print(f"epoch {e + 1:3d}  train loss {hist.train_loss[e]:.3f}  val mAP {hist.val_map[e]:.3f}")
