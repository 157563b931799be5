"""Layers, losses and Adam on plain numpy arrays.

Every layer returns ``(output, cache)`` from ``forward`` and turns an
upstream gradient back into an input gradient with ``backward(dy, cache)``,
adding parameter gradients to ``param.grad`` along the way.
"""

# %%
import numpy as np

from mmgenre import nn

rng = np.random.default_rng(0)

# %% [markdown]
# A tiny classifier: mean over time, then an affine map to 3 logits.
# Sequences can have any length T; the pooled vector is always D wide.

# %%
pool = nn.MeanPool()
head = nn.Affine(4, 3, rng)
x = rng.standard_normal((7, 4))          # T=7 frames, D=4 features
h, pool_cache = pool.forward(x)
z, head_cache = head.forward(h)
print("pooled:", h.round(3))
print("logits:", z.round(3))

# %% [markdown]
# Check the backward pass against central differences on one weight.

# %%
target = np.array([1, 0, 1])
loss, dz = nn.weighted_bce_loss(z[None], target[None])
head.W.zero_grad()
head.backward(dz[0], head_cache)

eps = 1e-6
w = head.W.value
old = w[2, 1]
w[2, 1] = old + eps
up = nn.weighted_bce_loss(head.forward(h)[0][None], target[None])[0]
w[2, 1] = old - eps
down = nn.weighted_bce_loss(head.forward(h)[0][None], target[None])[0]
w[2, 1] = old
print(f"analytic dL/dW[2,1] = {head.W.grad[2, 1]:.8f}   numeric = {(up - down) / (2 * eps):.8f}")

# %% [markdown]
# Temporal convolutions turn frames into n-gram features.  A width-2 kernel
# with stride 2 reads frames (0,1), (2,3), ... so 9 frames give 4 outputs.

# %%
conv = nn.TemporalConv(2, 4, 5, stride=2, rng=rng)
print("bigram output shape:", conv.forward(rng.standard_normal((9, 4)))[0].shape)

# %% [markdown]
# LSTMs keep the last hidden state; the BiLSTM concatenates both directions.

# %%
lstm = nn.BiLSTM(4, 6, rng)
print("BiLSTM summary vector:", lstm.forward(x)[0].shape)

# %% [markdown]
# Adam drives a single affine layer to fit a fixed batch.  The learning
# rate shrinks as lr0 / (1 + decay * epoch).

# %%
layer = nn.Affine(4, 3, rng)
X = rng.standard_normal((16, 4))
Y = (X @ rng.standard_normal((4, 3)) > 0).astype(int)
opt = nn.Adam(layer.params(), lr0=0.05)
for epoch in range(300):
    opt.epoch = epoch
    opt.zero_grad()
    out, cache = layer.forward(X)
    loss, g = nn.weighted_bce_loss(out, Y)
    layer.backward(g, cache)
    opt.step()
    if epoch % 100 == 0:
        print(f"epoch {epoch:3d}  loss {loss:.4f}")
print(f"final loss {loss:.4f}, lr now {nn.lr_schedule(0.05, 300):.5f}")
