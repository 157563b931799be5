"""Average precision in three flavours.

Macro mAP averages per-class AP, micro AP pools every (sample, class) pair,
and sample AP ranks the classes of each sample.  Ties keep the original
sample order.
"""

# %%
import numpy as np

from mmgenre import metrics

scores = np.array([[0.9, 0.1, 0.4],
                   [0.8, 0.7, 0.2],
                   [0.3, 0.6, 0.9],
                   [0.2, 0.2, 0.1]])
labels = np.array([[1, 0, 0],
                   [0, 1, 0],
                   [1, 0, 1],
                   [0, 1, 0]])

print("per-class AP:", metrics.per_class_ap(scores, labels).round(4))
print(f"mAP {metrics.macro_map(scores, labels):.4f}   "
      f"micro {metrics.micro_ap(scores, labels):.4f}   "
      f"sample {metrics.sample_ap(scores, labels):.4f}")

# %% [markdown]
# Ranking every sample by training prevalence is a useful floor: its AP
# is roughly the class prevalence.

# %%
rng = np.random.default_rng(6)
train = (rng.random((5000, 2)) < [0.2, 0.5]).astype(int)
test = (rng.random((5000, 2)) < [0.2, 0.5]).astype(int)
base = metrics.prevalence_baseline(train, 5000, seed=1)
print("baseline AP per class:", metrics.per_class_ap(base, test).round(3))

# %% [markdown]
# Reports print as percentage tables.

# %%
report = metrics.evaluate(scores, labels, ["drama", "comedy", "horror"])
print(report.to_table("toy"))
