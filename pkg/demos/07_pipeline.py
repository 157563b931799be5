"""The batch pipeline on a generated toy dataset.

The same steps are available from a shell as ``mmgenre train``,
``mmgenre fuse`` and ``mmgenre eval``.
"""

# %%
import tempfile
from pathlib import Path

from mmgenre import cli, synthetic

root = Path(tempfile.mkdtemp(prefix="mmgenre-demo-"))
manifest = synthetic.write_toy_dataset(root, n=200, seed=0, text_dim=32)
print("dataset at", root)

# %%
for modality, extra in (("text", []), ("video", ["--ngram", "bigram"])):
    cli.main(["train", "--manifest", str(manifest), "--out", str(root / modality),
              "--modality", modality, "--epochs", "30", "--lr", "0.01", *extra])

# %%
cli.main(["fuse", "--scores", f"text={root / 'text'}", "--scores", f"video={root / 'video'}",
          "--manifest", str(manifest), "--out", str(root / "fused")])

# %%
for name in ("text", "video", "fused"):
    cli.main(["eval", "--scores", str(root / name / "scores_test.tsv"),
              "--manifest", str(manifest), "--label", name])
