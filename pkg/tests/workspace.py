"""Builds a small on-disk project (corpus files + TOML) for CLI runs."""

from pathlib import Path

from ptner import synthetic
from ptner.corpus import format_column_file


def make_project(root: Path, *, n_train=40, n_dev=10, epochs=3, seed=0, lr=1e-3) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    corpus = synthetic.make_corpus(n_train + n_dev, seed=seed)
    (root / "train.txt").write_text(format_column_file(corpus[:n_train]), encoding="utf-8")
    (root / "dev.txt").write_text(format_column_file(corpus[n_train:]), encoding="utf-8")
    (root / "raw.txt").write_text(
        "\n".join("".join(s.tokens) for s in corpus[n_train:]) + "\n", encoding="utf-8"
    )
    (root / "docs.txt").write_text(
        "\n".join("".join(s.tokens) for s in corpus[:5])
        + "\n\n"
        + "\n".join("".join(s.tokens) for s in corpus[5:10])
        + "\n",
        encoding="utf-8",
    )
    (root / "lexicon.txt").write_text("\n".join(synthetic.lexicon_entries(corpus)) + "\n", encoding="utf-8")
    config = root / "run.toml"
    config.write_text(
        f"""seed = {seed}

[tagset]
entity_types = ["PER", "LOC"]

[paths]
train = "train.txt"
dev = "dev.txt"
lexicon = "lexicon.txt"
pretrain = "docs.txt"
checkpoint_dir = "out"

[encoder]
preset = "toy"
max_position = 64

[train]
epochs = {epochs}
learning_rate = {lr}
batch_size = 8
max_len = 64

[pretrain]
epochs = 2
learning_rate = {lr}
batch_size = 5
max_len = 64
""",
        encoding="utf-8",
    )
    return config
