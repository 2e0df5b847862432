"""Write a synthetic PER/LOC project (corpora, raw text, lexicon, run.toml) to a directory."""

import argparse
from pathlib import Path

from ptner import synthetic
from ptner.corpus import format_column_file

CONFIG = """seed = 0

[tagset]
entity_types = ["PER", "LOC"]

[paths]
train = "train.txt"
dev = "dev.txt"
test = "test.txt"
lexicon = "lexicon.txt"
pretrain = "docs.txt"
checkpoint_dir = "out"

[encoder]
preset = "toy"
max_position = 64

[train]
epochs = 30
learning_rate = 1e-3
max_len = 64

[pretrain]
strategy = "dynamic"
epochs = 20
learning_rate = 1e-3
batch_size = 32
max_len = 64
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    corpus = synthetic.make_corpus(600, seed=args.seed)
    train, dev, test, raw = corpus[:200], corpus[200:250], corpus[250:300], corpus[300:]
    for name, part in (("train", train), ("dev", dev), ("test", test)):
        (out / f"{name}.txt").write_text(format_column_file(part), encoding="utf-8")
    # raw pre-training text: documents of 10 sentences, blank line between
    docs = ["\n".join("".join(s.tokens) for s in raw[i : i + 10]) for i in range(0, len(raw), 10)]
    (out / "docs.txt").write_text("\n\n".join(docs) + "\n", encoding="utf-8")
    (out / "sentences.txt").write_text("\n".join("".join(s.tokens) for s in test) + "\n", encoding="utf-8")
    (out / "lexicon.txt").write_text("\n".join(synthetic.lexicon_entries(raw)) + "\n", encoding="utf-8")
    (out / "run.toml").write_text(CONFIG, encoding="utf-8")
    print(f"wrote {out}/{{train,dev,test,docs,sentences,lexicon}}.txt and run.toml")


if __name__ == "__main__":
    main()
