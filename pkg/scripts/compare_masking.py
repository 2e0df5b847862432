"""Pre-train the toy encoder with each masking strategy, then fine-tune on NER.

Prints held-out MLM loss after pre-training and dev F1 after fine-tuning,
one row per strategy plus a no-pre-training row.  At this scale the
differences are noise-level; the point is that the three pipelines run
end to end on identical data and seeds.
"""

import argparse

from ptner import synthetic
from ptner.corpus import build_vocab
from ptner.encoder import init_params, preset
from ptner.evaluator import evaluate, format_report
from ptner.pretrain import SpanLexicon
from ptner.seeding import derive_seed
from ptner.trainer import (
    PretrainHeads,
    TrainConfig,
    assemble_tagger,
    build_mlm_examples,
    finetune,
    predict_tags,
    pretrain,
    pretrain_step,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pretrain-epochs", type=int, default=20)
    ap.add_argument("--finetune-epochs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    corpus = synthetic.make_corpus(400, seed=2)
    raw, train, dev = corpus[:200], corpus[200:300], corpus[300:]
    vocab = build_vocab(corpus)
    config = preset("toy", vocab_size=len(vocab), max_position=64)
    lexicon = SpanLexicon(synthetic.lexicon_entries(raw))
    sentences = [s.tokens for s in raw]
    probe = build_mlm_examples(sentences[:50], vocab, strategy="dynamic", epoch=1000, seed=7)

    rows = []
    for strategy in (None, "static", "dynamic", "span"):
        encoder = init_params(config, derive_seed(args.seed, "init", 0))
        label = "no pre-training"
        if strategy is not None:
            heads = PretrainHeads(config, args.seed)
            cfg = TrainConfig(epochs=args.pretrain_epochs, learning_rate=1e-3, batch_size=32,
                              seed=args.seed, objective="mlm", max_len=64)  # fmt: skip
            pretrain(encoder, heads, vocab, [sentences], cfg, strategy=strategy, lexicon=lexicon)
            probe_loss = pretrain_step(encoder, heads, probe, "mlm").mlm
            label = f"{strategy} (mlm {probe_loss:.3f})"
        model = assemble_tagger(config, synthetic.TAGSET, args.seed)
        model.encoder.load_state_dict(encoder.state_dict())
        ft = TrainConfig(epochs=args.finetune_epochs, learning_rate=1e-3, seed=args.seed, max_len=64)
        finetune(model, train, ft, vocab)
        model.eval()
        rows.append(evaluate(dev, [predict_tags(model, s.tokens, vocab) for s in dev], name=label))
    print(format_report(rows), end="")


if __name__ == "__main__":
    main()
