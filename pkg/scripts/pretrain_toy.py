"""Toy MLM run: 50 full-batch steps on 20 sentences, loss vs the uniform baseline."""

import argparse
import math

from ptner import synthetic
from ptner.corpus import build_vocab
from ptner.encoder import init_params, preset
from ptner.trainer import PretrainHeads, TrainConfig, build_mlm_examples, pretrain, pretrain_step


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--lr", type=float, default=5e-3)
    ap.add_argument("--strategy", choices=("static", "dynamic"), default="dynamic")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    corpus = synthetic.make_corpus(20, seed=3)
    vocab = build_vocab(corpus)
    sentences = [s.tokens for s in corpus]
    config = preset("toy", vocab_size=len(vocab), max_position=64)
    encoder, heads = init_params(config, args.seed), PretrainHeads(config, args.seed)
    held_out = [
        ex for epoch in range(100, 110)
        for ex in build_mlm_examples(sentences, vocab, strategy="dynamic", epoch=epoch, seed=99)
    ]  # fmt: skip

    uniform = math.log(len(vocab))
    print(f"vocab {len(vocab)}, uniform baseline log V = {uniform:.4f}")
    print(f"held-out mlm before: {pretrain_step(encoder, heads, held_out, 'mlm').mlm:.4f}")
    # one full batch per epoch, so epochs == steps
    cfg = TrainConfig(epochs=args.steps, learning_rate=args.lr, batch_size=len(sentences),
                      seed=args.seed, objective="mlm", max_len=64)  # fmt: skip
    hist = pretrain(encoder, heads, vocab, [sentences], cfg, strategy=args.strategy)
    for step in range(0, len(hist.step_losses), 10):
        print(f"step {step:3d}  train mlm {hist.step_losses[step]:.4f}")
    after = pretrain_step(encoder, heads, held_out, "mlm").mlm
    print(f"held-out mlm after:  {after:.4f}  ({100 * (1 - after / uniform):.1f}% below log V)")
    print(f"nsp losses recorded: {len(hist.step_nsp_losses)}")


if __name__ == "__main__":
    main()
