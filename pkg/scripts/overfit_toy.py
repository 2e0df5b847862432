"""Fine-tune the toy encoder + FC + CRF on a synthetic corpus and report train F1."""

import argparse
import time

from ptner import synthetic
from ptner.corpus import build_vocab
from ptner.encoder import preset
from ptner.evaluator import evaluate, format_report
from ptner.trainer import TrainConfig, assemble_tagger, finetune, predict_tags


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sentences", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = synthetic.make_corpus(args.sentences, seed=1)
    vocab = build_vocab(data)
    model = assemble_tagger(preset("toy", vocab_size=len(vocab), max_position=64), synthetic.TAGSET, args.seed)
    cfg = TrainConfig(
        epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size, seed=args.seed, max_len=64
    )
    t0 = time.perf_counter()
    hist = finetune(model, data, cfg, vocab)
    for epoch, loss in enumerate(hist.epoch_losses):
        print(f"epoch {epoch:3d}  mean loss {loss:.4f}")
    model.eval()
    row = evaluate(data, [predict_tags(model, s.tokens, vocab) for s in data], name="toy (train)")
    print(f"\nvocab {len(vocab)}, {time.perf_counter() - t0:.1f}s\n")
    print(format_report([row]), end="")


if __name__ == "__main__":
    main()
