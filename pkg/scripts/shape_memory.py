"""Parameter count, float64 weight memory and peak RSS per encoder preset."""

import argparse
import resource
import time

from ptner.encoder import PRESETS, encode, init_params, num_parameters, preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("presets", nargs="*", default=sorted(PRESETS))
    ap.add_argument("--vocab-size", type=int, default=100)
    ap.add_argument("--max-position", type=int, default=128)
    ap.add_argument("--length", type=int, default=32, help="tokens in the probe forward pass")
    args = ap.parse_args()

    print(f"{'preset':<16} {'L':>3} {'H':>5} {'A':>3} {'params':>12} {'MiB':>7} {'fwd s':>7} {'peak RSS MiB':>13}")
    for name in args.presets:
        cfg = preset(name, vocab_size=args.vocab_size, max_position=args.max_position)
        enc = init_params(cfg, 0)
        n = num_parameters(enc)
        ids = [2] + [5 + i % (args.vocab_size - 5) for i in range(args.length - 2)] + [3]
        t0 = time.perf_counter()
        encode(enc, ids, [0] * len(ids), [1] * len(ids))
        dt = time.perf_counter() - t0
        rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024
        print(
            f"{name:<16} {cfg.num_layers:>3} {cfg.hidden_size:>5} {cfg.num_heads:>3} "
            f"{n:>12,} {8 * n / 2**20:>7.0f} {dt:>7.3f} {rss:>13.0f}"
        )
        del enc


if __name__ == "__main__":
    main()
