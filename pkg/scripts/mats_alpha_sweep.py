"""MATS of seeded random encoders as the gate moves from pure attention output to raw embeddings."""

import argparse

import numpy as np

from posbias import probe, synthetic, tkmodel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--passages", type=int, default=500)
    ap.add_argument("--length", type=int, default=60)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-delta", type=int, default=20)
    args = ap.parse_args()
    sc = synthetic.generate(args.passages, 1, args.length, filler_vocab=200, seed=args.seed)
    vocab = {t for p in sc.collection for t in p.tokens}
    table = tkmodel.random_table(vocab, 32, args.seed + 3)
    base = tkmodel.init_params(tkmodel.EncoderConfig(d=32, n_layers=2, n_heads=4, head_size=8, ff_dim=64), args.seed + 7)
    print("alpha  mats      stddev    ats0      ats1..max")
    for alpha in args.alphas:
        params = base.with_alpha(alpha)
        dump = probe.VectorDump.from_sequences(tkmodel.encode_passages(sc.collection, table, params))
        index = probe.build_term_index(dump, seed=args.seed)
        rep = probe.mats(index, args.max_delta)
        tail = np.mean([r.mean for r in rep.rows if 1 <= r.delta <= args.max_delta])
        print(f"{alpha:<6} {rep.mats:<9.5f} {rep.mats_stddev:<9.5f} {rep.row(0).mean:<9.5f} {tail:.5f}")


if __name__ == "__main__":
    main()
