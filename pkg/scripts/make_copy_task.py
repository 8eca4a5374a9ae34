#!/usr/bin/env python3
"""Generate a synthetic copy-task parallel corpus: target == source over a
small word vocabulary. Used by the acceptance suite and the demo configs."""

import argparse
from pathlib import Path

WORDS = [
    "ka", "ro", "mi", "ta", "su", "ne", "lo", "vi", "pa", "du",
    "fe", "go", "hi", "ju", "ke", "la", "mo", "nu", "pe", "ra",
]


def splitmix64(state: int):
    mask = (1 << 64) - 1
    state = (state + 0x9E3779B97F4A7C15) & mask
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return state, z ^ (z >> 31)


def make_sentences(n_pairs: int, seed: int, min_len: int = 3, max_len: int = 8):
    state = seed
    sentences = []
    for _ in range(n_pairs):
        state, z = splitmix64(state)
        length = min_len + z % (max_len - min_len + 1)
        words = []
        for _ in range(length):
            state, z = splitmix64(state)
            words.append(WORDS[z % len(WORDS)])
        sentences.append(" ".join(words))
    return sentences


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", default="copy_task", help="output path prefix")
    args = parser.parse_args()
    sentences = make_sentences(args.pairs, args.seed)
    src = Path(f"{args.out}.src")
    tgt = Path(f"{args.out}.tgt")
    src.write_text("".join(s + "\n" for s in sentences), encoding="utf-8")
    tgt.write_text("".join(s + "\n" for s in sentences), encoding="utf-8")
    print(f"wrote {args.pairs} pairs to {src} and {tgt}")


if __name__ == "__main__":
    main()
