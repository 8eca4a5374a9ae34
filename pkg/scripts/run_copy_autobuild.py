#!/usr/bin/env python3
"""End-to-end demo: generate a copy-task corpus, write a run config, and
AutoBuild a small Transformer on it. Finishes in about a minute on a laptop
CPU and leaves a full run directory (checkpoints, translations, evaluation,
green report, plots) under --workdir."""

import argparse
from pathlib import Path

import yaml

from make_copy_task import make_sentences
from nmtbench.orchestrator import RunConfig, autobuild


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="copy_demo")
    parser.add_argument("--pairs", type=int, default=2000)
    parser.add_argument("--kind", choices=["transformer", "rnn"], default="transformer")
    parser.add_argument("--steps", type=int, default=400)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    sentences = make_sentences(args.pairs, seed=7)
    (workdir / "copy.src").write_text("".join(s + "\n" for s in sentences), encoding="utf-8")
    (workdir / "copy.tgt").write_text("".join(s + "\n" for s in sentences), encoding="utf-8")

    config_dict = {
        "run_name": f"copy-{args.kind}",
        "output_root": str(workdir / "runs"),
        "data": {
            "source_path": str(workdir / "copy.src"),
            "target_path": str(workdir / "copy.tgt"),
        },
        "split": {"train_ratio": 0.8, "valid_ratio": 0.1, "test_ratio": 0.1, "seed": 5},
        "subword": {"kind": "bpe", "source_vocab_size": 64, "target_vocab_size": 64},
        "architecture": {
            "kind": args.kind,
            "layer_count": 2 if args.kind == "transformer" else 1,
            "model_width": 64,
            "head_count": 4,
            "feedforward_width": 128,
            "dropout_rate": 0.1,
            "max_sequence_length": 32,
        },
        "hyperparameters": {
            "optimizer": "adaptive-moment",
            "learning_rate": 0.05 if args.kind == "transformer" else 0.003,
            "warmup_steps": 100,
            "batch_tokens": 384,
            "max_steps": args.steps,
            "validation_interval": 50,
            "checkpoint_interval": 200,
            "label_smoothing": 0.1,
            "seed": args.seed,
            "patience": 20,
        },
        "decode": {"beam_size": 4, "alpha": 0.6, "max_len": 24},
    }
    config_path = workdir / "run.yaml"
    config_path.write_text(yaml.safe_dump(config_dict), encoding="utf-8")
    print(f"config written to {config_path}")

    config = RunConfig.from_dict(config_dict)
    manifest = autobuild(config, config_bytes=config_path.read_bytes())
    print("stages:", {k: v["status"] for k, v in manifest.stages.items()})
    run_dir = workdir / "runs" / config.run_name
    print(f"results: {run_dir / 'reports' / 'results.txt'}")
    print(f"green report: {run_dir / 'reports' / 'green.txt'}")


if __name__ == "__main__":
    main()
