"""CLI for the activation extractor."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractionConfig, ExtractionError, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actsc-extract",
        description="Capture last-token FFN activations into an activation-dump JSONL.",
    )
    parser.add_argument("--model", required=True, help="model id or local path")
    parser.add_argument("--layer", default="last", help="'last', 'all', or a 0-based block index")
    parser.add_argument("--prompts", required=True, help="JSONL: problem_id, question, difficulty?, gold_answer?")
    parser.add_argument("--out", required=True, help="output dump path (JSONL)")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--name", default="", help="dataset name for the manifest")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = ExtractionConfig(
        model_id=args.model,
        prompt_file=args.prompts,
        output=args.out,
        layer_selector=args.layer,
        batch_size=args.batch_size,
        device=args.device,
        dataset_name=args.name,
    )
    try:
        summary = extract(config)
    except ExtractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"wrote {summary['records']} records x {summary['neuron_count']} neurons "
        f"(blocks {summary['layers']}) -> {summary['output']}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
