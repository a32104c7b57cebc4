import argparse
import logging
import sys

from .export import ExportError, ExportSpec, export_embeddings


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plm-export",
        description="Mean-pool a frozen encoder over a line-per-document corpus "
                    "and write the embedding binary.",
    )
    parser.add_argument("--texts", required=True,
                        help="corpus file, one document per line")
    parser.add_argument("--encoder", required=True,
                        help="model name or local checkpoint directory")
    parser.add_argument("--out", required=True, help="output .gemb path")
    parser.add_argument("--pooling", choices=("mean", "cls"), default="mean")
    parser.add_argument("--max-tokens", type=int, default=128)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = ExportSpec(
            texts=args.texts,
            encoder=args.encoder,
            out=args.out,
            pooling=args.pooling,
            max_tokens=args.max_tokens,
            batch_size=args.batch_size,
        )
        sidecar = export_embeddings(spec)
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"export: {sidecar['rows']} x {sidecar['dim']} "
          f"({sidecar['pooling']} pooling) -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
