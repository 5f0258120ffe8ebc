"""Command line: corpus paths in, one NLAEMB1 embedding file out."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import DEFAULT_MODEL, __version__
from .corpus import CorpusError
from .export import ExportManifest, export_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plm-export",
        description="Embed every text key of a corpus with a frozen language model.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--corpus-config",
                        help="JSON file with ehr/vocab_* paths (as written by the "
                             "corpus generator)")
    parser.add_argument("--ehr")
    parser.add_argument("--vocab-diagnosis")
    parser.add_argument("--vocab-procedure")
    parser.add_argument("--vocab-symptom")
    parser.add_argument("--vocab-medication")
    parser.add_argument("--model", default=DEFAULT_MODEL,
                        help=f"model id or local path (default: {DEFAULT_MODEL})")
    parser.add_argument("--out", required=True, help="output NLAEMB1 path")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--max-length", type=int, default=None)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)

    paths = {}
    if args.corpus_config:
        paths = json.loads(Path(args.corpus_config).read_text(encoding="utf-8"))
    ehr = args.ehr or paths.get("ehr")
    vocab_paths = {
        kind: getattr(args, f"vocab_{kind}") or paths.get(f"vocab_{kind}")
        for kind in ("diagnosis", "procedure", "symptom", "medication")
    }
    missing = [k for k, v in {"ehr": ehr, **vocab_paths}.items() if not v]
    if missing:
        print(f"error: missing corpus path(s): {', '.join(missing)}", file=sys.stderr)
        return 2

    manifest = ExportManifest(model_id=args.model, batch_size=args.batch_size,
                              max_length=args.max_length, device=args.device)
    try:
        manifest = export_embeddings(ehr, vocab_paths, args.out, manifest)
    except CorpusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"exported {len(manifest.keys)} embeddings -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
