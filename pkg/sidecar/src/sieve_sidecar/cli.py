"""Command line entry: load models, serve the wire protocol."""

from __future__ import annotations

import argparse
import sys

from .config import CAPTIONER_REGISTRY, DEFAULT_ENCODER, SidecarConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sieve-sidecar",
        description="Serve caption generation and sentence embedding over HTTP.",
    )
    parser.add_argument("--captioner", choices=sorted(CAPTIONER_REGISTRY), default="blip14m")
    parser.add_argument("--encoder", default=DEFAULT_ENCODER, help="hub id of the encoder")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--max-batch", type=int, default=64)
    parser.add_argument(
        "--allow-url-fetch",
        action="store_true",
        help="resolve http(s) image refs by fetching them (off by default)",
    )
    parser.add_argument(
        "--non-deterministic",
        action="store_true",
        help="advertise deterministic: false in /info (stacks without reproducible sampling)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = SidecarConfig(
            captioner_id=args.captioner,
            encoder_id=args.encoder,
            device=args.device,
            max_batch=args.max_batch,
            host=args.host,
            port=args.port,
            allow_url_fetch=args.allow_url_fetch,
            deterministic=not args.non_deterministic,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    from .models import load_captioner, load_encoder

    try:
        captioner = load_captioner(config.captioner_id, device=config.device)
        encoder = load_encoder(config.encoder_id, device=config.device)
    except Exception as exc:
        print(f"error: cannot load models: {exc}", file=sys.stderr)
        return 1

    from .app import create_app

    import uvicorn

    uvicorn.run(create_app(captioner, encoder, config), host=config.host, port=config.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
