import argparse
import asyncio
import logging
import os
import sys

# Ensure project root is on sys.path when executed as a script (python app/main.py)
ROOT_DIR = os.path.dirname(os.path.dirname(__file__))
if ROOT_DIR not in sys.path:
    sys.path.insert(0, ROOT_DIR)


def main(argv: list[str] | None = None) -> int:
    from rich.console import Console
    from rich.logging import RichHandler

    from app.commands import console, register_commands
    from app.errors import PosePredictionError
    from app.settings import settings

    parser = argparse.ArgumentParser(prog="bench", description="ESDF pose prediction benchmark")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    handlers = register_commands(parser)
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else settings.log_level,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
    )
    try:
        return asyncio.run(handlers[args.command](args))
    except PosePredictionError as e:
        console.print(f"❌ {type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
