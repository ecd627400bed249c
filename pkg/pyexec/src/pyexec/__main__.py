"""Launch contract: `python -m pyexec <env-id> [--port P] [--path DIR ...]`.

Prints the base URL as the first stdout line and serves until /shutdown.
"""

import argparse
import sys

from .server import serve


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="pyexec", description="Python executor server")
    parser.add_argument("environment", help="environment identifier")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0)
    parser.add_argument("--path", action="append", default=[],
                        help="directory added to the function import path")
    args = parser.parse_args(argv)
    server = serve(args.environment, host=args.host, port=args.port, path=args.path)
    print(server.base_url, flush=True)
    try:
        server.serve_forever(poll_interval=0.05)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
