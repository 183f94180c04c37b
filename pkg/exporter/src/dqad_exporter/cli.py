"""`dqad-export --spec PATH --out DIR`: run the export pipeline."""

import argparse
import logging
import os
import sys

from .errors import ExportError, ExportSpecError, WeightsUnavailableError
from .export import ExportSpec, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dqad-export", description="Export backbone features")
    parser.add_argument("--spec", required=True, help="ExportSpec JSON")
    parser.add_argument("--out", required=True, help="output dataset directory")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    try:
        spec = ExportSpec.from_json_file(args.spec)
        entries = export(spec, args.out, base_dir=os.path.dirname(os.path.abspath(args.spec)))
    except ExportSpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except WeightsUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"export: wrote {len(entries)} files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
