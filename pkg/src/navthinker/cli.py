"""``navthinker <command> --config <path> [--out <dir>] [--seed <u64>]``.

Exit codes: 0 success, 2 configuration error (including an existing run
directory), 3 missing prerequisite file.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .harness import COMMANDS, PrerequisiteError, RunDirExistsError, make_run_dir

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="navthinker", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="run directory (default: <out_dir>/<command>-<timestamp>-seed<seed>)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.replace(seed=args.seed)
        run_dir = make_run_dir(cfg, args.command, args.out)
    except (ConfigError, RunDirExistsError) as e:
        print(f"navthinker: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg, run_dir)
    except PrerequisiteError as e:
        # nothing was produced; drop the metadata-only run directory so a rerun can reuse it
        for name in ("config.json", "run.json"):
            (run_dir / name).unlink(missing_ok=True)
        if not any(run_dir.iterdir()):
            run_dir.rmdir()
        print(f"navthinker: {e}", file=sys.stderr)
        return EXIT_PREREQ
    print(run_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
