#!/usr/bin/env python3
"""Run every bundled experiment config through the CLI.

Artifacts land in runs/<config-name>/ next to this script (override with
--out-root).  Exits nonzero if any experiment's invariant checks fail.
"""

import argparse
import sys
from pathlib import Path

from stochburgers.cli import main as cli_main

HERE = Path(__file__).resolve().parent


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-root", default=str(HERE / "runs"))
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--only", default=None, help="substring filter on config names")
    args = parser.parse_args(argv)

    failures = []
    for config in sorted((HERE / "configs").glob("*.toml")):
        if args.only and args.only not in config.stem:
            continue
        out_dir = Path(args.out_root) / config.stem
        cli_args = ["run", "--config", str(config), "--out", str(out_dir)]
        if args.workers is not None:
            cli_args += ["--workers", str(args.workers)]
        print(f"== {config.stem} -> {out_dir}")
        code = cli_main(cli_args)
        manifest = out_dir / "manifest.txt"
        if manifest.exists():
            for line in manifest.read_text().splitlines():
                if line.startswith(("result.", "check.")):
                    print(f"   {line}")
        if code != 0:
            failures.append((config.stem, code))
    if failures:
        print("failed:", ", ".join(f"{name} (exit {code})" for name, code in failures))
        return 1
    print("all experiments passed their checks")
    return 0


if __name__ == "__main__":
    sys.exit(run())
