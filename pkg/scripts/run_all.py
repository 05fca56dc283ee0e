"""Run every CLI subcommand with one configuration, one output directory each.

    python3 scripts/run_all.py --config scripts/configs/quick.ini --out runs/quick
"""

import argparse
import time
from pathlib import Path

from tagdiff.cli import SUBCOMMANDS, main as cli_main


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, required=True)
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--only", nargs="*", choices=SUBCOMMANDS, default=SUBCOMMANDS)
    args = ap.parse_args()
    status = {}
    for name in args.only:
        t0 = time.perf_counter()
        try:
            code = cli_main([name, "--config", str(args.config), "--out", str(args.out / name),
                             "--jobs", str(args.jobs)])
        except SystemExit as exc:     # configuration errors raised by a subcommand
            print(exc)
            code = 2
        status[name] = (code, time.perf_counter() - t0)
    print()
    for name, (code, dt) in status.items():
        print(f"{name:18s} {'PASS' if code == 0 else 'FAIL'}  {dt:7.1f} s")


if __name__ == "__main__":
    main()
