"""Recompute the Richardson-extrapolated kappa reference (d = 2, beta = 1).

Prints the per-grid values and the extrapolation.  With --write, the frozen
constant KAPPA_REF_D2 in tagdiff/boltzmann.py is replaced in place.
"""

import argparse
import re
from pathlib import Path

from tagdiff import boltzmann
from tagdiff.boltzmann import richardson_kappa


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs=3, default=(15, 20, 25))
    ap.add_argument("--write", action="store_true", help="update the constant in boltzmann.py")
    args = ap.parse_args()
    kappa, runs = richardson_kappa(1.0, 2, tuple(args.sizes))
    for r in runs:
        print(f"n={r.grid_n:3d}  v_max={r.v_max:g}  kappa={r.kappa:.12f}  "
              f"sym_defect={r.sym_defect:.3g}  |<b>|={r.residual_mean:.2e}")
    print(f"Richardson kappa = {kappa!r}  (frozen: {boltzmann.KAPPA_REF_D2!r})")
    if args.write:
        path = Path(boltzmann.__file__)
        text = re.sub(r"^KAPPA_REF_D2 = .*$", f"KAPPA_REF_D2 = {kappa!r}", path.read_text(),
                      flags=re.M)
        path.write_text(text)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
