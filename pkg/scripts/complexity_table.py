#!/usr/bin/env python3
"""Print attention cost for the resolution schedule and every preset.

    python scripts/complexity_table.py [--dim 1152] [--out DIR]
"""

import argparse
import sys

from ptdit.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", default="1152")
    ap.add_argument("--out")
    args = ap.parse_args()
    argv = ["analyze", "--dim", args.dim, "--presets", "s_class,b,l,xl,h"]
    if args.out:
        argv += ["--out", args.out]
    sys.exit(main(argv))
