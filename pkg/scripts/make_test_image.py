#!/usr/bin/env python3
"""Write the 256x256 grayscale test image to data/camera.pgm.

Uses the scikit-image cameraman picture (2x2 mean downsample of the
512x512 original) when available, otherwise a deterministic synthetic
scene, so the repository works without optional dependencies.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from srsparse.imaging import standard_test_image, write_pgm


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/camera.pgm")
    args = parser.parse_args()
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    write_pgm(args.out, standard_test_image())
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
