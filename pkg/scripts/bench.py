"""Render the 128^3 benchmark phantom and time detection across worker counts.

Thin wrapper around ``salseek bench``; the JSON table goes to --out or stdout.
"""

import argparse
import tempfile
from pathlib import Path

from salseek.cli import main as cli
from salseek.phantoms import bench_spec
from salseek.volume import make_phantom, save_volume


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workers", default="1,2,4")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--methods", default="shift,abmsod")
    ap.add_argument("--out")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "bench.mhd"
        v, _ = make_phantom(bench_spec())
        save_volume(v, path)
        argv = ["bench", "--volume", str(path), "--window", "0:64", "--bins", "64",
                "--seeds", "lattice:16,12,25", "--scales", "8", "--methods", args.methods,
                "--worker-counts", args.workers, "--repeat", str(args.repeat)]
        if args.out:
            argv += ["--out", args.out]
        return cli(argv)


if __name__ == "__main__":
    raise SystemExit(main())
