"""Compare the compiled kernels with the numpy fallback.

Usage: python benchmarks/bench_kernels.py [n] [k ...]
"""

import sys

from specpool import bench


def main(argv):
    n = int(argv[0]) if argv else 256
    ks = tuple(int(a) for a in argv[1:]) or (8, 32)
    sys.stdout.write(bench.format_rows(bench.run(n=n, ks=ks)))


if __name__ == "__main__":
    main(sys.argv[1:])
