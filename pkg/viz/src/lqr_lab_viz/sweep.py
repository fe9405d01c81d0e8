"""Steady-state cost versus a swept parameter, bands and unstable marks."""

import sys

from ._cli import run


def main(argv=None) -> int:
    return run("sweep", __doc__, argv)


if __name__ == "__main__":
    sys.exit(main())
