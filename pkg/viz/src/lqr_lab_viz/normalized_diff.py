"""Steady-cost difference relative to the Gaussian runs."""

import sys

from ._cli import run


def main(argv=None) -> int:
    return run("normalized_diff", __doc__, argv)


if __name__ == "__main__":
    sys.exit(main())
