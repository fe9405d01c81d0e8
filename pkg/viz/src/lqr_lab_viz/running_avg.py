"""Running-average cost curves with confidence bands."""

import sys

from ._cli import run


def main(argv=None) -> int:
    return run("running_avg", __doc__, argv)


if __name__ == "__main__":
    sys.exit(main())
