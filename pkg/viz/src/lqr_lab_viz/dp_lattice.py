"""Budget-lattice diagram with feasible and infeasible transitions."""

import sys

from ._cli import run


def main(argv=None) -> int:
    return run("dp_lattice", __doc__, argv)


if __name__ == "__main__":
    sys.exit(main())
