"""
Annulus Lab

Simulation and verification lab for peeling by layers of Boltzmann
triangulations and for the 3/2-stable CSBP that describes their scaling limit.
This is the main entry point: it parses the configuration, runs one
experiment and exits 0 iff no report failed.
"""

import sys

from app.experiment_config import ConfigError, parse_config
from app.experiment_runner import ExperimentRunner


def main(argv=None) -> int:
    try:
        config = parse_config(argv)
    except ConfigError as e:
        print(f"annulus_lab: invalid configuration: {e}", file=sys.stderr)
        return 2
    return ExperimentRunner(config).run()


if __name__ == "__main__":
    sys.exit(main())
