"""
Experiment Configuration

This module defines the configuration of an experiment run and builds it from
command-line flags and an optional JSON config file.
"""

import argparse
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence

try:
    from loguru import logger
except ImportError:
    import logging

    logger = logging.getLogger(__name__)


EXPERIMENTS = (
    "verify-exact",
    "peel-hit",
    "peel-height",
    "csbp-extinction",
    "csbp-length",
    "perimeter-law",
    "occupation",
    "tail",
)
PEELING_EXPERIMENTS = ("peel-hit", "peel-height")
INIT_MODES = ("simple-edge", "loop")
START_PERIMETERS = {"simple-edge": 2, "loop": 1}
OUTPUT_ENV = "ANNULUS_LAB_OUTPUT"


class ConfigError(ValueError):
    """Invalid configuration; the message names the field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "results")


@dataclass
class ExperimentConfig:
    """
    Parameters of one experiment run. Every field is echoed into every report.

    Attributes
    ----------
    experiment:
        One of EXPERIMENTS.
    a, b, r:
        Outer perimeter, inner perimeter and hull radius.
    L_list:
        Scaling parameters of the peeling experiments.
    N:
        Replicates per check.
    dt, horizon:
        CSBP grid step and simulated time horizon.
    max_steps:
        Peeling step budget per exploration (None for no budget).
    seed:
        Master seed.
    output_dir:
        Root of the run directories.
    stride:
        Peeling steps between recorded trace rows (None for L^(3/2)/2048).
    n_jobs:
        Worker processes (None for every CPU).
    x_list:
        Starting values of the extinction-law check.
    u_grid:
        Thresholds of the tail check.
    bins:
        Chi-square bins of the perimeter-law check.
    init_mode:
        Initial state of the explorations.
    export_limit:
        Replicates exported as full traces or paths.
    capacity_factor:
        Kernel capacity of the height experiment, in units of L.
    """

    experiment: str
    a: float = 1.0
    b: float = 1.0
    r: float = 1.0
    L_list: List[int] = field(default_factory=lambda: [50, 100, 200, 400])
    N: int = 10_000
    dt: float = 1e-3
    horizon: float = 200.0
    max_steps: Optional[int] = None
    seed: int = 42
    output_dir: str = field(default_factory=default_output_dir)
    stride: Optional[int] = None
    n_jobs: Optional[int] = None
    x_list: List[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    u_grid: List[float] = field(default_factory=lambda: [10.0, 20.0])
    bins: int = 40
    init_mode: str = "simple-edge"
    export_limit: int = 10
    capacity_factor: float = 4.0

    def validate(self) -> "ExperimentConfig":
        """
        Check every field.

        Returns:
            ExperimentConfig: self, for chaining

        Raises:
            ConfigError: naming the first invalid field
        """
        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        for name in ("a", "b", "r", "dt", "horizon", "capacity_factor"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(name, f"must be a positive number, got {value!r}")
        for name in ("N", "bins"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(name, f"must be a positive integer, got {getattr(self, name)!r}")
        if self.bins < 5:
            raise ConfigError("bins", f"must be >= 5, got {self.bins}")
        for name in ("max_steps", "stride", "n_jobs"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value < 1):
                raise ConfigError(name, f"must be a positive integer or null, got {value!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed", f"must be a 64-bit nonnegative integer, got {self.seed!r}")
        if not isinstance(self.export_limit, int) or self.export_limit < 0:
            raise ConfigError("export_limit", f"must be >= 0, got {self.export_limit!r}")
        if self.init_mode not in INIT_MODES:
            raise ConfigError("init_mode", f"must be one of {', '.join(INIT_MODES)}")
        if not self.L_list or any(not isinstance(L, int) or L < 1 for L in self.L_list):
            raise ConfigError("L_list", f"must be a nonempty list of positive integers, got {self.L_list!r}")
        if self.experiment in PEELING_EXPERIMENTS:
            for L in self.L_list:
                if math.floor(self.a * L) < 1 or math.floor(self.b * L) < 1:
                    raise ConfigError("L_list", f"floor(a*L) and floor(b*L) must be >= 1 at L={L}")
                p0 = START_PERIMETERS[self.init_mode]
                if self.experiment == "peel-hit" and math.floor(self.b * L) < p0:
                    raise ConfigError(
                        "L_list", f"floor(b*L) must be >= the start perimeter {p0} of {self.init_mode} at L={L}"
                    )
        if not self.x_list or any(x <= 0 for x in self.x_list):
            raise ConfigError("x_list", f"must be a nonempty list of positive numbers, got {self.x_list!r}")
        if not self.u_grid or any(u <= 0 for u in self.u_grid) or sorted(self.u_grid) != list(self.u_grid):
            raise ConfigError("u_grid", f"must be increasing and positive, got {self.u_grid!r}")
        if not self.output_dir:
            raise ConfigError("output_dir", "must not be empty")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annulus_lab",
        description="Simulate peeling explorations and the stable CSBP, and check them "
        "against the closed-form annulus laws.",
        epilog="""
Example usage:
  python annulus_lab.py --experiment verify-exact
  python annulus_lab.py --experiment peel-hit --a 1 --b 1 --L 100,200 --N 10000 --seed 42
  python annulus_lab.py --config runs/length.json --N 100000
Flags override values from --config. The output root defaults to $ANNULUS_LAB_OUTPUT or ./results.
""",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="JSON file with configuration fields")
    parser.add_argument("--experiment", choices=EXPERIMENTS, help="Experiment to run")
    parser.add_argument("--a", type=float, help="Outer perimeter a")
    parser.add_argument("--b", type=float, help="Inner perimeter b")
    parser.add_argument("--r", type=float, help="Hull radius r")
    parser.add_argument("--L", dest="L_list", type=_int_list, help="Comma-separated scaling parameters")
    parser.add_argument("--N", type=int, help="Replicates per check")
    parser.add_argument("--dt", type=float, help="CSBP time step")
    parser.add_argument("--horizon", type=float, help="CSBP time horizon")
    parser.add_argument("--max-steps", dest="max_steps", type=int, help="Peeling step budget")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--output-dir", dest="output_dir", help="Root directory of run artifacts")
    parser.add_argument("--stride", type=int, help="Peeling steps between trace rows")
    parser.add_argument("--n-jobs", dest="n_jobs", type=int, help="Worker processes")
    parser.add_argument("--x-list", dest="x_list", type=_float_list, help="Starting values for csbp-extinction")
    parser.add_argument("--u-grid", dest="u_grid", type=_float_list, help="Thresholds for tail")
    parser.add_argument("--bins", type=int, help="Chi-square bins for perimeter-law")
    parser.add_argument("--init-mode", dest="init_mode", choices=INIT_MODES, help="Initial exploration state")
    parser.add_argument("--export-limit", dest="export_limit", type=int, help="Replicates exported in full")
    parser.add_argument("--capacity-factor", dest="capacity_factor", type=float, help="Kernel capacity / L for peel-height")
    return parser


def load_config_file(path: str) -> Dict[str, Any]:
    """
    Read a JSON config file.

    Raises:
        ConfigError: if the file is unreadable, not an object, or has unknown keys
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (json.JSONDecodeError, IOError, OSError) as e:
        raise ConfigError("config", f"cannot read {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path} must hold a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(unknown[0], f"unknown key in {path}")
    return data


def parse_config(argv: Optional[Sequence[str]] = None, config_file: Optional[str] = None) -> ExperimentConfig:
    """
    Build a validated configuration.

    Args:
        argv: Command-line arguments (sys.argv[1:] when None)
        config_file: JSON config file, used when --config is not given

    Returns:
        ExperimentConfig: file values overridden by flags

    Raises:
        SystemExit: on usage errors (argparse)
        ConfigError: on invalid values
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    values: Dict[str, Any] = {}
    path = args.config or config_file
    if path:
        values.update(load_config_file(path))
    values.update({k: v for k, v in vars(args).items() if k != "config" and v is not None})
    if "experiment" not in values:
        parser.error("--experiment is required (on the command line or in --config)")
    config = ExperimentConfig(**values).validate()
    logger.debug(f"Configuration: {config.to_dict()}")
    return config
