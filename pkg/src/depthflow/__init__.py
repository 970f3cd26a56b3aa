"""Depth trajectories of layered networks analysed as discrete-time dynamical systems."""
from .errors import DataError, DepthflowError, NumericalError
from .partition import Partition
from .trajectory import TokenRole, Trajectory, read_trajectory, write_trajectory

__version__ = "0.1.0"

__all__ = ["DataError", "DepthflowError", "NumericalError", "Partition", "TokenRole",
           "Trajectory", "read_trajectory", "write_trajectory", "__version__"]
