"""Energy-aware kinematic design of closed-chain manipulators driven by electro-mechanical linear actuators."""

__version__ = "0.1.0"

from .closed_chain import ClosedChainParams, chain_state, inner_angles, k_coefficients  # noqa: E402
from .emla_drive import EmlaUnit, build_efficiency_map, lookup_efficiency, steady_state_operating_point  # noqa: E402
from .planar_dynamics import RobotModel, evaluate_dynamics, inverse_dynamics, tcp_pose  # noqa: E402
from .spline_traj import CollocationGrid, SplineBasis  # noqa: E402

__all__ = [
    "ClosedChainParams", "chain_state", "inner_angles", "k_coefficients",
    "EmlaUnit", "build_efficiency_map", "lookup_efficiency", "steady_state_operating_point",
    "RobotModel", "evaluate_dynamics", "inverse_dynamics", "tcp_pose",
    "CollocationGrid", "SplineBasis",
]
